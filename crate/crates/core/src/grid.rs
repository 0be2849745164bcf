//! Uniform periodic grids on the unit cube `[0,1)^n` and the Fourier spectral
//! calculus built on them.
//!
//! Fields are stored row-major with the last axis fastest. All derivatives are
//! computed in Fourier space. The Nyquist mode of an axis (present because every
//! resolution is even) is dropped by odd-order derivatives along that axis and kept
//! by even-order ones, which keeps every derivative operator real and symmetric.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Smallest accepted per-axis resolution.
pub const MIN_RESOLUTION: usize = 8;

const TWO_PI: f64 = 2.0 * PI;

struct AxisPlan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

struct GridInner {
    shape: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
    plans: Vec<AxisPlan>,
}

/// Uniform tensor grid on the fundamental domain `[0,1]^n` with wraparound indexing.
///
/// Cloning is cheap; FFT plans are shared between clones.
#[derive(Clone)]
pub struct PeriodicGrid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for PeriodicGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicGrid")
            .field("shape", &self.inner.shape)
            .finish()
    }
}

impl PartialEq for PeriodicGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner) || self.inner.shape == other.inner.shape
    }
}

impl Eq for PeriodicGrid {}

impl PeriodicGrid {
    /// Builds a grid with `resolution[k]` nodes along axis `k`.
    ///
    /// Every resolution must be even and at least [`MIN_RESOLUTION`].
    pub fn new(dim: usize, resolution: &[usize]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidGrid("dimension must be at least 1".into()));
        }
        if resolution.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} resolutions, got {}",
                resolution.len()
            )));
        }
        for (axis, &n) in resolution.iter().enumerate() {
            if n % 2 != 0 {
                return Err(Error::InvalidGrid(format!(
                    "odd resolution {n} on axis {axis}"
                )));
            }
            if n < MIN_RESOLUTION {
                return Err(Error::InvalidGrid(format!(
                    "resolution {n} on axis {axis} is below the minimum {MIN_RESOLUTION}"
                )));
            }
        }
        let len = resolution
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| Error::InvalidGrid("node count overflows".into()))?;

        let mut strides = vec![1usize; dim];
        for axis in (0..dim.saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * resolution[axis + 1];
        }
        let mut planner = FftPlanner::new();
        let plans = resolution
            .iter()
            .map(|&n| AxisPlan {
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
            .collect();
        Ok(Self {
            inner: Arc::new(GridInner {
                shape: resolution.to_vec(),
                strides,
                len,
                plans,
            }),
        })
    }

    /// Grid with the same resolution `n` on every axis.
    pub fn uniform(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.inner.len
    }

    pub fn is_empty(&self) -> bool {
        self.inner.len == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        1.0 / self.inner.shape[axis] as f64
    }

    pub fn strides(&self) -> &[usize] {
        &self.inner.strides
    }

    /// Flat index of a (possibly out-of-range) multi-index, wrapping modulo the
    /// resolution on each axis.
    pub fn wrap_index(&self, multi: &[i64]) -> usize {
        multi
            .iter()
            .zip(self.shape())
            .zip(self.strides())
            .map(|((&k, &n), &s)| (k.rem_euclid(n as i64) as usize) * s)
            .sum()
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        self.shape()
            .iter()
            .zip(self.strides())
            .map(|(&n, &s)| (flat / s) % n)
            .collect()
    }

    /// Coordinates `k/N` of a node.
    pub fn coordinates(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(self.shape())
            .map(|(&k, &n)| k as f64 / n as f64)
            .collect()
    }

    /// Signed wavenumber of DFT index `k` on `axis`; the Nyquist index maps to `+N/2`.
    pub fn wavenumber(&self, axis: usize, k: usize) -> i64 {
        let n = self.inner.shape[axis];
        if k <= n / 2 {
            k as i64
        } else {
            k as i64 - n as i64
        }
    }

    pub fn is_nyquist(&self, axis: usize, k: usize) -> bool {
        k == self.inner.shape[axis] / 2
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        debug_assert_eq!(data.len(), self.len());
        let len = self.len();
        for axis in 0..self.dim() {
            let n = self.inner.shape[axis];
            let stride = self.inner.strides[axis];
            let plan = &self.inner.plans[axis];
            let fft = if inverse { &plan.inverse } else { &plan.forward };
            let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
            if stride == 1 {
                for line in data.chunks_exact_mut(n) {
                    fft.process_with_scratch(line, &mut scratch);
                }
            } else {
                let mut line = vec![Complex64::default(); n];
                let block = n * stride;
                for outer in (0..len).step_by(block) {
                    for inner in 0..stride {
                        let base = outer + inner;
                        for (k, slot) in line.iter_mut().enumerate() {
                            *slot = data[base + k * stride];
                        }
                        fft.process_with_scratch(&mut line, &mut scratch);
                        for (k, value) in line.iter().enumerate() {
                            data[base + k * stride] = *value;
                        }
                    }
                }
            }
        }
    }

    /// Per-axis multipliers of the derivative of order `order`:
    /// `(2*pi*i*kappa)^order`, zero on the Nyquist index when `order` is odd.
    fn derivative_factors(&self, axis: usize, order: usize) -> Vec<Complex64> {
        let n = self.inner.shape[axis];
        (0..n)
            .map(|k| {
                if order == 0 {
                    return Complex64::new(1.0, 0.0);
                }
                if order % 2 == 1 && self.is_nyquist(axis, k) {
                    return Complex64::new(0.0, 0.0);
                }
                let kappa = self.wavenumber(axis, k) as f64;
                Complex64::new(0.0, TWO_PI * kappa).powu(order as u32)
            })
            .collect()
    }

    /// Full multiplier table for a multi-index of derivative orders.
    fn symbol(&self, orders: &[usize]) -> Vec<Complex64> {
        assert_eq!(orders.len(), self.dim(), "derivative orders must match grid dimension");
        let factors: Vec<Vec<Complex64>> = orders
            .iter()
            .enumerate()
            .map(|(axis, &m)| self.derivative_factors(axis, m))
            .collect();
        let mut out = vec![Complex64::new(1.0, 0.0); self.len()];
        for (flat, slot) in out.iter_mut().enumerate() {
            let mut value = Complex64::new(1.0, 0.0);
            for (axis, f) in factors.iter().enumerate() {
                let k = (flat / self.inner.strides[axis]) % self.inner.shape[axis];
                value *= f[k];
            }
            *slot = value;
        }
        out
    }
}

/// Real value per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl ScalarField {
    /// Wraps node values, rejecting a wrong count or non-finite entries.
    pub fn new(grid: &PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::FieldMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some((node, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { node, value });
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub(crate) fn from_values_unchecked(grid: &PeriodicGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn zeros(grid: &PeriodicGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &PeriodicGrid, value: f64) -> Self {
        Self::from_values_unchecked(grid, vec![value; grid.len()])
    }

    /// Samples `f` at node coordinates.
    pub fn from_fn(grid: &PeriodicGrid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.coordinates(i))).collect();
        Self::from_values_unchecked(grid, values)
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Index and value of the smallest node value (first one on ties).
    pub fn argmin(&self) -> (usize, f64) {
        self.values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_values_unchecked(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        Self::from_values_unchecked(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// Discrete L2 inner product `mean(self * other)`.
    pub fn inner(&self, other: &Self) -> f64 {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / self.values.len() as f64
    }

    /// Discrete L2 norm `sqrt(mean(f^2))`.
    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: f64) -> ScalarField {
        self.map(|a| a * rhs)
    }
}

impl Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.map(|a| -a)
    }
}

/// Unnormalized discrete Fourier coefficients of a real field.
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: PeriodicGrid,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    /// Constant fields get an exact single-mode spectrum; mixed-radix transforms
    /// would otherwise leave roundoff in the other modes.
    pub fn of(field: &ScalarField) -> Self {
        let grid = field.grid().clone();
        let first = field.values()[0];
        if field.values().iter().all(|&v| v == first) {
            let mut coeffs = vec![Complex64::default(); grid.len()];
            coeffs[0] = Complex64::new(first * grid.len() as f64, 0.0);
            return Self { grid, coeffs };
        }
        let mut coeffs: Vec<Complex64> = field
            .values()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        grid.transform(&mut coeffs, false);
        Self { grid, coeffs }
    }

    pub(crate) fn from_coefficients(grid: &PeriodicGrid, coeffs: Vec<Complex64>) -> Self {
        debug_assert_eq!(coeffs.len(), grid.len());
        Self {
            grid: grid.clone(),
            coeffs,
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Spectrum of the derivative with the given per-axis orders.
    pub fn derivative_spectrum(&self, orders: &[usize]) -> Spectrum {
        let symbol = self.grid.symbol(orders);
        Spectrum {
            grid: self.grid.clone(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&symbol)
                .map(|(c, s)| c * s)
                .collect(),
        }
    }

    /// Back to node values; the imaginary roundoff is discarded.
    pub fn to_field(&self) -> ScalarField {
        let mut data = self.coeffs.clone();
        self.grid.transform(&mut data, true);
        let scale = 1.0 / self.grid.len() as f64;
        ScalarField::from_values_unchecked(&self.grid, data.iter().map(|c| c.re * scale).collect())
    }

    pub fn derivative(&self, orders: &[usize]) -> ScalarField {
        self.derivative_spectrum(orders).to_field()
    }

    /// Evaluates the trigonometric interpolant at an arbitrary point.
    pub fn eval(&self, point: &[f64]) -> f64 {
        self.eval_with(&PointBasis::new(&self.grid, point))
    }

    pub fn eval_with(&self, basis: &PointBasis) -> f64 {
        // contract one axis at a time, last (fastest) axis first
        let contract = |source: &[Complex64], f: &[Complex64]| -> Vec<Complex64> {
            source
                .chunks_exact(f.len())
                .map(|row| row.iter().zip(f).map(|(c, b)| c * b).sum())
                .collect()
        };
        let mut factors = basis.factors.iter().rev();
        let first = factors.next().expect("grid has at least one axis");
        let mut current = contract(&self.coeffs, first);
        for f in factors {
            current = contract(&current, f);
        }
        current[0].re / self.grid.len() as f64
    }

    /// Largest coefficient magnitude in the top quarter of the band, relative to the
    /// largest magnitude overall. Small for smooth periodic samples; not small for
    /// samples of functions with a jump across the cell boundary.
    pub fn tail_ratio(&self) -> f64 {
        let grid = &self.grid;
        let peak = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        if peak == 0.0 {
            return 0.0;
        }
        let mut tail = 0.0f64;
        for (flat, c) in self.coeffs.iter().enumerate() {
            let high = (0..grid.dim()).any(|axis| {
                let k = (flat / grid.inner.strides[axis]) % grid.inner.shape[axis];
                8 * grid.wavenumber(axis, k).unsigned_abs() as usize >= 3 * grid.inner.shape[axis]
            });
            if high {
                tail = tail.max(c.norm());
            }
        }
        tail / peak
    }
}

/// Per-axis Fourier basis values at one point, reusable across spectra on the same grid.
pub struct PointBasis {
    factors: Vec<Vec<Complex64>>,
}

impl PointBasis {
    pub fn new(grid: &PeriodicGrid, point: &[f64]) -> Self {
        assert_eq!(point.len(), grid.dim(), "point dimension must match grid");
        let factors = point
            .iter()
            .enumerate()
            .map(|(axis, &x)| {
                let x = x.rem_euclid(1.0);
                let n = grid.shape()[axis];
                (0..n)
                    .map(|k| {
                        let kappa = grid.wavenumber(axis, k) as f64;
                        if grid.is_nyquist(axis, k) {
                            // cosine keeps the interpolant real and exact at nodes
                            Complex64::new((TWO_PI * kappa * x).cos(), 0.0)
                        } else {
                            Complex64::from_polar(1.0, TWO_PI * kappa * x)
                        }
                    })
                    .collect()
            })
            .collect();
        Self { factors }
    }
}

/// Spectral derivative with per-axis orders, e.g. `[2, 0]` for the second derivative
/// in the first variable.
pub fn partial(f: &ScalarField, orders: &[usize]) -> ScalarField {
    Spectrum::of(f).derivative(orders)
}

/// Arithmetic average of node values (exact quadrature of trigonometric polynomials).
pub fn mean(f: &ScalarField) -> f64 {
    f.values().iter().sum::<f64>() / f.values().len() as f64
}

pub fn project_mean_zero(f: &ScalarField) -> ScalarField {
    let m = mean(f);
    f.map(|v| v - m)
}

/// Orders vector for `d/dx_i d/dx_j`.
pub fn second_orders(dim: usize, i: usize, j: usize) -> Vec<usize> {
    let mut orders = vec![0; dim];
    orders[i] += 1;
    orders[j] += 1;
    orders
}

pub fn unit_orders(dim: usize, i: usize) -> Vec<usize> {
    let mut orders = vec![0; dim];
    orders[i] = 1;
    orders
}

pub fn gradient(f: &ScalarField) -> Vec<ScalarField> {
    let spectrum = Spectrum::of(f);
    let dim = f.grid().dim();
    (0..dim)
        .map(|i| spectrum.derivative(&unit_orders(dim, i)))
        .collect()
}

/// Spectral Hessian of a periodic field.
pub fn hessian(f: &ScalarField) -> SymMatrixField {
    let spectrum = Spectrum::of(f);
    let grid = f.grid();
    let dim = grid.dim();
    let mut components = Vec::with_capacity(packed_len(dim));
    for i in 0..dim {
        for j in i..dim {
            components.push(spectrum.derivative(&second_orders(dim, i, j)).into_values());
        }
    }
    SymMatrixField {
        grid: grid.clone(),
        dim,
        components,
    }
}

/// `sum_{i,j} d^2 M^{ij} / dx_i dx_j`, assembled in Fourier space with one inverse
/// transform.
pub fn second_divergence(m: &SymMatrixField) -> ScalarField {
    let grid = m.grid();
    let dim = m.dim();
    let mut acc = vec![Complex64::default(); grid.len()];
    for i in 0..dim {
        for j in i..dim {
            let entry = ScalarField::from_values_unchecked(grid, m.components[packed_index(dim, i, j)].clone());
            let spectrum = Spectrum::of(&entry);
            let symbol = grid.symbol(&second_orders(dim, i, j));
            let weight = if i == j { 1.0 } else { 2.0 };
            for ((a, c), s) in acc.iter_mut().zip(&spectrum.coeffs).zip(&symbol) {
                *a += c * s * weight;
            }
        }
    }
    Spectrum {
        grid: grid.clone(),
        coeffs: acc,
    }
    .to_field()
}

/// Trigonometric interpolation at an arbitrary point (wrapped into the unit cell).
pub fn interpolate(f: &ScalarField, point: &[f64]) -> f64 {
    Spectrum::of(f).eval(point)
}

/// See [`Spectrum::tail_ratio`].
pub fn spectral_tail(f: &ScalarField) -> f64 {
    Spectrum::of(f).tail_ratio()
}

pub(crate) fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

pub(crate) fn packed_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // rows 0..i hold dim, dim-1, ..., dim-i+1 entries
    i * dim - i * i.saturating_sub(1) / 2 + (j - i)
}

/// Symmetric `n x n` matrix per node; only the upper triangle is stored, one
/// contiguous array per entry.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrixField {
    grid: PeriodicGrid,
    dim: usize,
    components: Vec<Vec<f64>>,
}

impl SymMatrixField {
    /// Builds the field from a per-node matrix function; only the upper triangle of
    /// each returned matrix is read.
    pub fn from_node_fn(grid: &PeriodicGrid, dim: usize, f: impl Fn(usize) -> DMatrix<f64>) -> Self {
        let mut components = vec![vec![0.0; grid.len()]; packed_len(dim)];
        for node in 0..grid.len() {
            let m = f(node);
            for i in 0..dim {
                for j in i..dim {
                    components[packed_index(dim, i, j)][node] = m[(i, j)];
                }
            }
        }
        Self {
            grid: grid.clone(),
            dim,
            components,
        }
    }

    pub(crate) fn from_node_matrices(grid: &PeriodicGrid, dim: usize, nodes: &[DMatrix<f64>]) -> Self {
        Self::from_node_fn(grid, dim, |node| nodes[node].clone())
    }

    pub fn constant(grid: &PeriodicGrid, m: &DMatrix<f64>) -> Self {
        Self::from_node_fn(grid, m.nrows(), |_| m.clone())
    }

    pub fn identity(grid: &PeriodicGrid) -> Self {
        Self::constant(grid, &DMatrix::identity(grid.dim(), grid.dim()))
    }

    /// Builds the field from entry fields in row-major upper-triangle order
    /// `(0,0), (0,1), ..., (1,1), ...`.
    pub fn from_components(grid: &PeriodicGrid, components: Vec<ScalarField>) -> Result<Self> {
        let dim = grid.dim();
        if components.len() != packed_len(dim) {
            return Err(Error::FieldMismatch(format!(
                "expected {} matrix entries, got {}",
                packed_len(dim),
                components.len()
            )));
        }
        if components.iter().any(|c| c.grid() != grid) {
            return Err(Error::FieldMismatch("matrix entry on a different grid".into()));
        }
        Ok(Self {
            grid: grid.clone(),
            dim,
            components: components.into_iter().map(ScalarField::into_values).collect(),
        })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    /// Matrix size `n`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, node: usize, i: usize, j: usize) -> f64 {
        self.components[packed_index(self.dim, i, j)][node]
    }

    pub fn node_matrix(&self, node: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(node, i, j))
    }

    pub fn component(&self, i: usize, j: usize) -> ScalarField {
        ScalarField::from_values_unchecked(&self.grid, self.components[packed_index(self.dim, i, j)].clone())
    }

    /// Adds a constant symmetric matrix at every node.
    pub fn shifted(&self, m: &DMatrix<f64>) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim {
            for j in i..self.dim {
                let shift = m[(i, j)];
                for v in out.components[packed_index(self.dim, i, j)].iter_mut() {
                    *v += shift;
                }
            }
        }
        out
    }

    /// Largest entry magnitude over all nodes.
    pub fn sup_norm(&self) -> f64 {
        self.components
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// Nodewise contraction `sum_{ij} self^{ij} other_{ij}`.
    pub fn contract(&self, other: &SymMatrixField) -> ScalarField {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        assert_eq!(self.dim, other.dim);
        let mut out = vec![0.0; self.grid.len()];
        for i in 0..self.dim {
            for j in i..self.dim {
                let k = packed_index(self.dim, i, j);
                let weight = if i == j { 1.0 } else { 2.0 };
                for ((o, a), b) in out.iter_mut().zip(&self.components[k]).zip(&other.components[k]) {
                    *o += weight * a * b;
                }
            }
        }
        ScalarField::from_values_unchecked(&self.grid, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cos_field(grid: &PeriodicGrid, axis: usize, k: f64) -> ScalarField {
        ScalarField::from_fn(grid, |x| (TWO_PI * k * x[axis]).cos())
    }

    #[test]
    fn packed_indices_are_row_major_upper_triangle() {
        assert_eq!(packed_index(1, 0, 0), 0);
        assert_eq!(packed_index(2, 0, 0), 0);
        assert_eq!(packed_index(2, 0, 1), 1);
        assert_eq!(packed_index(2, 1, 0), 1);
        assert_eq!(packed_index(2, 1, 1), 2);
        let expected = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        for (k, &(i, j)) in expected.iter().enumerate() {
            assert_eq!(packed_index(3, i, j), k);
        }
        let mut k = 0;
        for i in 0..5 {
            for j in i..5 {
                assert_eq!(packed_index(5, i, j), k);
                k += 1;
            }
        }
    }

    #[test]
    fn grid_construction() {
        let g = PeriodicGrid::new(1, &[16]).unwrap();
        assert_eq!(g.len(), 16);
        for k in 0..16 {
            assert_eq!(g.coordinates(k), vec![k as f64 / 16.0]);
        }
        let g = PeriodicGrid::new(2, &[8, 16]).unwrap();
        assert_eq!(g.len(), 128);
        assert_eq!(g.spacing(0), 1.0 / 8.0);
        assert_eq!(g.spacing(1), 1.0 / 16.0);
        assert_eq!(g.spacing(1) * 16.0, 1.0);
        assert_eq!(g.coordinates(0), vec![0.0, 0.0]);
        assert_eq!(g.coordinates(17), vec![1.0 / 8.0, 1.0 / 16.0]);
        assert!(matches!(PeriodicGrid::new(2, &[7, 8]), Err(Error::InvalidGrid(_))));
        assert!(PeriodicGrid::new(1, &[6]).is_err());
        assert!(PeriodicGrid::new(0, &[]).is_err());
        assert!(PeriodicGrid::new(2, &[8]).is_err());
    }

    #[test]
    fn wraparound_indexing() {
        let g = PeriodicGrid::new(2, &[8, 16]).unwrap();
        assert_eq!(g.wrap_index(&[-1, 0]), g.wrap_index(&[7, 0]));
        assert_eq!(g.wrap_index(&[8, 17]), g.wrap_index(&[0, 1]));
        assert_eq!(g.multi_index(g.wrap_index(&[3, -2])), vec![3, 14]);
    }

    #[test]
    fn derivative_of_eigenfunctions() {
        let g = PeriodicGrid::new(2, &[16, 16]).unwrap();
        let f = cos_field(&g, 0, 1.0);
        let d = partial(&f, &[2, 0]);
        let expected = &f * (-4.0 * PI * PI);
        assert!((&d - &expected).sup_norm() < 1e-12);

        let c = ScalarField::constant(&g, 3.7);
        for orders in [[1, 0], [0, 1], [1, 1], [2, 2], [0, 4]] {
            assert!(partial(&c, &orders).sup_norm() < 1e-12);
        }

        let f = ScalarField::from_fn(&g, |x| (TWO_PI * x[0]).sin() * (2.0 * TWO_PI * x[1]).sin());
        let d = partial(&f, &[1, 1]);
        let expected = ScalarField::from_fn(&g, |x| {
            8.0 * PI * PI * (TWO_PI * x[0]).cos() * (2.0 * TWO_PI * x[1]).cos()
        });
        assert!((&d - &expected).sup_norm() < 1e-11);
    }

    #[test]
    fn odd_derivative_drops_nyquist() {
        let g = PeriodicGrid::uniform(1, 8).unwrap();
        let nyquist = ScalarField::from_fn(&g, |x| (PI * 8.0 * x[0]).cos());
        assert!(partial(&nyquist, &[1]).sup_norm() < 1e-12);
        let second = partial(&nyquist, &[2]);
        let expected = &nyquist * (-(PI * 8.0).powi(2));
        assert!((&second - &expected).sup_norm() < 1e-9);
    }

    #[test]
    fn mean_and_projection() {
        let g = PeriodicGrid::new(2, &[8, 8]).unwrap();
        assert_abs_diff_eq!(mean(&ScalarField::constant(&g, 2.5)), 2.5, epsilon = 1e-15);
        assert!(mean(&cos_field(&g, 0, 1.0)).abs() < 1e-15);
        let f = ScalarField::from_fn(&g, |x| 1.0 + 0.3 * (2.0 * TWO_PI * x[1]).sin());
        assert_abs_diff_eq!(mean(&f), 1.0, epsilon = 1e-15);

        assert!(project_mean_zero(&ScalarField::constant(&g, 5.0)).sup_norm() < 1e-15);
        let shifted = cos_field(&g, 0, 1.0).map(|v| v + 2.0);
        let p = project_mean_zero(&shifted);
        assert!((&p - &cos_field(&g, 0, 1.0)).sup_norm() < 1e-15);
        assert!((&project_mean_zero(&p) - &p).sup_norm() < 1e-15);
    }

    #[test]
    fn second_divergence_examples() {
        let g = PeriodicGrid::uniform(2, 16).unwrap();
        assert!(second_divergence(&SymMatrixField::identity(&g)).sup_norm() < 1e-12);

        let g1 = PeriodicGrid::uniform(1, 32).unwrap();
        let entry = ScalarField::from_fn(&g1, |x| 1.0 + 0.1 * (TWO_PI * x[0]).cos());
        let m = SymMatrixField::from_components(&g1, vec![entry]).unwrap();
        let d = second_divergence(&m);
        let expected = ScalarField::from_fn(&g1, |x| -0.4 * PI * PI * (TWO_PI * x[0]).cos());
        assert!((&d - &expected).sup_norm() < 1e-12);
    }

    #[test]
    fn interpolation() {
        let g = PeriodicGrid::new(2, &[16, 8]).unwrap();
        let f = ScalarField::from_fn(&g, |x| (TWO_PI * x[0]).cos() + 0.5 * (TWO_PI * x[1]).sin());
        for node in [0, 5, 37, 127] {
            let x = g.coordinates(node);
            assert_abs_diff_eq!(interpolate(&f, &x), f.values()[node], epsilon = 1e-13);
        }
        let exact = (0.7 * PI).cos() + 0.5 * (TWO_PI * 0.1).sin();
        assert_abs_diff_eq!(interpolate(&f, &[0.35, 0.1]), exact, epsilon = 1e-13);
        assert_abs_diff_eq!(
            interpolate(&f, &[1.35, -0.9]),
            interpolate(&f, &[0.35, 0.1]),
            epsilon = 1e-13
        );
    }

    #[test]
    fn spectral_tail_detects_sawtooth() {
        let g = PeriodicGrid::uniform(1, 32).unwrap();
        assert!(spectral_tail(&cos_field(&g, 0, 1.0)) < 1e-8);
        let saw = ScalarField::from_fn(&g, |x| x[0]);
        assert!(spectral_tail(&saw) > 1e-8);
    }

    #[test]
    fn rejects_non_finite_values() {
        let g = PeriodicGrid::uniform(1, 8).unwrap();
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(matches!(ScalarField::new(&g, v), Err(Error::NonFinite { node: 3, .. })));
        assert!(ScalarField::new(&g, vec![0.0; 7]).is_err());
    }
}
