//! Legendre duality between `u(x) = |x|^2/2 + phi(x)` and `v(y) = |y|^2/2 + psi(y)`.
//!
//! The dual potential is sampled on its own uniform grid in `y`. For every dual node
//! the gradient map `y = grad u(x)` is inverted by damped Newton iterations on the
//! trigonometric interpolant of `phi`, and `v(y) = y.x - u(x)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{self, unit_orders, PeriodicGrid, PointBasis, ScalarField, Spectrum};
use crate::potential::{self, Potential, QuadraticBase};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GradientMapSolveConfig {
    /// Sup-norm tolerance on `grad u(x) - y`.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for GradientMapSolveConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iters: 50,
        }
    }
}

/// Off-grid evaluation of `u`, `grad u` and `D^2 u` through trigonometric
/// interpolation of `phi` and its spectral derivatives.
pub struct GradientMap {
    grid: PeriodicGrid,
    base: QuadraticBase,
    value: Spectrum,
    gradient: Vec<Spectrum>,
    /// Upper triangle, `hessian[i][j - i]`.
    hessian: Vec<Vec<Spectrum>>,
}

/// `u`, `grad u`, `D^2 u` at one point.
pub struct LocalJet {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl GradientMap {
    pub fn new(p: &Potential) -> Self {
        let grid = p.grid().clone();
        let dim = grid.dim();
        let value = Spectrum::of(p.perturbation());
        let gradient = (0..dim)
            .map(|i| value.derivative_spectrum(&unit_orders(dim, i)))
            .collect();
        let hessian = (0..dim)
            .map(|i| {
                (i..dim)
                    .map(|j| value.derivative_spectrum(&grid::second_orders(dim, i, j)))
                    .collect()
            })
            .collect();
        Self {
            grid,
            base: p.base().clone(),
            value,
            gradient,
            hessian,
        }
    }

    pub fn jet(&self, x: &[f64]) -> LocalJet {
        let dim = self.grid.dim();
        let basis = PointBasis::new(&self.grid, x);
        let m = self.base.matrix();
        let xv = DVector::from_column_slice(x);
        let value = 0.5 * xv.dot(&(m * &xv)) + self.value.eval_with(&basis);
        let gradient = m * &xv + DVector::from_fn(dim, |i, _| self.gradient[i].eval_with(&basis));
        let mut hessian = m.clone();
        for i in 0..dim {
            for j in i..dim {
                let h = self.hessian[i][j - i].eval_with(&basis);
                hessian[(i, j)] += h;
                if i != j {
                    hessian[(j, i)] += h;
                }
            }
        }
        LocalJet {
            value,
            gradient,
            hessian,
        }
    }

    pub fn gradient_at(&self, x: &[f64]) -> Vec<f64> {
        self.jet(x).gradient.as_slice().to_vec()
    }

    /// Solves `grad u(x) = y`, starting from `x = M^{-1} y`. Returns the root and
    /// the final residual; `None` if the tolerance is not reached.
    pub fn invert(&self, y: &[f64], cfg: &GradientMapSolveConfig) -> (Option<Vec<f64>>, f64) {
        let yv = DVector::from_column_slice(y);
        let mut x = self
            .base
            .matrix()
            .clone()
            .cholesky()
            .expect("base is positive definite")
            .solve(&yv);
        let mut jet = self.jet(x.as_slice());
        let mut residual = &jet.gradient - &yv;
        let mut norm = residual.amax();
        for _ in 0..cfg.max_iters {
            if norm <= cfg.tolerance {
                return (Some(x.as_slice().to_vec()), norm);
            }
            let Some(step) = jet.hessian.clone().cholesky().map(|c| c.solve(&residual)) else {
                return (None, norm);
            };
            // backtrack until the gradient mismatch decreases
            let mut scale = 1.0;
            loop {
                let trial = &x - &step * scale;
                let trial_jet = self.jet(trial.as_slice());
                let trial_residual = &trial_jet.gradient - &yv;
                let trial_norm = trial_residual.amax();
                if trial_norm < norm || scale < 1e-6 {
                    x = trial;
                    jet = trial_jet;
                    residual = trial_residual;
                    norm = trial_norm;
                    break;
                }
                scale *= 0.5;
            }
        }
        if norm <= cfg.tolerance {
            (Some(x.as_slice().to_vec()), norm)
        } else {
            (None, norm)
        }
    }
}

/// Dual potential together with the gradient-map preimage `x(y)` of every dual node.
#[derive(Debug, Clone)]
pub struct LegendreDual {
    pub dual: Potential,
    pub preimages: Vec<Vec<f64>>,
}

fn require_identity_base(p: &Potential) -> Result<()> {
    if !p.base().is_identity() {
        // the dual perturbation is periodic only on the lattice M Z^n
        return Err(Error::UnsupportedBase(
            "Legendre duality on the unit torus requires the base |x|^2/2".into(),
        ));
    }
    Ok(())
}

/// Inverts the gradient map at every node of the dual grid (same resolution).
pub fn gradient_preimages(p: &Potential, cfg: &GradientMapSolveConfig) -> Result<Vec<Vec<f64>>> {
    require_identity_base(p)?;
    potential::ensure_convex(p, potential::DEFAULT_CONVEXITY_FLOOR)?;
    let map = GradientMap::new(p);
    let grid = p.grid();
    let results: Vec<(usize, Option<Vec<f64>>, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|node| {
            let (x, residual) = map.invert(&grid.coordinates(node), cfg);
            (node, x, residual)
        })
        .collect();
    results
        .into_iter()
        .map(|(node, x, residual)| x.ok_or(Error::GradientInversionFailure { node, residual }))
        .collect()
}

/// Legendre transform with the preimages of the dual nodes.
pub fn legendre_dual(p: &Potential, cfg: &GradientMapSolveConfig) -> Result<LegendreDual> {
    let preimages = gradient_preimages(p, cfg)?;
    let map = GradientMap::new(p);
    let grid = p.grid();
    let psi: Vec<f64> = preimages
        .par_iter()
        .enumerate()
        .map(|(node, x)| {
            let y = grid.coordinates(node);
            let u = map.jet(x).value;
            let yx: f64 = y.iter().zip(x).map(|(a, b)| a * b).sum();
            let half_y2: f64 = 0.5 * y.iter().map(|a| a * a).sum::<f64>();
            yx - u - half_y2
        })
        .collect();
    let psi = ScalarField::new(grid, psi)?;
    Ok(LegendreDual {
        dual: Potential::new(p.base().dual(), psi)?,
        preimages,
    })
}

/// The pair `(v, x(y))` for a dual potential `v` given directly: the preimages of
/// the dual nodes are `grad v(y) = y + grad psi(y)`.
pub fn known_dual(v: &Potential) -> Result<LegendreDual> {
    require_identity_base(v)?;
    let grid = v.grid();
    let grad = grid::gradient(v.perturbation());
    let preimages = (0..grid.len())
        .map(|node| {
            let y = grid.coordinates(node);
            y.iter().zip(&grad).map(|(yi, g)| yi + g.values()[node]).collect()
        })
        .collect();
    Ok(LegendreDual {
        dual: v.clone(),
        preimages,
    })
}

/// `v = u*` as a potential `|y|^2/2 + psi(y)` in the mean-zero gauge.
pub fn legendre_transform(p: &Potential, cfg: &GradientMapSolveConfig) -> Result<Potential> {
    Ok(legendre_dual(p, cfg)?.dual)
}

/// `A~(y) = A(x(y))` sampled at the dual nodes.
pub fn pullback_rhs(a: &ScalarField, p: &Potential, cfg: &GradientMapSolveConfig) -> Result<ScalarField> {
    let preimages = gradient_preimages(p, cfg)?;
    Ok(pullback_with(a, &preimages))
}

/// Interpolates `a` at precomputed preimages.
pub fn pullback_with(a: &ScalarField, preimages: &[Vec<f64>]) -> ScalarField {
    let spectrum = Spectrum::of(a);
    let values = preimages.par_iter().map(|x| spectrum.eval(x)).collect();
    ScalarField::from_values_unchecked(a.grid(), values)
}

/// `v^{ij} L_ij - A~` with `L = log det v_ab`.
pub fn dual_residual(v: &Potential, atilde: &ScalarField) -> Result<ScalarField> {
    let h = potential::hessian_u(v);
    let inverse = potential::inverse_hessian(&h)?;
    let log_det = potential::det_hessian(&h).map(f64::ln);
    let lhs = inverse.contract(&grid::hessian(&log_det));
    Ok(&lhs - atilde)
}

/// `max_y |det v_ab(y) det u_ab(x(y)) - 1|`.
pub fn determinant_duality_defect(p: &Potential, dual: &LegendreDual) -> f64 {
    let map = GradientMap::new(p);
    let det_v = potential::det_hessian(&potential::hessian_u(&dual.dual));
    dual.preimages
        .par_iter()
        .zip(det_v.values().par_iter())
        .map(|(x, dv)| (dv * map.jet(x).hessian.determinant() - 1.0).abs())
        .reduce(|| 0.0, f64::max)
}

/// `max |grad v(grad u(x)) - x|` over the given points.
pub fn gradient_roundtrip_defect(p: &Potential, v: &Potential, points: &[Vec<f64>]) -> f64 {
    let forward = GradientMap::new(p);
    let backward = GradientMap::new(v);
    points
        .iter()
        .map(|x| {
            let y = forward.gradient_at(x);
            let back = backward.gradient_at(&y);
            back.iter().zip(x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        })
        .fold(0.0, f64::max)
}
