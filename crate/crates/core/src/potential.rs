//! Convex potentials `u(x) = Q(x) + phi(x)` with a quadratic base `Q(x) = x^T M x / 2`
//! and a periodic perturbation `phi`, and the Abreu operator acting on them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{self, PeriodicGrid, ScalarField, SymMatrixField};

/// Minimal Hessian eigenvalue below which a node counts as not strictly convex.
pub const DEFAULT_CONVEXITY_FLOOR: f64 = 1e-8;

/// Symmetric positive-definite matrix `M` of the base form `Q(x) = x^T M x / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticBase {
    matrix: DMatrix<f64>,
}

impl QuadraticBase {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::InvalidConfig("base matrix must be square and non-empty".into()));
        }
        let scale = matrix.amax().max(1.0);
        if (&matrix - matrix.transpose()).amax() > 1e-14 * scale {
            return Err(Error::InvalidConfig("base matrix is not symmetric".into()));
        }
        let min_eig = SymmetricEigen::new(matrix.clone()).eigenvalues.min();
        if min_eig <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "base matrix is not positive definite (smallest eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { matrix })
    }

    /// `Q(x) = |x|^2 / 2`.
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim) * c)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_identity(&self) -> bool {
        self.matrix == DMatrix::identity(self.dim(), self.dim())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        0.5 * x.dot(&(&self.matrix * &x))
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    /// Base of the Legendre dual, `M^{-1}`.
    pub fn dual(&self) -> Self {
        let inverse = self
            .matrix
            .clone()
            .cholesky()
            .expect("base is positive definite")
            .inverse();
        Self {
            matrix: (&inverse + inverse.transpose()) * 0.5,
        }
    }
}

/// `u = Q + phi`; `phi` is kept in the mean-zero gauge.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    base: QuadraticBase,
    perturbation: ScalarField,
}

impl Potential {
    /// Builds a potential, shifting `perturbation` to mean zero.
    pub fn new(base: QuadraticBase, perturbation: ScalarField) -> Result<Self> {
        if base.dim() != perturbation.grid().dim() {
            return Err(Error::FieldMismatch(format!(
                "base of dimension {} on a {}-dimensional grid",
                base.dim(),
                perturbation.grid().dim()
            )));
        }
        Ok(Self {
            base,
            perturbation: grid::project_mean_zero(&perturbation),
        })
    }

    /// The base form itself (`phi = 0`).
    pub fn flat(grid: &PeriodicGrid, base: QuadraticBase) -> Result<Self> {
        Self::new(base, ScalarField::zeros(grid))
    }

    pub fn base(&self) -> &QuadraticBase {
        &self.base
    }

    pub fn perturbation(&self) -> &ScalarField {
        &self.perturbation
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.perturbation.grid()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Same base, new perturbation (re-gauged).
    pub fn with_perturbation(&self, perturbation: ScalarField) -> Result<Self> {
        Self::new(self.base.clone(), perturbation)
    }

    /// Value of `u` at a grid node.
    pub fn value_at_node(&self, node: usize) -> f64 {
        self.base.value(&self.grid().coordinates(node)) + self.perturbation.values()[node]
    }
}

/// `u_ij = M_ij + phi_ij`, with the Hessian of `phi` taken spectrally.
pub fn hessian_u(p: &Potential) -> SymMatrixField {
    grid::hessian(p.perturbation()).shifted(p.base().matrix())
}

fn node_matrices(h: &SymMatrixField) -> Vec<DMatrix<f64>> {
    (0..h.grid().len())
        .into_par_iter()
        .map(|node| h.node_matrix(node))
        .collect()
}

fn min_max_eigen(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 1 {
        return (m[(0, 0)], m[(0, 0)]);
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    (eig.min(), eig.max())
}

/// Per-node smallest and largest eigenvalues.
pub fn eigenvalue_extremes(h: &SymMatrixField) -> Vec<(f64, f64)> {
    (0..h.grid().len())
        .into_par_iter()
        .map(|node| min_max_eigen(&h.node_matrix(node)))
        .collect()
}

fn check_convex(extremes: &[(f64, f64)], floor: f64) -> Result<()> {
    let (node, min_eigenvalue) = extremes
        .iter()
        .enumerate()
        .map(|(i, e)| (i, e.0))
        .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
    if min_eigenvalue <= floor || !min_eigenvalue.is_finite() {
        return Err(Error::NotConvex {
            node,
            min_eigenvalue,
        });
    }
    Ok(())
}

/// Nodewise inverse with the default convexity floor.
pub fn inverse_hessian(h: &SymMatrixField) -> Result<SymMatrixField> {
    inverse_hessian_with_floor(h, DEFAULT_CONVEXITY_FLOOR)
}

/// Nodewise inverse; fails with [`Error::NotConvex`] naming the worst node if any
/// node has smallest eigenvalue at or below `floor`.
pub fn inverse_hessian_with_floor(h: &SymMatrixField, floor: f64) -> Result<SymMatrixField> {
    let dim = h.dim();
    let results: Vec<(f64, DMatrix<f64>)> = (0..h.grid().len())
        .into_par_iter()
        .map(|node| {
            let m = h.node_matrix(node);
            if dim == 1 {
                let v = m[(0, 0)];
                return (v, DMatrix::from_element(1, 1, 1.0 / v));
            }
            let eig = SymmetricEigen::new(m);
            let min = eig.eigenvalues.min();
            let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
            let inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
            (min, inv)
        })
        .collect();
    let extremes: Vec<(f64, f64)> = results.iter().map(|r| (r.0, r.0)).collect();
    check_convex(&extremes, floor)?;
    let inverses: Vec<DMatrix<f64>> = results.into_iter().map(|r| r.1).collect();
    Ok(SymMatrixField::from_node_matrices(h.grid(), dim, &inverses))
}

pub fn det_hessian(h: &SymMatrixField) -> ScalarField {
    let dets: Vec<f64> = node_matrices(h).iter().map(|m| m.determinant()).collect();
    ScalarField::from_values_unchecked(h.grid(), dets)
}

/// Nodewise cofactor matrix `U^{ij} = (-1)^{i+j} det(minor_ij)`; equals
/// `det(H) H^{-1}` wherever `H` is invertible. For `n = 1` it is the constant 1.
pub fn cofactor(h: &SymMatrixField) -> SymMatrixField {
    let dim = h.dim();
    if dim == 1 {
        return SymMatrixField::constant(h.grid(), &DMatrix::from_element(1, 1, 1.0));
    }
    let cofactors: Vec<DMatrix<f64>> = node_matrices(h)
        .into_par_iter()
        .map(|m| {
            DMatrix::from_fn(dim, dim, |i, j| {
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                sign * m.clone().remove_row(i).remove_column(j).determinant()
            })
        })
        .collect();
    SymMatrixField::from_node_matrices(h.grid(), dim, &cofactors)
}

/// `sum_{ij} (u^{ij})_{ij}` for `u = Q + phi`.
pub fn abreu_forward(p: &Potential) -> Result<ScalarField> {
    abreu_forward_with_floor(p, DEFAULT_CONVEXITY_FLOOR)
}

pub fn abreu_forward_with_floor(p: &Potential, floor: f64) -> Result<ScalarField> {
    let inverse = inverse_hessian_with_floor(&hessian_u(p), floor)?;
    Ok(grid::second_divergence(&inverse))
}

/// `U^{ij} w_{ij} - A` with `U` the cofactor matrix of `u_ij` and `w = 1/det(u_ij)`.
pub fn divergence_form_residual(p: &Potential, a: &ScalarField) -> Result<ScalarField> {
    let h = hessian_u(p);
    check_convex(&eigenvalue_extremes(&h), DEFAULT_CONVEXITY_FLOOR)?;
    let w = det_hessian(&h).map(|d| 1.0 / d);
    let lhs = cofactor(&h).contract(&grid::hessian(&w));
    Ok(&lhs - a)
}

/// Minimum over nodes of the smallest eigenvalue of `u_ij`.
pub fn convexity_margin(p: &Potential) -> f64 {
    eigenvalue_extremes(&hessian_u(p))
        .iter()
        .fold(f64::INFINITY, |m, e| m.min(e.0))
}

/// Fails with [`Error::NotConvex`] unless the margin exceeds `floor`.
pub fn ensure_convex(p: &Potential, floor: f64) -> Result<()> {
    check_convex(&eigenvalue_extremes(&hessian_u(p)), floor)
}
