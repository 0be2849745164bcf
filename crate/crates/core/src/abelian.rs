//! Torus-invariant Kähler metrics on `C^n / (Z^n + i Z^n)` and their scalar curvature.
//!
//! A metric is given by a periodic `psi` with `v(x) = |x|^2/2 + psi(x)` strictly
//! convex, where `x` is the real part of the complex coordinate. Its scalar curvature
//! is `S = -1/4 v^{ij} (log det v_ab)_ij`. In the symplectic coordinate `t = grad v`
//! the same function becomes `-1/4 (u^{ij})_ij` with `u` the Legendre transform of
//! `v`, which turns curvature prescription into Abreu's equation.

use crate::error::{Error, Result};
use crate::grid::{self, PeriodicGrid, ScalarField};
use crate::legendre::{self, GradientMapSolveConfig};
use crate::potential::{self, Potential, QuadraticBase};
use crate::solver::{self, ContinuityTrace, SolverConfig};

#[derive(Debug, Clone)]
pub struct InvariantMetric {
    potential: Potential,
}

impl InvariantMetric {
    /// Validates convexity of `|x|^2/2 + psi`; `psi` is shifted to mean zero.
    pub fn new(psi: ScalarField) -> Result<Self> {
        let dim = psi.grid().dim();
        let potential = Potential::new(QuadraticBase::identity(dim), psi)?;
        Self::from_potential(potential)
    }

    pub fn from_potential(potential: Potential) -> Result<Self> {
        if !potential.base().is_identity() {
            return Err(Error::UnsupportedBase(
                "invariant metrics use the base |x|^2/2".into(),
            ));
        }
        potential::ensure_convex(&potential, potential::DEFAULT_CONVEXITY_FLOOR)?;
        Ok(Self { potential })
    }

    pub fn flat(grid: &PeriodicGrid) -> Self {
        Self::new(ScalarField::zeros(grid)).expect("flat metric is convex")
    }

    pub fn psi(&self) -> &ScalarField {
        self.potential.perturbation()
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.potential.grid()
    }
}

/// `S` sampled at the nodes of the complex coordinate `x` and of the symplectic
/// coordinate `t`. Only the symplectic sampling has exactly zero mean.
#[derive(Debug, Clone)]
pub struct CurvatureSamplings {
    pub complex: ScalarField,
    pub symplectic: ScalarField,
}

/// `-1/4 v^{ij} L_ij` at the nodes `x`.
pub fn complex_curvature(m: &InvariantMetric) -> Result<ScalarField> {
    let h = potential::hessian_u(m.potential());
    let inverse = potential::inverse_hessian(&h)?;
    let log_det = potential::det_hessian(&h).map(f64::ln);
    Ok(&inverse.contract(&grid::hessian(&log_det)) * -0.25)
}

/// `-1/4 (u^{ij})_ij` at the nodes `t`, with `u` the Legendre transform of `v`.
pub fn symplectic_curvature(m: &InvariantMetric, cfg: &GradientMapSolveConfig) -> Result<ScalarField> {
    let u = legendre::legendre_transform(m.potential(), cfg)?;
    Ok(&potential::abreu_forward(&u)? * -0.25)
}

pub fn scalar_curvature(m: &InvariantMetric, cfg: &GradientMapSolveConfig) -> Result<CurvatureSamplings> {
    Ok(CurvatureSamplings {
        complex: complex_curvature(m)?,
        symplectic: symplectic_curvature(m, cfg)?,
    })
}

/// Finds the invariant metric whose curvature, sampled in symplectic coordinates,
/// is `s`: solves Abreu's equation with right-hand side `-4 s` and transforms back.
pub fn prescribe_curvature(s: &ScalarField, cfg: &SolverConfig) -> Result<(InvariantMetric, ContinuityTrace)> {
    let mean = grid::mean(s);
    if mean.abs() > solver::MEAN_TOLERANCE {
        return Err(Error::MeanNotZero { mean });
    }
    let a = s * -4.0;
    let (u, trace) = solver::continuity_solve(&a, QuadraticBase::identity(s.grid().dim()), cfg)?;
    let v = legendre::legendre_transform(&u, &GradientMapSolveConfig::default())?;
    Ok((InvariantMetric::from_potential(v)?, trace))
}
