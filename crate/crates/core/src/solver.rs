//! Continuity method for `(u^{ij})_{ij} = t A`, `t` from 0 to 1.
//!
//! Each accepted value of `t` is reached by damped Newton iterations. The Newton
//! system is the linearized operator `L(psi) = (u^{ia} psi_ab u^{bj})_{ij}`, solved
//! matrix-free by conjugate gradients on the mean-zero subspace with the flat
//! (constant-coefficient) operator as a per-mode preconditioner. Steps are damped
//! so that the potential stays convex and the convex functional
//! `F_A(phi) = mean(-log det u_ij + A phi)` does not increase.

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{self, PeriodicGrid, ScalarField, Spectrum, SymMatrixField};
use crate::krylov;
use crate::potential::{self, Potential, QuadraticBase};

/// Largest |mean| accepted for a right-hand side.
pub const MEAN_TOLERANCE: f64 = 1e-10;

/// Newton solves finishing in at most this many iterations double the next `t` step.
pub const EASY_NEWTON_ITERATIONS: usize = 5;

/// Number of damping reductions tried by the line search.
pub const LINE_SEARCH_STEPS: i32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Sup-norm residual at which a Newton solve stops.
    pub newton_tolerance: f64,
    pub max_newton_iters: usize,
    pub initial_t_step: f64,
    pub min_t_step: f64,
    /// Relative reduction of the preconditioned residual in each Krylov solve.
    pub linear_tolerance: f64,
    pub max_linear_iters: usize,
    /// Line-search shrink factor.
    pub damping: f64,
    pub convexity_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton_tolerance: 1e-10,
            max_newton_iters: 30,
            initial_t_step: 0.1,
            min_t_step: 1e-4,
            linear_tolerance: 1e-12,
            max_linear_iters: 500,
            damping: 0.5,
            convexity_floor: potential::DEFAULT_CONVEXITY_FLOOR,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("newton_tolerance", self.newton_tolerance),
            ("linear_tolerance", self.linear_tolerance),
            ("min_t_step", self.min_t_step),
            ("convexity_floor", self.convexity_floor),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "damping must lie in (0, 1), got {}",
                self.damping
            )));
        }
        if !(self.min_t_step <= self.initial_t_step && self.initial_t_step <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need min_t_step <= initial_t_step <= 1, got {} and {}",
                self.min_t_step, self.initial_t_step
            )));
        }
        if self.max_newton_iters == 0 || self.max_linear_iters == 0 {
            return Err(Error::InvalidConfig("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// One accepted continuation step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub newton_iterations: usize,
    pub final_residual_norm: f64,
    /// `max(newton_tolerance, roundoff floor)` used for this step.
    pub effective_tolerance: f64,
    pub functional_value: f64,
    pub det_min: f64,
    pub det_max: f64,
    pub convexity_margin: f64,
    pub eig_max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ContinuityTrace {
    pub steps: Vec<StepRecord>,
}

impl ContinuityTrace {
    pub fn final_t(&self) -> Option<f64> {
        self.steps.last().map(|s| s.t)
    }

    /// `max det_max / min det_min` over the whole path.
    pub fn det_spread(&self) -> f64 {
        let max = self.steps.iter().map(|s| s.det_max).fold(f64::NEG_INFINITY, f64::max);
        let min = self.steps.iter().map(|s| s.det_min).fold(f64::INFINITY, f64::min);
        max / min
    }
}

/// Mode-wise symbol of the constant-coefficient operator
/// `psi -> sum_ij D_ij (M^{-1} D^2 psi M^{-1})_ij`.
fn flat_symbol(grid: &PeriodicGrid, base_inverse: &DMatrix<f64>) -> Vec<f64> {
    let dim = grid.dim();
    let two_pi = 2.0 * std::f64::consts::PI;
    (0..grid.len())
        .map(|flat| {
            let modes = grid.multi_index(flat);
            let k = DMatrix::from_fn(dim, dim, |a, b| {
                let ka = grid.wavenumber(a, modes[a]) as f64;
                let kb = grid.wavenumber(b, modes[b]) as f64;
                if a != b && (grid.is_nyquist(a, modes[a]) || grid.is_nyquist(b, modes[b])) {
                    0.0
                } else {
                    -two_pi * two_pi * ka * kb
                }
            });
            let b = base_inverse * &k * base_inverse;
            b.component_mul(&k).sum()
        })
        .collect()
}

/// Linearization of the Abreu map at a fixed potential.
pub struct LinearizedOperator {
    grid: PeriodicGrid,
    inverse: SymMatrixField,
    flat_symbol: Vec<f64>,
}

impl LinearizedOperator {
    pub fn at(p: &Potential, convexity_floor: f64) -> Result<Self> {
        let inverse = potential::inverse_hessian_with_floor(&potential::hessian_u(p), convexity_floor)?;
        Ok(Self::from_inverse(p.base(), inverse))
    }

    fn from_inverse(base: &QuadraticBase, inverse: SymMatrixField) -> Self {
        let grid = inverse.grid().clone();
        let flat_symbol = flat_symbol(&grid, base.dual().matrix());
        Self {
            grid,
            inverse,
            flat_symbol,
        }
    }

    /// `u^{-1} D^2 psi u^{-1}` nodewise.
    fn sandwich(&self, psi: &ScalarField) -> SymMatrixField {
        let h = grid::hessian(psi);
        let dim = self.grid.dim();
        let products: Vec<DMatrix<f64>> = (0..self.grid.len())
            .into_par_iter()
            .map(|node| {
                let inv = self.inverse.node_matrix(node);
                &inv * h.node_matrix(node) * &inv
            })
            .collect();
        SymMatrixField::from_node_fn(&self.grid, dim, |node| products[node].clone())
    }

    pub fn apply(&self, psi: &ScalarField) -> ScalarField {
        grid::second_divergence(&self.sandwich(psi))
    }

    /// Inverse of the flat operator per Fourier mode, projecting out constants.
    pub fn precondition(&self, r: &ScalarField) -> ScalarField {
        let spectrum = Spectrum::of(r);
        let coeffs: Vec<Complex64> = spectrum
            .coefficients()
            .iter()
            .zip(&self.flat_symbol)
            .map(|(c, &s)| if s > 0.0 { c / s } else { Complex64::default() })
            .collect();
        Spectrum::from_coefficients(&self.grid, coeffs).to_field()
    }

    /// Solves `L psi = rhs` for mean-zero `psi` (rhs is projected to mean zero first).
    pub fn solve(&self, rhs: &ScalarField, tolerance: f64, max_iters: usize) -> Result<(ScalarField, krylov::PcgOutcome)> {
        let rhs = grid::project_mean_zero(rhs);
        let wrap = |v: &[f64]| ScalarField::from_values_unchecked(&self.grid, v.to_vec());
        let outcome = krylov::pcg(
            |v| grid::project_mean_zero(&self.apply(&wrap(v))).into_values(),
            |v| self.precondition(&wrap(v)).into_values(),
            rhs.values(),
            tolerance,
            max_iters,
        )?;
        let psi = grid::project_mean_zero(&wrap(&outcome.solution));
        Ok((psi, outcome))
    }
}

/// `L(psi) = (u^{ia} psi_ab u^{bj})_{ij}` at `p`.
pub fn linearized_apply(p: &Potential, psi: &ScalarField) -> Result<ScalarField> {
    Ok(LinearizedOperator::at(p, potential::DEFAULT_CONVEXITY_FLOOR)?.apply(psi))
}

/// `mean(-log det u_ij + A phi)`.
pub fn functional_value(p: &Potential, a: &ScalarField) -> Result<f64> {
    potential::ensure_convex(p, potential::DEFAULT_CONVEXITY_FLOOR)?;
    functional_unchecked(p, a)
}

fn functional_unchecked(p: &Potential, a: &ScalarField) -> Result<f64> {
    let det = potential::det_hessian(&potential::hessian_u(p));
    if let Some((node, _)) = det.values().iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
        return Err(Error::NotConvex {
            node,
            min_eigenvalue: f64::NAN,
        });
    }
    let integrand = det.zip_map(p.perturbation(), |d, _| -d.ln());
    Ok(grid::mean(&integrand) + p.perturbation().inner(a))
}

/// Second derivative of `F_A` along `phi_t = (1 - t) phi0 + t phi1`:
/// `mean(u_t^{ia} psi_ab u_t^{bj} psi_ij)` with `psi = phi1 - phi0`.
pub fn functional_second_derivative(p0: &Potential, p1: &Potential, t: f64) -> Result<f64> {
    if p0.grid() != p1.grid() || p0.base() != p1.base() {
        return Err(Error::FieldMismatch("potentials must share grid and base".into()));
    }
    let phi_t = &(p0.perturbation() * (1.0 - t)) + &(p1.perturbation() * t);
    let pt = p0.with_perturbation(phi_t)?;
    let inverse = potential::inverse_hessian(&potential::hessian_u(&pt))?;
    let h = grid::hessian(&(p1.perturbation() - p0.perturbation()));
    let values: Vec<f64> = (0..pt.grid().len())
        .into_par_iter()
        .map(|node| {
            let a = inverse.node_matrix(node) * h.node_matrix(node);
            (&a * &a).trace()
        })
        .collect();
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Attainable sup-norm residual in double precision: node rounding of `phi` and of
/// `u^{ij}` amplified by the fourth- and second-order symbols at the band edge.
pub fn residual_floor(p: &Potential, inverse_sup: f64) -> f64 {
    let grid = p.grid();
    let two_pi = 2.0 * std::f64::consts::PI;
    let k2: f64 = grid
        .shape()
        .iter()
        .map(|&n| (two_pi * n as f64 / 2.0).powi(2))
        .sum();
    let dim = grid.dim() as f64;
    f64::EPSILON
        * dim
        * dim
        * (k2 * inverse_sup + k2 * k2 * inverse_sup * inverse_sup * p.perturbation().sup_norm())
}

/// Sup-norm residual of `abreu_forward(p) = a` together with the tolerance it is
/// held to, `max(tolerance, roundoff floor)`.
pub fn solution_residual(p: &Potential, a: &ScalarField, tolerance: f64) -> Result<(f64, f64)> {
    if a.grid() != p.grid() {
        return Err(Error::FieldMismatch("right-hand side and potential use different grids".into()));
    }
    let inverse = potential::inverse_hessian(&potential::hessian_u(p))?;
    let residual = (&grid::second_divergence(&inverse) - a).sup_norm();
    Ok((residual, tolerance.max(residual_floor(p, inverse.sup_norm()))))
}

fn check_mean(a: &ScalarField) -> Result<()> {
    let m = grid::mean(a);
    if m.abs() > MEAN_TOLERANCE {
        return Err(Error::MeanNotZero { mean: m });
    }
    Ok(())
}

struct Linearization {
    operator: LinearizedOperator,
    residual: ScalarField,
    residual_norm: f64,
    tolerance: f64,
}

fn linearize(p: &Potential, target: &ScalarField, cfg: &SolverConfig) -> Result<Linearization> {
    let inverse = potential::inverse_hessian_with_floor(&potential::hessian_u(p), cfg.convexity_floor)?;
    let tolerance = cfg.newton_tolerance.max(residual_floor(p, inverse.sup_norm()));
    let residual = &grid::second_divergence(&inverse) - target;
    let residual_norm = residual.sup_norm();
    Ok(Linearization {
        operator: LinearizedOperator::from_inverse(p.base(), inverse),
        residual,
        residual_norm,
        tolerance,
    })
}

fn damped_update(p: &Potential, target: &ScalarField, lin: &Linearization, cfg: &SolverConfig) -> Result<Potential> {
    if lin.residual_norm == 0.0 {
        return Ok(p.clone());
    }
    // F(phi + psi) ~ F(phi) - L psi, so the correction solves L psi = F(phi) - target
    let (psi, _) = lin
        .operator
        .solve(&lin.residual, cfg.linear_tolerance, cfg.max_linear_iters)?;
    let start = functional_unchecked(p, target)?;
    let slack = 1e-13 * (1.0 + start.abs());
    let mut alpha = 1.0;
    let mut last_failure = None;
    for _ in 0..=LINE_SEARCH_STEPS {
        let trial = p.with_perturbation(p.perturbation() + &(&psi * alpha))?;
        match potential::ensure_convex(&trial, cfg.convexity_floor) {
            Ok(()) => {
                let value = functional_unchecked(&trial, target)?;
                if value <= start + slack {
                    return Ok(trial);
                }
                last_failure = Some(Error::LineSearchFailure { start, last: value });
            }
            Err(e) => last_failure = Some(e),
        }
        alpha *= cfg.damping;
    }
    Err(last_failure.expect("line search ran at least once"))
}

/// One damped Newton corrector step towards `abreu_forward = target`.
pub fn newton_step(p: &Potential, target: &ScalarField, cfg: &SolverConfig) -> Result<Potential> {
    cfg.validate()?;
    check_mean(target)?;
    let lin = linearize(p, target, cfg)?;
    damped_update(p, target, &lin, cfg)
}

/// Result of Newton iterations at a fixed target.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub potential: Potential,
    pub iterations: usize,
    pub residual_norm: f64,
    pub tolerance: f64,
}

/// Newton iterations until the sup-norm residual is within
/// `max(newton_tolerance, roundoff floor)`.
pub fn newton_solve(start: &Potential, target: &ScalarField, cfg: &SolverConfig) -> Result<NewtonOutcome> {
    cfg.validate()?;
    check_mean(target)?;
    let mut p = start.clone();
    for iterations in 0..=cfg.max_newton_iters {
        let lin = linearize(&p, target, cfg)?;
        if lin.residual_norm <= lin.tolerance {
            return Ok(NewtonOutcome {
                potential: p,
                iterations,
                residual_norm: lin.residual_norm,
                tolerance: lin.tolerance,
            });
        }
        if iterations == cfg.max_newton_iters || !lin.residual_norm.is_finite() {
            return Err(Error::NewtonDivergence {
                iterations,
                residual: lin.residual_norm,
            });
        }
        p = damped_update(&p, target, &lin, cfg)?;
    }
    unreachable!("loop returns on its last iteration")
}

fn record(outcome: &NewtonOutcome, t: f64, target: &ScalarField) -> Result<StepRecord> {
    let p = &outcome.potential;
    let h = potential::hessian_u(p);
    let det = potential::det_hessian(&h);
    let extremes = potential::eigenvalue_extremes(&h);
    Ok(StepRecord {
        t,
        newton_iterations: outcome.iterations,
        final_residual_norm: outcome.residual_norm,
        effective_tolerance: outcome.tolerance,
        functional_value: functional_unchecked(p, target)?,
        det_min: det.min(),
        det_max: det.max(),
        convexity_margin: extremes.iter().fold(f64::INFINITY, |m, e| m.min(e.0)),
        eig_max: extremes.iter().fold(f64::NEG_INFINITY, |m, e| m.max(e.1)),
    })
}

fn retriable(e: &Error) -> bool {
    matches!(
        e,
        Error::NotConvex { .. }
            | Error::LinearSolveFailure { .. }
            | Error::LineSearchFailure { .. }
            | Error::NewtonDivergence { .. }
    )
}

/// Solves `abreu_forward(u) = A` for `u = Q + phi` starting from `phi = 0`.
pub fn continuity_solve(a: &ScalarField, base: QuadraticBase, cfg: &SolverConfig) -> Result<(Potential, ContinuityTrace)> {
    let start = Potential::flat(a.grid(), base)?;
    continuity_solve_from(a, &start, cfg)
}

/// Continuation from an arbitrary convex start `phi0` along the targets
/// `(1 - t) F(phi0) + t A`, which reduce to `t A` for the flat start.
pub fn continuity_solve_from(a: &ScalarField, start: &Potential, cfg: &SolverConfig) -> Result<(Potential, ContinuityTrace)> {
    cfg.validate()?;
    check_mean(a)?;
    if a.grid() != start.grid() {
        return Err(Error::FieldMismatch("right-hand side and start potential use different grids".into()));
    }
    let start_rhs = grid::project_mean_zero(&potential::abreu_forward_with_floor(start, cfg.convexity_floor)?);
    let a = grid::project_mean_zero(a);
    let target_at = |t: f64| &(&start_rhs * (1.0 - t)) + &(&a * t);

    let mut trace = ContinuityTrace::default();
    let mut current = start.clone();
    let mut t = 0.0;
    let mut step = if (&a - &start_rhs).sup_norm() == 0.0 {
        1.0
    } else {
        cfg.initial_t_step
    };
    while t < 1.0 {
        let t_try = if t + step >= 1.0 { 1.0 } else { t + step };
        let target = target_at(t_try);
        match newton_solve(&current, &target, cfg) {
            Ok(outcome) => {
                trace.steps.push(record(&outcome, t_try, &target)?);
                if outcome.iterations <= EASY_NEWTON_ITERATIONS {
                    step = (2.0 * step).min(1.0);
                }
                t = t_try;
                current = outcome.potential;
            }
            Err(e) if retriable(&e) => {
                step *= 0.5;
                if step < cfg.min_t_step {
                    return Err(Error::StepFloorReached {
                        last_t: t,
                        min_step: cfg.min_t_step,
                        cause: Some(Box::new(Error::AtStep {
                            t: t_try,
                            source: Box::new(e),
                        })),
                    });
                }
            }
            Err(e) => {
                return Err(Error::AtStep {
                    t: t_try,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok((current, trace))
}
