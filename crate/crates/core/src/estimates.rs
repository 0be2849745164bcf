//! Runtime checks of the a-priori estimates: oscillation and gradient bounds for
//! `phi`, the determinant bounds obtained from the test functions
//! `f = L + |y|^2/2 + 2 psi` and `g = -L - beta |grad v|^2 + v` on the dual side,
//! and uniform eigenvalue bounds of `D^2 u`.
//!
//! Intermediate constants with no closed form are assembled from measured values
//! of the discrete solution ("measured-constant mode").

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{self, PeriodicGrid, ScalarField};
use crate::legendre::{self, GradientMapSolveConfig};
use crate::potential::{self, Potential};

pub const DEFAULT_SLACK: f64 = 0.05;
pub const DEFAULT_DUAL_RESIDUAL_TOLERANCE: f64 = 1e-6;
pub const CONSTANT_MODE: &str = "measured";

/// One checked inequality `lhs <= rhs`, accepted up to a relative slack.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

impl Inequality {
    pub fn new(name: &str, lhs: f64, rhs: f64, slack: f64) -> Self {
        let satisfied = lhs.is_finite() && rhs.is_finite() && lhs <= rhs + slack * rhs.abs();
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            satisfied,
        }
    }
}

fn violations(inequalities: &[Inequality]) -> Vec<String> {
    inequalities
        .iter()
        .filter(|i| !i.satisfied)
        .map(|i| i.name.clone())
        .collect()
}

fn check_all(inequalities: &[Inequality]) -> Result<()> {
    let failed = violations(inequalities);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::MonitorViolation { failed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C0C1Report {
    pub sup_phi: f64,
    pub sup_grad_phi: f64,
    pub oscillation: f64,
    pub osc_bound: f64,
}

impl C0C1Report {
    pub fn holds(&self) -> bool {
        self.oscillation <= self.osc_bound
    }
}

/// `sup |phi|`, `sup |grad phi|` and `osc phi` against the bound `n`.
pub fn c0_c1_report(p: &Potential) -> C0C1Report {
    let phi = p.perturbation();
    let grad = grid::gradient(phi);
    let sup_grad_phi = (0..phi.grid().len())
        .map(|node| grad.iter().map(|g| g.values()[node].powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    C0C1Report {
        sup_phi: phi.sup_norm(),
        sup_grad_phi,
        oscillation: phi.max() - phi.min(),
        osc_bound: p.dim() as f64,
    }
}

/// `(c1, c2)`: extreme eigenvalues of `D^2 u` over the grid.
pub fn eigenvalue_bounds(p: &Potential) -> (f64, f64) {
    potential::eigenvalue_extremes(&potential::hessian_u(p))
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| (lo.min(a), hi.max(b)))
}

/// Largest power of two `beta` with `beta |y + w|^2 <= |y|^2/4 + 1` for all `y` and
/// `|w| <= g`, and `4 beta sup |grad v|^2 <= 1` on `[-4,4]^n`.
///
/// The first condition reduces to `beta <= 1/(4 + g^2)` (the minimum over `r = |y|`
/// of `(r^2/4 + 1)/(r + g)^2` sits at `r = 4/g`), the second to
/// `beta <= 1/(4 (4 sqrt(n) + g)^2)`.
pub fn beta_for(dim: usize, sup_grad_psi: f64) -> f64 {
    let g = sup_grad_psi;
    let n = dim as f64;
    let reach2 = 16.0 * n + 8.0 * n.sqrt() * g + g * g;
    let limit = (1.0 / (4.0 + g * g)).min(1.0 / (4.0 * reach2));
    let mut beta = 1.0;
    while beta > limit {
        beta *= 0.5;
    }
    beta
}

pub fn choose_beta(v: &Potential) -> f64 {
    beta_for(v.dim(), c0_c1_report(v).sup_grad_phi)
}

/// Nodes of the tiled grid `[lo, hi]^n` (in units of the period), with their
/// fundamental-domain node and coordinates.
fn tiled_points(grid: &PeriodicGrid, lo: i64, hi: i64) -> (usize, impl Fn(usize) -> (usize, Vec<f64>) + Sync + '_) {
    let shape = grid.shape();
    let extents: Vec<i64> = shape.iter().map(|&n| (hi - lo) * n as i64 + 1).collect();
    let count = extents.iter().product::<i64>() as usize;
    let decode = move |mut flat: usize| {
        let dim = shape.len();
        let mut multi = vec![0i64; dim];
        for axis in (0..dim).rev() {
            let e = extents[axis] as usize;
            multi[axis] = (flat % e) as i64 + lo * shape[axis] as i64;
            flat /= e;
        }
        let y = multi.iter().zip(shape).map(|(&k, &n)| k as f64 / n as f64).collect();
        (grid.wrap_index(&multi), y)
    };
    (count, decode)
}

fn tiled_argmin(grid: &PeriodicGrid, lo: i64, hi: i64, f: impl Fn(usize, &[f64]) -> f64 + Sync) -> (Vec<f64>, usize, f64) {
    let (count, decode) = tiled_points(grid, lo, hi);
    let (flat, value) = (0..count)
        .into_par_iter()
        .map(|flat| {
            let (node, y) = decode(flat);
            (flat, f(node, &y))
        })
        .reduce(
            || (usize::MAX, f64::INFINITY),
            |a, b| if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a },
        );
    let (node, y) = decode(flat);
    (y, node, value)
}

fn tiled_max(grid: &PeriodicGrid, lo: i64, hi: i64, f: impl Fn(usize, &[f64]) -> f64 + Sync) -> f64 {
    let (count, decode) = tiled_points(grid, lo, hi);
    (0..count)
        .into_par_iter()
        .map(|flat| {
            let (node, y) = decode(flat);
            f(node, &y)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

fn norm2(y: &[f64]) -> f64 {
    y.iter().map(|a| a * a).sum()
}

/// Nodewise data of the dual potential shared by both monitors.
struct DualData {
    dim: usize,
    psi: ScalarField,
    log_det: ScalarField,
    trace_inverse: Vec<f64>,
    trace: Vec<f64>,
    grad_psi: Vec<ScalarField>,
    sup_atilde: f64,
}

fn dual_data(v: &Potential, atilde: &ScalarField, floor: f64) -> std::result::Result<DualData, Inequality> {
    let margin = potential::convexity_margin(v);
    if !(margin > floor) {
        return Err(Inequality::new("dual_convexity", floor, margin, 0.0));
    }
    let h = potential::hessian_u(v);
    let inverse = potential::inverse_hessian(&h).map_err(|_| Inequality::new("dual_convexity", floor, margin, 0.0))?;
    let dim = v.dim();
    let len = v.grid().len();
    let trace_of = |m: &grid::SymMatrixField| (0..len).map(|k| (0..dim).map(|i| m.get(k, i, i)).sum()).collect();
    Ok(DualData {
        dim,
        psi: v.perturbation().clone(),
        log_det: potential::det_hessian(&h).map(f64::ln),
        trace_inverse: trace_of(&inverse),
        trace: trace_of(&h),
        grad_psi: grid::gradient(v.perturbation()),
        sup_atilde: atilde.sup_norm(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpperBound {
    /// Discrete minimizer of `f` over `[-1,1]^n`.
    pub minimizer: Vec<f64>,
    pub upper_constant_c: f64,
    pub c_prime: f64,
    pub inequalities: Vec<Inequality>,
}

/// Evaluates the upper-bound argument on `v`; violated inequalities are reported,
/// not raised.
pub fn evaluate_upper_bound(v: &Potential, atilde: &ScalarField, slack: f64) -> UpperBound {
    let data = match dual_data(v, atilde, potential::DEFAULT_CONVEXITY_FLOOR) {
        Ok(d) => d,
        Err(failed) => {
            return UpperBound {
                minimizer: vec![],
                upper_constant_c: f64::NAN,
                c_prime: f64::NAN,
                inequalities: vec![failed],
            }
        }
    };
    let grid = v.grid();
    let n = data.dim as f64;
    let (psi, log_det) = (data.psi.values(), data.log_det.values());
    let (p, p_node, f_min) = tiled_argmin(grid, -1, 1, |k, y| log_det[k] + 0.5 * norm2(y) + 2.0 * psi[k]);
    let c = (data.sup_atilde / n + 2.0).powf(n);
    // log det v(y) >= log det v(p) + f(p) - L(p) - (|y|^2/2 + 2 psi(y)) on the closed unit cube
    let sup_rest = tiled_max(grid, 0, 1, |k, y| 0.5 * norm2(y) + 2.0 * psi[k]);
    let c_prime = -c.ln() + (f_min - log_det[p_node]) - sup_rest;
    let det_u_max = (-data.log_det.min()).exp();
    let inequalities = vec![
        Inequality::new("trace_inverse_at_p", data.trace_inverse[p_node], data.sup_atilde + 2.0 * n, slack),
        Inequality::new("det_inverse_at_p", (-log_det[p_node]).exp(), c, slack),
        Inequality::new("det_u_upper", det_u_max, (-c_prime).exp(), slack),
    ];
    UpperBound {
        minimizer: p,
        upper_constant_c: c,
        c_prime,
        inequalities,
    }
}

pub fn upper_bound_monitor(v: &Potential, atilde: &ScalarField, slack: f64) -> Result<UpperBound> {
    let report = evaluate_upper_bound(v, atilde, slack);
    check_all(&report.inequalities)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBound {
    pub beta: f64,
    /// Discrete minimizer of `g` over `[-4,4]^n`.
    pub minimizer: Vec<f64>,
    pub c_double_prime: f64,
    pub inequalities: Vec<Inequality>,
}

pub fn evaluate_lower_bound(v: &Potential, atilde: &ScalarField, slack: f64) -> LowerBound {
    let data = match dual_data(v, atilde, potential::DEFAULT_CONVEXITY_FLOOR) {
        Ok(d) => d,
        Err(failed) => {
            return LowerBound {
                beta: f64::NAN,
                minimizer: vec![],
                c_double_prime: f64::NAN,
                inequalities: vec![failed],
            }
        }
    };
    let grid = v.grid();
    let n = data.dim as f64;
    let beta = choose_beta(v);
    let (psi, log_det, grad) = (data.psi.values(), data.log_det.values(), &data.grad_psi);
    let grad_v2 = |k: usize, y: &[f64]| y.iter().zip(grad).map(|(yi, g)| (yi + g.values()[k]).powi(2)).sum::<f64>();
    let v_at = |k: usize, y: &[f64]| 0.5 * norm2(y) + psi[k];
    let (q, q_node, _) = tiled_argmin(grid, -4, 4, |k, y| -log_det[k] - beta * grad_v2(k, y) + v_at(k, y));
    let lhs = beta * data.trace[q_node];
    // AM-GM at q, then g(y) >= g(q) on the closed unit cube
    let log_det_q_bound = n * ((data.sup_atilde + n) / (beta * n)).ln();
    let sup_rest = tiled_max(grid, 0, 1, |k, y| v_at(k, y) - beta * grad_v2(k, y));
    let c_double_prime = log_det_q_bound + beta * grad_v2(q_node, &q) - v_at(q_node, &q) + sup_rest;
    let det_u_min = (-data.log_det.max()).exp();
    let beta_condition = 4.0 * beta * beta * grad_v2(q_node, &q);
    let inequalities = vec![
        Inequality::new("beta_trace_at_q", lhs, data.sup_atilde + n, slack),
        Inequality::new("beta_gradient_at_q", beta_condition, beta, 0.0),
        Inequality::new("minimizer_in_ball", norm2(&q).sqrt(), 4.0, 0.0),
        Inequality::new("det_u_lower", (-c_double_prime).exp(), det_u_min, slack),
    ];
    LowerBound {
        beta,
        minimizer: q,
        c_double_prime,
        inequalities,
    }
}

pub fn lower_bound_monitor(v: &Potential, atilde: &ScalarField, slack: f64) -> Result<LowerBound> {
    let report = evaluate_lower_bound(v, atilde, slack);
    check_all(&report.inequalities)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorConfig {
    pub slack: f64,
    pub dual_residual_tolerance: f64,
    pub gradient_map: GradientMapSolveConfig,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            slack: DEFAULT_SLACK,
            dual_residual_tolerance: DEFAULT_DUAL_RESIDUAL_TOLERANCE,
            gradient_map: GradientMapSolveConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub constant_mode: &'static str,
    pub sup_phi: f64,
    pub sup_grad_phi: f64,
    pub det_min: f64,
    pub det_max: f64,
    pub eig_min: f64,
    pub eig_max: f64,
    #[serde(rename = "sup_A")]
    pub sup_a: f64,
    #[serde(rename = "sup_A_tilde")]
    pub sup_a_tilde: f64,
    pub upper_constant_c: f64,
    pub c_prime: f64,
    pub c_double_prime: f64,
    pub beta: f64,
    pub dual_residual: f64,
    pub determinant_duality_defect: f64,
    pub inequalities: Vec<Inequality>,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.inequalities.iter().all(|i| i.satisfied)
    }

    pub fn failed(&self) -> Vec<String> {
        violations(&self.inequalities)
    }
}

/// Runs every monitor on a primal solution `p` of `abreu_forward(p) = a`.
///
/// Fails only if `p` itself is unusable (not convex, gradient map not invertible);
/// violated inequalities are recorded in the report.
pub fn bounds_report(p: &Potential, a: &ScalarField, cfg: &MonitorConfig) -> Result<BoundsReport> {
    potential::ensure_convex(p, potential::DEFAULT_CONVEXITY_FLOOR)?;
    let dual = legendre::legendre_dual(p, &cfg.gradient_map)?;
    bounds_report_with_dual(p, a, &dual, cfg)
}

/// As [`bounds_report`], with the Legendre dual of `p` supplied by the caller.
pub fn bounds_report_with_dual(
    p: &Potential,
    a: &ScalarField,
    dual: &legendre::LegendreDual,
    cfg: &MonitorConfig,
) -> Result<BoundsReport> {
    potential::ensure_convex(p, potential::DEFAULT_CONVEXITY_FLOOR)?;
    let atilde = legendre::pullback_with(a, &dual.preimages);
    let v = &dual.dual;
    let c0c1 = c0_c1_report(p);
    let (eig_min, eig_max) = eigenvalue_bounds(p);
    let det = potential::det_hessian(&potential::hessian_u(p));
    let (det_min, det_max) = (det.min(), det.max());
    let n = p.dim() as i32;

    let dual_residual = match legendre::dual_residual(v, &atilde) {
        Ok(r) => r.sup_norm(),
        Err(_) => f64::INFINITY,
    };
    let determinant_duality_defect = legendre::determinant_duality_defect(p, dual);
    let upper = evaluate_upper_bound(v, &atilde, cfg.slack);
    let lower = evaluate_lower_bound(v, &atilde, cfg.slack);

    let mut inequalities = vec![
        Inequality::new("oscillation", c0c1.oscillation, c0c1.osc_bound, 0.0),
        Inequality::new("eigen_det_lower", eig_min.powi(n), det_min, 1e-12),
        Inequality::new("eigen_det_upper", det_max, eig_max.powi(n), 1e-12),
        Inequality::new("dual_residual", dual_residual, cfg.dual_residual_tolerance, 0.0),
    ];
    inequalities.extend(upper.inequalities);
    inequalities.extend(lower.inequalities);

    Ok(BoundsReport {
        constant_mode: CONSTANT_MODE,
        sup_phi: c0c1.sup_phi,
        sup_grad_phi: c0c1.sup_grad_phi,
        det_min,
        det_max,
        eig_min,
        eig_max,
        sup_a: a.sup_norm(),
        sup_a_tilde: atilde.sup_norm(),
        upper_constant_c: upper.upper_constant_c,
        c_prime: upper.c_prime,
        c_double_prime: lower.c_double_prime,
        beta: lower.beta,
        dual_residual,
        determinant_duality_defect,
        inequalities,
    })
}
