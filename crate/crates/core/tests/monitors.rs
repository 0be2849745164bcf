mod common;

use std::f64::consts::PI;

use abreu_core::estimates::{self, MonitorConfig};
use abreu_core::grid::ScalarField;
use abreu_core::legendre::{self, GradientMapSolveConfig};
use abreu_core::potential::{self, Potential, QuadraticBase};
use abreu_core::solver::{self, SolverConfig};
use common::*;

fn solve(a: &ScalarField) -> Potential {
    let dim = a.grid().dim();
    solver::continuity_solve(a, QuadraticBase::identity(dim), &SolverConfig::default()).unwrap().0
}

#[test]
fn certified_solutions_pass_every_monitor() {
    let one = cosine_rhs(&grid(1, 64), 0.01);
    let two = ScalarField::from_fn(&grid(2, 64), |x| 0.5 * ((2.0 * PI * x[0]).cos() + (2.0 * PI * x[1]).cos()));
    for a in [one, two] {
        let p = solve(&a);
        let report = estimates::bounds_report(&p, &a, &MonitorConfig::default()).unwrap();
        assert!(report.passed(), "{:?}", report.failed());
        assert_eq!(report.constant_mode, "measured");
        assert!(report.det_min <= report.det_max && report.eig_min <= report.eig_max);
        assert!(report.sup_a_tilde <= report.sup_a * (1.0 + 1e-6));
        for name in ["det_inverse_at_p", "beta_trace_at_q", "det_u_upper", "det_u_lower", "minimizer_in_ball"] {
            assert!(report.inequalities.iter().any(|i| i.name == name), "{name}");
        }
    }
}

#[test]
fn corrupted_dual_is_flagged() {
    let g = grid(1, 64);
    let a = cosine_rhs(&g, 0.01);
    let p = solve(&a);
    let dual = legendre::legendre_dual(&p, &GradientMapSolveConfig::default()).unwrap();
    let atilde = legendre::pullback_with(&a, &dual.preimages);
    let bump = ScalarField::from_fn(&g, |y| 0.3 * (2.0 * PI * y[0]).cos());
    let corrupted = dual.dual.with_perturbation(dual.dual.perturbation() + &bump).unwrap();
    let upper = estimates::evaluate_upper_bound(&corrupted, &atilde, estimates::DEFAULT_SLACK);
    let lower = estimates::evaluate_lower_bound(&corrupted, &atilde, estimates::DEFAULT_SLACK);
    assert!(upper.inequalities.iter().chain(&lower.inequalities).any(|i| !i.satisfied));
    assert!(estimates::upper_bound_monitor(&corrupted, &atilde, estimates::DEFAULT_SLACK).is_err());
    assert!(estimates::lower_bound_monitor(&corrupted, &atilde, estimates::DEFAULT_SLACK).is_err());
}

#[test]
fn corrupted_primal_fails_the_report() {
    let g = grid(1, 64);
    let a = cosine_rhs(&g, 0.01);
    let p = solve(&a);
    let bump = ScalarField::from_fn(&g, |x| 0.003 * (4.0 * PI * x[0]).cos());
    let corrupted = p.with_perturbation(p.perturbation() + &bump).unwrap();
    let report = estimates::bounds_report(&corrupted, &a, &MonitorConfig::default()).unwrap();
    assert!(!report.passed());
    assert!(report.failed().iter().any(|name| name == "dual_residual"));
}

#[test]
fn oscillation_never_exceeds_dimension() {
    let mut r = rng(43);
    let mut accepted = 0;
    for k in 0..300 {
        let dim = 1 + k % 3;
        let g = grid(dim, if dim == 3 { 8 } else { 16 });
        // Hessian spreads straddling 1, kept only when still convex
        let f = random_field(&mut r, &g, 2);
        let phi = &f * ((0.6 + 0.1 * (k % 7) as f64) / hessian_spread(&f));
        let Ok(p) = Potential::new(QuadraticBase::identity(dim), phi) else { continue };
        if potential::convexity_margin(&p) <= 1e-8 {
            continue;
        }
        accepted += 1;
        let c = estimates::c0_c1_report(&p);
        assert!(c.holds(), "oscillation {} in dimension {dim}", c.oscillation);
    }
    assert!(accepted >= 100);
}

#[test]
fn beta_is_admissible_on_the_manufactured_dual() {
    let g = grid(1, 64);
    let p = solve(&cosine_rhs(&g, 0.01));
    let v = legendre::legendre_transform(&p, &GradientMapSolveConfig::default()).unwrap();
    let beta = estimates::choose_beta(&v);
    assert!(beta > 0.0 && beta.log2().fract() == 0.0);
    let grad = abreu_core::grid::gradient(v.perturbation());
    for node in 0..g.len() {
        let w = grad[0].values()[node];
        for shift in -4..4 {
            let y = g.coordinates(node)[0] + shift as f64;
            let grad_v2 = (y + w).powi(2);
            assert!(beta * grad_v2 <= 0.25 * y * y + 1.0 + 1e-12);
            assert!(4.0 * beta * beta * grad_v2 <= beta * (1.0 + 1e-12));
        }
    }
    assert!(estimates::beta_for(1, 2.0 * 8.0) <= estimates::beta_for(1, 8.0) / 2.0);
}

#[test]
fn eigenvalues_bracket_determinants_along_the_path() {
    let g = grid(1, 64);
    let a = cosine_rhs(&g, 0.01);
    let (_, trace) = solver::continuity_solve(&a, QuadraticBase::identity(1), &SolverConfig::default()).unwrap();
    for step in &trace.steps {
        assert!(step.convexity_margin <= step.det_min * (1.0 + 1e-12));
        assert!(step.det_max <= step.eig_max * (1.0 + 1e-12));
    }
    let p = Potential::new(QuadraticBase::identity(1), cosine_phi(&g, 0.01)).unwrap();
    let (c1, c2) = estimates::eigenvalue_bounds(&p);
    let spread = 0.04 * PI * PI;
    assert!((c1 - (1.0 - spread)).abs() < 1e-12 && (c2 - (1.0 + spread)).abs() < 1e-12);
}
