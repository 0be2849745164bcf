mod common;

use std::f64::consts::PI;

use abreu_core::grid::{self, ScalarField};
use abreu_core::legendre::{self, GradientMapSolveConfig};
use abreu_core::potential::{Potential, QuadraticBase};
use abreu_core::solver::{self, SolverConfig};
use common::*;
use rand::Rng;

fn manufactured_solution() -> (Potential, ScalarField) {
    let g = grid(1, 64);
    let a = cosine_rhs(&g, 0.01);
    let (p, _) = solver::continuity_solve(&a, QuadraticBase::identity(1), &SolverConfig::default()).unwrap();
    (p, a)
}

/// Root of `x - 2 pi eps sin(2 pi x) = y` by bisection; the map is increasing for
/// `4 pi^2 eps < 1`.
fn bisect_preimage(y: f64, eps: f64) -> f64 {
    let f = |x: f64| x - 2.0 * PI * eps * (2.0 * PI * x).sin() - y;
    let (mut lo, mut hi) = (y - 1.0, y + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn involution_on_random_potentials() {
    let mut r = rng(31);
    let cfg = GradientMapSolveConfig::default();
    // spectral radius 0.7 leaves convexity margin 0.3; the dual is less smooth there
    // and needs the finer grid
    for (dim, n, strength, count) in [(1, 64, 0.4, 10), (2, 64, 0.4, 3), (1, 128, 0.7, 10), (2, 128, 0.7, 2)] {
        let g = grid(dim, n);
        for _ in 0..count {
            let p = random_potential(&mut r, &g, 2, strength);
            let dual = legendre::legendre_dual(&p, &cfg).unwrap();
            let back = legendre::legendre_transform(&dual.dual, &cfg).unwrap();
            let error = sup_diff(back.perturbation(), p.perturbation());
            assert!(error <= 1e-8, "n {n} strength {strength}: {error:e}");
            assert!(grid::mean(dual.dual.perturbation()).abs() < 1e-15);
        }
    }
}

#[test]
fn determinants_of_dual_hessians_are_reciprocal() {
    let mut r = rng(33);
    let cfg = GradientMapSolveConfig::default();
    for dim in [1, 2] {
        let g = grid(dim, 64);
        for _ in 0..5 {
            let p = random_potential(&mut r, &g, 2, 0.3);
            let dual = legendre::legendre_dual(&p, &cfg).unwrap();
            let defect = legendre::determinant_duality_defect(&p, &dual);
            assert!(defect <= 1e-8, "{defect:e}");
        }
    }
}

#[test]
fn gradient_maps_are_mutually_inverse() {
    let mut r = rng(37);
    let cfg = GradientMapSolveConfig::default();
    for dim in [1, 2] {
        let g = grid(dim, 64);
        let p = random_potential(&mut r, &g, 2, 0.4);
        let v = legendre::legendre_transform(&p, &cfg).unwrap();
        let points: Vec<Vec<f64>> = (0..50).map(|_| (0..dim).map(|_| r.gen_range(-1.0..2.0)).collect()).collect();
        assert!(legendre::gradient_roundtrip_defect(&p, &v, &points) <= 1e-8);
    }
}

#[test]
fn pullback_does_not_increase_sup() {
    let mut r = rng(41);
    let cfg = GradientMapSolveConfig::default();
    for dim in [1, 2] {
        let g = grid(dim, 32);
        for _ in 0..5 {
            let p = random_potential(&mut r, &g, 2, 0.5);
            let a = random_field(&mut r, &g, 3);
            let atilde = legendre::pullback_rhs(&a, &p, &cfg).unwrap();
            // off-node samples of the interpolant may exceed the node values of `a`
            assert!(atilde.sup_norm() <= interpolant_sup(&a, 8) * (1.0 + 1e-6));
        }
    }
}

#[test]
fn cosine_dual_matches_bisection() {
    let eps = 0.01;
    let g = grid(1, 64);
    let p = Potential::new(QuadraticBase::identity(1), cosine_phi(&g, eps)).unwrap();
    let dual = legendre::legendre_dual(&p, &GradientMapSolveConfig::default()).unwrap();
    for (node, x) in dual.preimages.iter().enumerate() {
        assert!((x[0] - bisect_preimage(g.coordinates(node)[0], eps)).abs() < 1e-12);
    }
}

#[test]
fn manufactured_dual_satisfies_the_dual_equation() {
    let (p, a) = manufactured_solution();
    let dual = legendre::legendre_dual(&p, &GradientMapSolveConfig::default()).unwrap();
    let atilde = legendre::pullback_with(&a, &dual.preimages);
    let residual = legendre::dual_residual(&dual.dual, &atilde).unwrap().sup_norm();
    assert!(residual <= 1e-6, "{residual:e}");
    assert!(legendre::determinant_duality_defect(&p, &dual) <= 1e-8);
}

#[test]
fn manufactured_pullback_sup_matches_dense_sampling() {
    let eps = 0.01;
    let (p, a) = manufactured_solution();
    let atilde = legendre::pullback_rhs(&a, &p, &GradientMapSolveConfig::default()).unwrap();
    // A(x(y)) on a fine grid in y, with both the preimage and A taken in closed form
    let fine = grid(1, 4096);
    let dense_sup = (0..fine.len())
        .map(|k| cosine_rhs_at(bisect_preimage(fine.coordinates(k)[0], eps), eps).abs())
        .fold(0.0, f64::max);
    assert!((atilde.sup_norm() - dense_sup).abs() <= 1e-6 * dense_sup);
}
