//! Preconditioned conjugate gradients for symmetric positive (semi-)definite
//! operators given as closures.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PcgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `sqrt(r^T P r)` relative to its initial value.
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` from `x = 0`, stopping once the preconditioned residual norm
/// has dropped by `tolerance`.
///
/// Both closures must be symmetric and act on the same subspace as `b`; the
/// preconditioner must be positive there.
pub fn pcg<A, P>(apply: A, precondition: P, rhs: &[f64], tolerance: f64, max_iters: usize) -> Result<PcgOutcome>
where
    A: Fn(&[f64]) -> Vec<f64>,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z = precondition(&r);
    let mut rz = dot(&r, &z);
    if rz <= 0.0 {
        return Ok(PcgOutcome {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let initial = rz.sqrt();
    let mut p = z.clone();
    let mut relative = 1.0;
    for iter in 1..=max_iters {
        let ap = apply(&p);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::LinearSolveFailure {
                iterations: iter,
                relative_residual: relative,
            });
        }
        let alpha = rz / curvature;
        for ((xi, ri), (pi, api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        relative = rz_new.max(0.0).sqrt() / initial;
        if relative <= tolerance {
            return Ok(PcgOutcome {
                solution: x,
                iterations: iter,
                relative_residual: relative,
            });
        }
        let beta = rz_new / rz;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
        rz = rz_new;
    }
    Err(Error::LinearSolveFailure {
        iterations: max_iters,
        relative_residual: relative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        // tridiagonal [2 -1; -1 2 -1; ...]
        let n = 20;
        let apply = |v: &[f64]| {
            (0..n)
                .map(|i| {
                    let left = if i > 0 { v[i - 1] } else { 0.0 };
                    let right = if i + 1 < n { v[i + 1] } else { 0.0 };
                    2.0 * v[i] - left - right
                })
                .collect::<Vec<_>>()
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let out = pcg(apply, |r| r.to_vec(), &b, 1e-12, 100).unwrap();
        let check = apply(&out.solution);
        for (c, bi) in check.iter().zip(&b) {
            assert!((c - bi).abs() < 1e-10);
        }
        assert!(out.iterations <= n);
    }

    #[test]
    fn exact_preconditioner_converges_in_one_iteration() {
        let diag = [1.0, 4.0, 9.0, 16.0];
        let apply = |v: &[f64]| v.iter().zip(&diag).map(|(a, d)| a * d).collect::<Vec<_>>();
        let precondition = |v: &[f64]| v.iter().zip(&diag).map(|(a, d)| a / d).collect::<Vec<_>>();
        let out = pcg(apply, precondition, &[1.0, 1.0, 1.0, 1.0], 1e-12, 10).unwrap();
        assert_eq!(out.iterations, 1);
        assert!((out.solution[3] - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let out = pcg(|v| v.to_vec(), |v| v.to_vec(), &[0.0; 5], 1e-12, 10).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.solution.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indefinite_operator_fails() {
        let apply = |v: &[f64]| v.iter().map(|a| -a).collect::<Vec<_>>();
        let err = pcg(apply, |v| v.to_vec(), &[1.0, 2.0], 1e-12, 10).unwrap_err();
        assert!(matches!(err, Error::LinearSolveFailure { .. }));
    }

    #[test]
    fn iteration_cap_reports_failure() {
        let n = 50;
        let apply = |v: &[f64]| (0..n).map(|i| (i + 1) as f64 * v[i]).collect::<Vec<_>>();
        let b = vec![1.0; n];
        assert!(matches!(
            pcg(apply, |v| v.to_vec(), &b, 1e-14, 3),
            Err(Error::LinearSolveFailure { iterations: 3, .. })
        ));
    }
}
