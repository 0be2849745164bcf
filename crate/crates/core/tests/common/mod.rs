//! Oracles and random inputs shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use abreu_core::grid::{self, PeriodicGrid, ScalarField};
use abreu_core::potential::{self, Potential, QuadraticBase};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn grid(dim: usize, n: usize) -> PeriodicGrid {
    PeriodicGrid::uniform(dim, n).unwrap()
}

/// `phi* = eps cos(2 pi x)`.
pub fn cosine_phi(g: &PeriodicGrid, eps: f64) -> ScalarField {
    ScalarField::from_fn(g, |x| eps * (2.0 * PI * x[0]).cos())
}

/// `(1/u'')''` for `u'' = 1 - 4 pi^2 eps cos(2 pi x)`, differentiated by hand:
/// with `h = u''`, `(1/h)'' = 2 h'^2 / h^3 - h'' / h^2`.
pub fn cosine_rhs_at(x: f64, eps: f64) -> f64 {
    let k = 2.0 * PI;
    let (c, s) = ((k * x).cos(), (k * x).sin());
    let h = 1.0 - k * k * eps * c;
    let h1 = k.powi(3) * eps * s;
    let h2 = k.powi(4) * eps * c;
    2.0 * h1 * h1 / h.powi(3) - h2 / (h * h)
}

pub fn cosine_rhs(g: &PeriodicGrid, eps: f64) -> ScalarField {
    ScalarField::from_fn(g, |x| cosine_rhs_at(x[0], eps))
}

/// `-1/4 (1/v'') (log v'')''` for `v'' = 1 - 4 pi^2 eps cos(2 pi x)`.
pub fn cosine_complex_curvature(g: &PeriodicGrid, eps: f64) -> ScalarField {
    let k = 2.0 * PI;
    ScalarField::from_fn(g, |x| {
        let (c, s) = ((k * x[0]).cos(), (k * x[0]).sin());
        let h = 1.0 - k * k * eps * c;
        let h1 = k.powi(3) * eps * s;
        let h2 = k.powi(4) * eps * c;
        -0.25 * (h2 / (h * h) - h1 * h1 / h.powi(3))
    })
}

/// Wavevectors with entries in `[-modes, modes]`, one of each `+-k` pair, no zero.
fn half_space(dim: usize, modes: i64) -> Vec<Vec<i64>> {
    let side = (2 * modes + 1) as usize;
    let mut out = Vec::new();
    for flat in 0..side.pow(dim as u32) {
        let mut rest = flat;
        let k: Vec<i64> = (0..dim)
            .map(|_| {
                let v = (rest % side) as i64 - modes;
                rest /= side;
                v
            })
            .collect();
        if let Some(first) = k.iter().find(|&&v| v != 0) {
            if *first > 0 {
                out.push(k);
            }
        }
    }
    out
}

/// Random trigonometric polynomial with modes up to `modes` per axis and mean zero.
pub fn random_field(rng: &mut ChaCha8Rng, g: &PeriodicGrid, modes: i64) -> ScalarField {
    let terms: Vec<(Vec<i64>, f64, f64)> = half_space(g.dim(), modes)
        .into_iter()
        .map(|k| {
            let decay = 1.0 / (1.0 + k.iter().map(|v| (v * v) as f64).sum::<f64>());
            (k, decay * rng.gen_range(-1.0..1.0), decay * rng.gen_range(-1.0..1.0))
        })
        .collect();
    ScalarField::from_fn(g, |x| {
        terms
            .iter()
            .map(|(k, a, b)| {
                let phase = 2.0 * PI * k.iter().zip(x).map(|(ki, xi)| *ki as f64 * xi).sum::<f64>();
                a * phase.cos() + b * phase.sin()
            })
            .sum()
    })
}

/// Largest `|lambda|` of `D^2 f` over the nodes.
pub fn hessian_spread(f: &ScalarField) -> f64 {
    potential::eigenvalue_extremes(&grid::hessian(f))
        .into_iter()
        .fold(0.0, |m, (lo, hi)| m.max(lo.abs()).max(hi.abs()))
}

/// Random perturbation scaled so that `D^2 phi` has spectral radius `strength < 1`;
/// the identity-base potential then has convexity margin at least `1 - strength`.
pub fn random_perturbation(rng: &mut ChaCha8Rng, g: &PeriodicGrid, modes: i64, strength: f64) -> ScalarField {
    let f = random_field(rng, g, modes);
    let scale = strength / hessian_spread(&f);
    &f * scale
}

pub fn random_potential(rng: &mut ChaCha8Rng, g: &PeriodicGrid, modes: i64, strength: f64) -> Potential {
    Potential::new(QuadraticBase::identity(g.dim()), random_perturbation(rng, g, modes, strength)).unwrap()
}

pub fn sup_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    (a - b).sup_norm()
}

/// Sup of `|f|` for the trigonometric interpolant of `f`: the best of a sampling
/// `factor` times finer per axis, polished by Newton steps on the derivative spectra.
pub fn interpolant_sup(f: &ScalarField, factor: usize) -> f64 {
    let g = f.grid();
    let dim = g.dim();
    let fine = PeriodicGrid::new(dim, &g.shape().iter().map(|n| n * factor).collect::<Vec<_>>()).unwrap();
    let spectrum = grid::Spectrum::of(f);
    let mut x = (0..fine.len())
        .map(|k| fine.coordinates(k))
        .max_by(|a, b| spectrum.eval(a).abs().total_cmp(&spectrum.eval(b).abs()))
        .unwrap();
    let first: Vec<_> = (0..dim).map(|i| spectrum.derivative_spectrum(&grid::unit_orders(dim, i))).collect();
    let second: Vec<Vec<_>> = (0..dim)
        .map(|i| (0..dim).map(|j| spectrum.derivative_spectrum(&grid::second_orders(dim, i, j))).collect())
        .collect();
    let mut best = spectrum.eval(&x).abs();
    for _ in 0..20 {
        let gradient = DVector::from_fn(dim, |i, _| first[i].eval(&x));
        let hessian = DMatrix::from_fn(dim, dim, |i, j| second[i][j].eval(&x));
        let Some(step) = hessian.lu().solve(&gradient) else { break };
        for (xi, si) in x.iter_mut().zip(step.iter()) {
            *xi -= si;
        }
        best = best.max(spectrum.eval(&x).abs());
    }
    best
}
