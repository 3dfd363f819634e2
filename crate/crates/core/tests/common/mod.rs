#![allow(dead_code)]

use flowvar::swe::{benchmark_initial_state, benchmark_params, integrate, ModelParams, StateVector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Benchmark state plus a seeded perturbation of relative size ~0.1.
pub fn seeded_state(d: usize, seed: u64) -> (ModelParams, StateVector) {
    let p = benchmark_params(d, 1e4).unwrap();
    let mut x = benchmark_initial_state(d, 1e4);
    let mut r = rng(seed);
    for v in x.as_mut_slice() {
        *v += 0.1 * r.sample::<f64, _>(StandardNormal);
    }
    (p, x)
}

/// Nonlinear flow map over `span` seconds with 1 s RK4 steps.
pub fn flow(x: &StateVector, p: &ModelParams, span: f64) -> StateVector {
    integrate(x, p, 0.0, span, 1.0, &[span]).unwrap().states.pop().unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn dense_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Dissipative linear shallow-water system: flat depth, no Coriolis.
pub fn linear_params(d: usize) -> ModelParams {
    ModelParams::flat(d, 1e4, 100.0, 1e-4, 9.81, 2e3, 1e-4)
        .unwrap()
        .with_linear_only(true)
}

/// Energy-weighted diagonal base precision `diag(H, H, g)` scaled by `s`.
pub fn energy_precision(p: &ModelParams, s: f64) -> Vec<f64> {
    let d2 = p.d * p.d;
    let mut out = vec![0.0; 3 * d2];
    for k in 0..d2 {
        out[k] = s * p.depth[k];
        out[d2 + k] = s * p.depth[k];
        out[2 * d2 + k] = s * p.g;
    }
    out
}

/// Dense 0/1 selection matrix of an observation operator.
pub fn selection(op: &flowvar::obs::ObsOperator) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(op.n_obs(), op.n());
    for (r, &c) in op.indices().iter().enumerate() {
        h[(r, c)] = 1.0;
    }
    h
}
