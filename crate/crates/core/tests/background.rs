mod common;

use common::*;
use flowvar::background::{
    correlation_profile, d_apply, kalman_information_oracle, ImplicitBackground, Probing, WindowRecord,
};
use flowvar::jacobian::{JacobianChain, JacobianConfig, SparseJacobian};
use flowvar::linalg::dot;
use flowvar::obs::{ObsOperator, Scenario};
use flowvar::sparse::CsrMatrix;
use flowvar::swe::{integrate, ModelParams, StateVector};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

fn records(p: &ModelParams, op: &ObsOperator, h_obs: f64, k: usize, windows: usize, seed: u64) -> Vec<WindowRecord> {
    let (_, x0) = seeded_state(p.d, seed);
    let times: Vec<f64> = (0..=k * windows).map(|l| l as f64 * h_obs).collect();
    let dt = if p.linear_only { h_obs } else { h_obs / 10.0 };
    let tr = integrate(&x0, p, 0.0, *times.last().unwrap(), dt, &times).unwrap();
    (0..windows)
        .map(|m| {
            let sub = flowvar::swe::Trajectory::new(
                times[m * k..=(m + 1) * k].to_vec(),
                tr.states[m * k..=(m + 1) * k].to_vec(),
            )
            .unwrap();
            let chain = JacobianChain::build(&sub, p, JacobianConfig::default())
                .unwrap()
                .with_inverses(p)
                .unwrap();
            WindowRecord::new(chain, op.clone(), k, m).unwrap()
        })
        .collect()
}

fn background(p: &ModelParams, base: Vec<f64>, recs: &[WindowRecord], b: usize, alpha: f64) -> ImplicitBackground {
    let mut bg = ImplicitBackground::new(StateVector::zeros(p.d), base, b, alpha).unwrap();
    let start = recs.len().saturating_sub(b);
    bg.records.extend(recs[start..].iter().cloned());
    bg
}

fn dense_product(factors: &[SparseJacobian], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::identity(n, n);
    for f in factors {
        m = f.matrix.to_dense() * m;
    }
    m
}

fn dense_d(rec: &WindowRecord) -> DMatrix<f64> {
    let n = rec.chain.n();
    let h = selection(&rec.op);
    let s2 = rec.op.sigma * rec.op.sigma;
    let mut out = DMatrix::zeros(n, n);
    let mut phi = DMatrix::identity(n, n);
    for l in 0..rec.k_obs {
        if l > 0 {
            phi = rec.chain.forward()[l - 1].matrix.to_dense() * phi;
        }
        let a = &h * &phi;
        out += a.transpose() * a / s2;
    }
    out
}

#[test]
fn no_records_gives_base_precision() {
    let p = linear_params(4);
    let base: Vec<f64> = (0..p.n()).map(|i| 1.0 + i as f64).collect();
    let bg = ImplicitBackground::new(StateVector::zeros(4), base.clone(), 0, 0.5).unwrap();
    let w = gaussian(&mut rng(1), p.n());
    let got = bg.apply_precision(&w).unwrap();
    for i in 0..p.n() {
        assert_eq!(got[i], base[i] * w[i]);
    }
}

#[test]
fn identity_transport_without_observations_keeps_base_precision() {
    let d = 4;
    let n = 3 * d * d;
    let eye = SparseJacobian::from_matrix(CsrMatrix::identity(n), 0.0, 1.0);
    let states = vec![StateVector::zeros(d); 3];
    let chain = JacobianChain::from_factors(
        vec![0.0, 1.0, 2.0],
        states,
        vec![eye.clone(), eye.clone()],
        Some(vec![eye.clone(), eye]),
        JacobianConfig::default(),
    )
    .unwrap();
    let op = ObsOperator::custom(d, vec![], 1.0).unwrap();
    let rec = WindowRecord::new(chain, op, 2, 0).unwrap();
    let base: Vec<f64> = (0..n).map(|i| 0.5 + i as f64).collect();
    let mut bg = ImplicitBackground::new(StateVector::zeros(d), base.clone(), 2, 0.0).unwrap();
    bg.records.push_back(rec.clone());
    bg.records.push_back(rec);
    let w = gaussian(&mut rng(2), n);
    let got = bg.apply_precision(&w).unwrap();
    for i in 0..n {
        assert!((got[i] - base[i] * w[i]).abs() <= 1e-15 * (base[i] * w[i]).abs());
    }
}

#[test]
fn d_apply_matches_dense_assembly() {
    let (p, _) = seeded_state(4, 3);
    let op = ObsOperator::new(Scenario::HeightsPlusSparseVel, 4, 2, 0.1).unwrap();
    let rec = records(&p, &op, 10.0, 3, 1, 3).pop().unwrap();
    let n = p.n();
    assert!(d_apply(&rec, &vec![0.0; n]).unwrap().iter().all(|&v| v == 0.0));
    let oracle = dense_d(&rec);
    let mut got = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        got.set_column(c, &dvec(&d_apply(&rec, &e).unwrap()));
    }
    assert!(dense_rel_err(&got, &oracle) < 1e-10);
    let mut r = rng(4);
    let (v, w) = (gaussian(&mut r, n), gaussian(&mut r, n));
    let a = dot(&d_apply(&rec, &v).unwrap(), &w);
    let b = dot(&v, &d_apply(&rec, &w).unwrap());
    assert!((a - b).abs() <= 1e-12 * a.abs());
}

#[test]
fn precision_matches_dense_nested_recursion() {
    let p = linear_params(4);
    let op = ObsOperator::new(Scenario::HeightsPlusSparseVel, 4, 2, 0.5).unwrap();
    let recs = records(&p, &op, 10.0, 3, 2, 5);
    let base = energy_precision(&p, 0.01);
    let alpha = 0.25;
    let bg = background(&p, base.clone(), &recs, 2, alpha);
    let n = p.n();
    let mut oracle = DMatrix::from_diagonal(&DVector::from_vec(base)) / (1.0 + alpha);
    for rec in &recs {
        let minv = dense_product(rec.chain.inverse().unwrap(), n);
        oracle = minv.transpose() * (oracle + dense_d(rec)) * &minv;
    }
    assert!(dense_rel_err(&bg.densify().unwrap(), &oracle) < 1e-8);
}

#[test]
fn symmetric_positive_definite_at_every_memory() {
    let (p, _) = seeded_state(5, 6);
    let op = ObsOperator::new(Scenario::VelocitiesEverywhere, 5, 1, 1e-2).unwrap();
    let recs = records(&p, &op, 10.0, 4, 3, 6);
    let mut r = rng(7);
    for b in 0..=3 {
        let bg = background(&p, vec![100.0; p.n()], &recs, b, 0.1);
        let v = gaussian(&mut r, p.n());
        let w = gaussian(&mut r, p.n());
        let pv = bg.apply_precision(&v).unwrap();
        let pw = bg.apply_precision(&w).unwrap();
        assert!((dot(&pv, &w) - dot(&v, &pw)).abs() <= 1e-10 * dot(&pv, &w).abs());
        assert!(dot(&v, &pv) > 0.0);
    }
}

struct KalmanCase {
    precision: DMatrix<f64>,
    full: ImplicitBackground,
    truncated: ImplicitBackground,
}

fn kalman_case(windows: usize, b: usize) -> KalmanCase {
    let p = linear_params(4);
    let op = ObsOperator::new(Scenario::SparseHeights, 4, 2, 0.5).unwrap();
    let h_obs = 5.0;
    let recs = records(&p, &op, h_obs, 3, windows, 8);
    let base = energy_precision(&p, 0.01);
    let steps: Vec<DMatrix<f64>> = recs
        .iter()
        .flat_map(|r| r.chain.forward().iter().map(|f| f.matrix.to_dense()))
        .collect();
    let p0 = DMatrix::from_diagonal(&DVector::from_vec(base.clone()));
    let precision = kalman_information_oracle(&steps, &selection(&op), op.sigma, &p0).unwrap();
    KalmanCase {
        precision,
        full: background(&p, base.clone(), &recs, windows, 0.0),
        truncated: background(&p, base, &recs, b, 0.0),
    }
}

#[test]
fn full_memory_equals_information_filter() {
    let case = kalman_case(3, 1);
    let got = case.full.densify().unwrap();
    assert!(dense_rel_err(&got, &case.precision) < 1e-8);
}

#[test]
fn truncated_memory_is_below_information_filter() {
    let case = kalman_case(4, 2);
    let got = case.truncated.densify().unwrap();
    let diff = &case.precision - &got;
    let sym = (&diff + diff.transpose()) * 0.5;
    let min = SymmetricEigen::new(sym).eigenvalues.min();
    assert!(min >= -1e-10 * case.precision.norm(), "min eigenvalue {min:e}");
}

#[test]
fn oracle_trivial_cases() {
    let n = 6;
    let p0 = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| 1.0 + i as f64));
    let h0 = DMatrix::zeros(1, n);
    let eye = DMatrix::identity(n, n);
    let out = kalman_information_oracle(&[eye.clone(), eye.clone()], &h0, 1.0, &p0).unwrap();
    assert_eq!(out, p0);
    let h = DMatrix::from_fn(2, n, |r, c| if c == 2 * r { 1.0 } else { 0.0 });
    let f = DMatrix::from_fn(n, n, |r, c| if r == c { 2.0 } else if c == r + 1 { 0.5 } else { 0.0 });
    let out = kalman_information_oracle(std::slice::from_ref(&f), &h, 0.5, &p0).unwrap();
    let fi = f.try_inverse().unwrap();
    let expected = fi.transpose() * (&p0 + h.transpose() * &h / 0.25) * fi;
    assert!(dense_rel_err(&out, &expected) < 1e-14);
}

#[test]
fn correlation_profiles() {
    let (p, _) = seeded_state(4, 9);
    let diag = ImplicitBackground::new(StateVector::zeros(4), vec![3.0; p.n()], 0, 0.0).unwrap();
    let prof = correlation_profile(&diag, Probing::Dense).unwrap();
    assert!(prof.mean_abs_correlation.iter().all(|&c| c == 0.0));

    let op = ObsOperator::new(Scenario::VelocitiesEverywhere, 4, 1, 1e-2).unwrap();
    let recs = records(&p, &op, 10.0, 3, 2, 9);
    let bg = background(&p, vec![100.0; p.n()], &recs, 2, 0.0);
    let dense = correlation_profile(&bg, Probing::Dense).unwrap();
    let probed = correlation_profile(
        &bg,
        Probing::Pcg {
            n_probe: p.n(),
            seed: 1,
            tol: 1e-12,
            max_iter: 2000,
        },
    )
    .unwrap();
    assert_eq!(dense.pairs, probed.pairs);
    for (a, b) in dense.mean_abs_correlation.iter().zip(&probed.mean_abs_correlation) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!(dense.mean_abs_correlation[1] > 0.0);
}

#[test]
fn save_and_load_round_trip() {
    let (p, _) = seeded_state(4, 10);
    let op = ObsOperator::new(Scenario::SparseHeights, 4, 2, 1e-2).unwrap();
    let recs = records(&p, &op, 10.0, 2, 2, 10);
    let bg = background(&p, vec![5.0; p.n()], &recs, 2, 0.2);
    let dir = tempfile::tempdir().unwrap();
    bg.save(dir.path()).unwrap();
    let back = ImplicitBackground::load(dir.path()).unwrap();
    let w = gaussian(&mut rng(3), p.n());
    assert_eq!(bg.apply_precision(&w).unwrap(), back.apply_precision(&w).unwrap());
    assert_eq!(back.records.len(), 2);
}
