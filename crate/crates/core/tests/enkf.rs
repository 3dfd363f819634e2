mod common;

use common::*;
use flowvar::enkf::{
    en4dvar_assimilate, enkf_analysis, enkf_analysis_with, enkf_forecast, enkf_init, hybrid_covariance_apply,
    read_ensemble, write_ensemble, Ensemble, HybridBackground, HybridWindow, LocalizationSpec,
};
use flowvar::linalg::dot;
use flowvar::obs::{generate_observations, ObsOperator, Scenario};
use flowvar::swe::{integrate, total_mass, StateVector};
use flowvar::var4d::{assimilate_window, DiagonalBackground, SolverOptions};
use flowvar::Error;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

fn ensemble(d: usize, n_e: usize, spread: f64, seed: u64) -> Ensemble {
    let (_, mean) = seeded_state(d, seed);
    enkf_init(&mean, &vec![spread * spread; mean.len()], n_e, seed).unwrap()
}

#[test]
fn init_statistics_and_determinism() {
    let mean = StateVector::from_vec(1, vec![1.0, -2.0, 0.5]).unwrap();
    let flat = enkf_init(&mean, &[0.0; 3], 5, 1).unwrap();
    assert!(flat.members.iter().all(|m| m == &mean));

    let var = [0.25, 4.0, 1.0];
    let n_e = 4000;
    let e = enkf_init(&mean, &var, n_e, 2).unwrap();
    let sample = e.mean();
    for ((s, m), v) in sample.as_slice().iter().zip(mean.as_slice()).zip(var) {
        assert!((s - m).abs() < 3.0 * v.sqrt() / (n_e as f64).sqrt());
    }
    assert_eq!(e, enkf_init(&mean, &var, n_e, 2).unwrap());
    assert_ne!(e, enkf_init(&mean, &var, n_e, 3).unwrap());
}

#[test]
fn forecast_matches_member_wise_integration() {
    let (p, x) = seeded_state(5, 1);
    let single = Ensemble::new(vec![x.clone()], 0.0, 0).unwrap();
    let out = enkf_forecast(&single, &p, 1.0, 20.0).unwrap();
    let direct = integrate(&x, &p, 0.0, 20.0, 1.0, &[20.0]).unwrap();
    assert_eq!(out.members[0], direct.states[0]);
    assert_eq!(out.time, 20.0);

    let e = ensemble(5, 6, 0.1, 2);
    let out = enkf_forecast(&e, &p, 1.0, 20.0).unwrap();
    for (before, after) in e.members.iter().zip(&out.members) {
        let direct = integrate(before, &p, 0.0, 20.0, 1.0, &[20.0]).unwrap();
        assert_eq!(after, &direct.states[0]);
        let (m0, m1) = (total_mass(before, &p), total_mass(after, &p));
        assert!((m1 - m0).abs() <= 1e-12 * m0.abs() * 20.0);
    }
}

#[test]
fn uninformative_observations_leave_ensemble_unchanged() {
    let e = ensemble(5, 10, 0.1, 3);
    let op = ObsOperator::new(Scenario::HeightsPlusSparseVel, 5, 2, 1e6).unwrap();
    let taper = LocalizationSpec::new(3e4).unwrap().build(5, 1e4);
    let y = op.observe(&e.mean());
    let out = enkf_analysis(&e, &y, &op, &taper, 1.0).unwrap();
    for (a, b) in e.members.iter().zip(&out.members) {
        assert!(rel_err(b.as_slice(), a.as_slice()) < 1e-6);
    }
    assert_eq!(out.analyses, 1);
}

#[test]
fn large_ensemble_matches_scalar_kalman() {
    let mean = StateVector::from_vec(1, vec![0.0, 0.0, 1.0]).unwrap();
    let n_e = 10_000;
    let e = enkf_init(&mean, &[1.0; 3], n_e, 4).unwrap();
    let op = ObsOperator::custom(1, vec![2], 1.0).unwrap();
    let taper = LocalizationSpec::new(1e9).unwrap().build(1, 1e4);
    let y = [3.0];
    let out = enkf_analysis(&e, &y, &op, &taper, 1.0).unwrap();
    let exact = 1.0 + 1.0 / (1.0 + 1.0) * (y[0] - 1.0);
    assert!((out.mean().as_slice()[2] - exact).abs() < 3.0 / (n_e as f64).sqrt());
}

#[test]
fn zero_radius_is_coordinate_wise_kalman() {
    let e = ensemble(4, 8, 0.2, 5);
    let op = ObsOperator::new(Scenario::SparseHeights, 4, 2, 0.05).unwrap();
    let taper = LocalizationSpec::new(0.0).unwrap().build(4, 1e4);
    let rho = 1.1;
    let mut r = rng(6);
    let y = gaussian(&mut r, op.n_obs());
    let eps: Vec<Vec<f64>> = (0..e.len()).map(|_| gaussian(&mut r, op.n_obs())).collect();
    let out = enkf_analysis_with(&e, &y, &op, &taper, rho, &eps).unwrap();

    let mean = e.mean();
    let anomalies = e.anomalies();
    let n_e = e.len() as f64;
    for i in 0..e.n() {
        let pos = op.indices().iter().position(|&o| o == i);
        let var: f64 = anomalies.iter().map(|a| (rho * a[i]).powi(2)).sum::<f64>() / (n_e - 1.0);
        for (m, member) in out.members.iter().enumerate() {
            let prior = mean.as_slice()[i] + rho * anomalies[m][i];
            let expected = match pos {
                Some(o) => prior + var / (var + 0.0025) * (y[o] + eps[m][o] - prior),
                None => prior,
            };
            assert!((member.as_slice()[i] - expected).abs() < 1e-12 * (1.0 + expected.abs()));
        }
    }
}

#[test]
fn rank_deficient_innovation_is_rejected() {
    let e = ensemble(4, 2, 0.5, 7);
    let op = ObsOperator::new(Scenario::VelocitiesEverywhere, 4, 1, 1e-12).unwrap();
    let taper = LocalizationSpec::new(1e9).unwrap().build(4, 1e4);
    let y = op.observe(&e.mean());
    assert!(matches!(enkf_analysis(&e, &y, &op, &taper, 1.0), Err(Error::SingularInnovation)));
    assert!(enkf_analysis(&e, &y, &op, &taper, 0.9).is_err());
}

fn dense_hybrid(b0: &[f64], e: &Ensemble, beta: f64, radius: f64) -> DMatrix<f64> {
    let n = b0.len();
    let taper = LocalizationSpec::new(radius).unwrap().build(e.d(), 1e4);
    let anomalies = e.anomalies();
    let mut out = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut v = vec![0.0; n];
        v[c] = 1.0;
        let col = hybrid_covariance_apply(b0, &anomalies, beta, &taper, &v).unwrap();
        out.set_column(c, &dvec(&col));
    }
    out
}

#[test]
fn hybrid_covariance_properties() {
    let e = ensemble(5, 6, 0.3, 8);
    let n = e.n();
    let b0: Vec<f64> = (0..n).map(|i| 0.5 + (i % 7) as f64).collect();
    let taper = LocalizationSpec::new(2e4).unwrap().build(5, 1e4);
    let v = gaussian(&mut rng(9), n);
    let fixed = hybrid_covariance_apply(&b0, &e.anomalies(), 0.0, &taper, &v).unwrap();
    for i in 0..n {
        assert_eq!(fixed[i], b0[i] * v[i]);
    }
    for &beta in &[0.3, 1.0] {
        for &radius in &[0.0, 1.5e4, 4e4] {
            let m = dense_hybrid(&b0, &e, beta, radius);
            assert!(dense_rel_err(&m.transpose(), &m) < 1e-14);
            let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
            assert!(min >= -1e-10 * m.norm(), "beta {beta} radius {radius}: {min:e}");
        }
    }
}

#[test]
fn hybrid_covariance_recovers_sampled_covariance() {
    let mean = StateVector::zeros(3);
    let var: Vec<f64> = (0..27).map(|i| 0.5 + 0.1 * i as f64).collect();
    let n_e = 20_000;
    let e = enkf_init(&mean, &var, n_e, 10).unwrap();
    let taper = LocalizationSpec::new(1e9).unwrap().build(3, 1e4);
    let v = gaussian(&mut rng(11), 27);
    let got = hybrid_covariance_apply(&var, &e.anomalies(), 1.0, &taper, &v).unwrap();
    let exact: Vec<f64> = v.iter().zip(&var).map(|(a, b)| a * b).collect();
    // Expected relative sampling error is about sqrt(27 / n_e) ~ 0.04.
    assert!(rel_err(&got, &exact) < 0.1);
}

struct Twin {
    p: flowvar::swe::ModelParams,
    truth: StateVector,
    mean: StateVector,
    b0: Vec<f64>,
    obs: flowvar::obs::ObservationSet,
    op: ObsOperator,
}

fn linear_twin(k: usize, seed: u64) -> Twin {
    let p = linear_params(4);
    let (_, mut truth) = seeded_state(4, seed);
    truth.as_mut_slice().iter_mut().for_each(|v| *v -= 0.5);
    let op = ObsOperator::new(Scenario::HeightsPlusSparseVel, 4, 2, 0.1).unwrap();
    let times: Vec<f64> = (0..k).map(|l| l as f64 * 10.0).collect();
    let tr = integrate(&truth, &p, 0.0, times[k - 1], 10.0, &times).unwrap();
    let obs = generate_observations(&tr, &op, &times, seed).unwrap();
    let mut mean = truth.clone();
    for (m, e) in mean.as_mut_slice().iter_mut().zip(gaussian(&mut rng(seed + 1), truth.len())) {
        *m += 0.3 * e;
    }
    let b0 = energy_precision(&p, 0.01).iter().map(|x| 1.0 / x).collect();
    Twin { p, truth, mean, b0, obs, op }
}

fn exact_options() -> SolverOptions {
    SolverOptions {
        steps_per_obs: 1,
        pcg_tol: 1e-13,
        pcg_max_iter: 1000,
        ..SolverOptions::default()
    }
}

#[test]
fn zero_weight_en4dvar_is_fixed_4dvar() {
    let t = linear_twin(3, 12);
    let e = enkf_init(&t.mean, &t.b0, 6, 12).unwrap();
    let taper = LocalizationSpec::new(2e4).unwrap().build(4, 1e4);
    let hybrid = HybridWindow {
        mean: &t.mean,
        b0_variance: &t.b0,
        beta: 0.0,
        taper: &taper,
        inflation: 1.0,
    };
    let (map, next) = en4dvar_assimilate(&hybrid, &e, &t.obs, &t.op, &t.p, 0.0, 10.0, exact_options()).unwrap();
    let fixed = DiagonalBackground::new(t.mean.clone(), t.b0.iter().map(|b| 1.0 / b).collect()).unwrap();
    let (reference, _) = assimilate_window(&fixed, &t.obs, &t.op, &t.p, 0.0, 10.0, exact_options()).unwrap();
    assert_eq!(map.x_map, reference.x_map);
    assert_eq!(next.time, 30.0);
    assert_eq!(next.analyses, 3);
}

#[test]
fn linear_hybrid_map_equals_normal_equations() {
    let k = 3;
    let t = linear_twin(k, 13);
    let e = enkf_init(&t.mean, &t.b0, 8, 13).unwrap();
    let beta = 0.4;
    let taper = LocalizationSpec::new(1.5e4).unwrap().build(4, 1e4);
    let mut bg = HybridBackground::new(t.mean.clone(), t.b0.clone(), beta, taper, &e).unwrap();
    bg.inner_tol = 1e-14;
    let (map, _) = assimilate_window(&bg, &t.obs, &t.op, &t.p, 0.0, 10.0, exact_options()).unwrap();

    let n = t.mean.len();
    let binv = dense_hybrid(&t.b0, &e, beta, 1.5e4).try_inverse().unwrap();
    let h = selection(&t.op);
    let step = map.chain.forward()[0].matrix.to_dense();
    let mut lhs = binv.clone();
    let mut rhs = &binv * dvec(t.mean.as_slice());
    let mut phi = DMatrix::identity(n, n);
    for l in 0..k {
        if l > 0 {
            phi = &step * phi;
        }
        let a = &h * &phi;
        lhs += a.transpose() * &a / 0.01;
        rhs += a.transpose() * dvec(&t.obs.values[l]) / 0.01;
    }
    let exact: DVector<f64> = lhs.lu().solve(&rhs).unwrap();
    assert!(rel_err(map.x_map.as_slice(), exact.as_slice()) < 1e-8);
    assert!(rel_err(map.x_map.as_slice(), t.truth.as_slice()) < rel_err(t.mean.as_slice(), t.truth.as_slice()));
}

#[test]
fn hybrid_precision_inverts_covariance() {
    let e = ensemble(4, 5, 0.2, 14);
    let b0 = vec![0.3; e.n()];
    let taper = LocalizationSpec::new(2e4).unwrap().build(4, 1e4);
    let bg = HybridBackground::new(e.mean(), b0, 0.5, taper, &e).unwrap();
    let w = gaussian(&mut rng(15), e.n());
    use flowvar::var4d::Background;
    let back = bg.apply_covariance(&bg.apply_precision(&w).unwrap()).unwrap();
    assert!(rel_err(&back, &w) < 1e-9);
    let v = gaussian(&mut rng(16), e.n());
    assert!(dot(&bg.apply_precision(&v).unwrap(), &v) > 0.0);
}

#[test]
fn ensemble_dump_round_trip() {
    let e = ensemble(4, 3, 0.1, 17);
    let dir = tempfile::tempdir().unwrap();
    write_ensemble(dir.path(), &e).unwrap();
    assert!(dir.path().join("member_0002.bin").exists());
    assert_eq!(read_ensemble(dir.path()).unwrap(), e);
}
