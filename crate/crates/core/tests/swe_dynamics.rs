mod common;

use common::*;
use flowvar::swe::io::{read_state_binary, read_state_csv, write_state_binary, write_state_csv};
use flowvar::swe::{
    benchmark_initial_state, benchmark_params, integrate, step, tendency, total_energy, total_mass, Field,
    ModelParams, StateVector,
};
use flowvar::Error;

/// Term-by-term evaluation of the discretized equations with explicit
/// modular neighbour indices.
fn dense_tendency(x: &StateVector, p: &ModelParams) -> Vec<f64> {
    let d = p.d;
    let at = |f: Field, i: usize, j: usize| x.get(f, i % d, j % d);
    let hb = |i: usize, j: usize| p.depth[(i % d) * d + j % d];
    let (dl, g, nu, cb) = (p.delta, p.g, p.nu, p.cb);
    let mut out = vec![0.0; p.n()];
    for i in 0..d {
        for j in 0..d {
            let (ip, im, jp, jm) = (i + 1, i + d - 1, j + 1, j + d - 1);
            let f = p.coriolis[i * d + j];
            let u = |a, b| at(Field::U, a, b);
            let v = |a, b| at(Field::V, a, b);
            let h = |a, b| at(Field::H, a, b);
            let du = f * v(i, j) - g / (2.0 * dl) * (h(ip, j) - h(im, j)) - cb * u(i, j)
                + nu / (dl * dl) * (u(ip, j) + u(im, j) + u(i, jp) + u(i, jm) - 4.0 * u(i, j))
                - 1.0 / (2.0 * dl) * ((u(i, jp) - u(i, jm)) * v(i, j) + (u(ip, j) - u(im, j)) * u(i, j));
            let dv = -f * u(i, j) - g / (2.0 * dl) * (h(i, jp) - h(i, jm)) - cb * v(i, j)
                + nu / (dl * dl) * (v(ip, j) + v(im, j) + v(i, jp) + v(i, jm) - 4.0 * v(i, j))
                - 1.0 / (2.0 * dl) * ((v(ip, j) - v(im, j)) * u(i, j) + (v(i, jp) - v(i, jm)) * v(i, j));
            let dh = -1.0 / (2.0 * dl) * (h(i, j) + hb(i, j)) * (u(ip, j) - u(im, j) + v(i, jp) - v(i, jm))
                - 1.0 / (2.0 * dl) * u(i, j) * (h(ip, j) + hb(ip, j) - h(im, j) - hb(im, j))
                - 1.0 / (2.0 * dl) * v(i, j) * (h(i, jp) + hb(i, jp) - h(i, jm) - hb(i, jm));
            out[i * d + j] = du;
            out[d * d + i * d + j] = dv;
            out[2 * d * d + i * d + j] = dh;
        }
    }
    out
}

fn random_params(d: usize, seed: u64) -> ModelParams {
    let mut r = rng(seed);
    let depth = gaussian(&mut r, d * d).iter().map(|z| 150.0 + 20.0 * z).collect();
    let mut p = ModelParams::new(d, 1e4, depth, 1e-4, 9.81, 5.0, 1e-5).unwrap();
    p.coriolis = gaussian(&mut r, d * d).iter().map(|z| 1e-4 * (1.0 + 0.1 * z)).collect();
    p
}

#[test]
fn trivial_states_have_zero_tendency() {
    let p = ModelParams::flat(5, 1e4, 100.0, 1e-4, 9.81, 1e-3, 1e-5).unwrap();
    assert!(tendency(&StateVector::zeros(5), &p).unwrap().as_slice().iter().all(|&v| v == 0.0));
    let flat_h = StateVector::from_fn(5, |f, _, _| if f == Field::H { 0.7 } else { 0.0 });
    assert!(tendency(&flat_h, &p).unwrap().as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn tendency_matches_dense_oracle() {
    let p = random_params(5, 1);
    for seed in 0..5 {
        let x = StateVector::from_vec(5, gaussian(&mut rng(seed + 10), p.n())).unwrap();
        let got = tendency(&x, &p).unwrap();
        assert!(rel_err(got.as_slice(), &dense_tendency(&x, &p)) < 1e-14);
    }
}

#[test]
fn non_finite_state_is_rejected() {
    let p = benchmark_params(5, 1e4).unwrap();
    let mut x = benchmark_initial_state(5, 1e4);
    x.as_mut_slice()[37] = f64::NAN;
    assert!(matches!(tendency(&x, &p), Err(Error::NonFinite { index: 37 })));
}

#[test]
fn translation_equivariance() {
    let p = random_params(6, 2);
    let x = StateVector::from_vec(6, gaussian(&mut rng(3), p.n())).unwrap();
    let (di, dj) = (2, 5);
    let mut rolled = p.clone();
    rolled.depth = flowvar::swe::roll_field(&p.depth, 6, di, dj);
    rolled.coriolis = flowvar::swe::roll_field(&p.coriolis, 6, di, dj);
    let a = tendency(&x.roll(di, dj), &rolled).unwrap();
    let b = tendency(&x, &p).unwrap().roll(di, dj);
    assert!(rel_err(a.as_slice(), b.as_slice()) < 1e-14);
}

#[test]
fn step_is_first_order_consistent_with_euler() {
    let (p, x) = seeded_state(5, 4);
    let f = tendency(&x, &p).unwrap();
    let euler_gap = |dt: f64| {
        let s = step(&x, &p, dt).unwrap();
        let e: Vec<f64> = x.as_slice().iter().zip(f.as_slice()).map(|(a, b)| a + dt * b).collect();
        rel_err(s.as_slice(), &e)
    };
    let ratio = euler_gap(2.0) / euler_gap(1.0);
    assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn rk4_converges_at_fourth_order() {
    let (p, x) = seeded_state(5, 5);
    let span = 80.0;
    let reference = integrate(&x, &p, 0.0, span, 0.25, &[span]).unwrap().states.pop().unwrap();
    let err = |dt: f64| {
        let y = integrate(&x, &p, 0.0, span, dt, &[span]).unwrap().states.pop().unwrap();
        rel_err(y.as_slice(), reference.as_slice())
    };
    let order = (err(8.0) / err(4.0)).log2();
    assert!(order >= 4.0, "observed order {order}");
}

#[test]
fn mass_conservation() {
    let p = ModelParams::flat(3, 1e4, 100.0, 1e-4, 9.81, 0.0, 0.0).unwrap();
    assert_eq!(total_mass(&StateVector::zeros(3), &p), 900.0);

    let (p, x) = seeded_state(5, 6);
    let oracle: f64 = (0..25).map(|k| x.as_slice()[50 + k] + p.depth[k]).sum();
    assert_eq!(total_mass(&x, &p), oracle);

    let p = benchmark_params(21, 1e4).unwrap();
    let mut x = benchmark_initial_state(21, 1e4);
    for _ in 0..1000 {
        let next = step(&x, &p, 1.0).unwrap();
        let (m0, m1) = (total_mass(&x, &p), total_mass(&next, &p));
        assert!((m1 - m0).abs() / m0.abs() < 1e-12);
        x = next;
    }
}

#[test]
fn energy_diagnostics() {
    let p = benchmark_params(5, 1e4).unwrap();
    let oracle = -0.5 * p.g * p.depth.iter().map(|h| h * h).sum::<f64>();
    assert!((total_energy(&StateVector::zeros(5), &p) - oracle).abs() <= 1e-15 * oracle.abs());

    let mut inviscid = benchmark_params(21, 1e4).unwrap();
    inviscid.nu = 0.0;
    inviscid.cb = 0.0;
    let x0 = benchmark_initial_state(21, 1e4);
    let e0 = total_energy(&x0, &inviscid);
    let tr = integrate(&x0, &inviscid, 0.0, 10.0, 0.1, &[10.0]).unwrap();
    let drift = (total_energy(&tr.states[0], &inviscid) - e0).abs() / e0.abs();
    assert!(drift < 1e-6, "drift {drift:e}");

    let mut friction = inviscid.clone();
    friction.cb = 1e-3;
    let before = total_energy(&x0, &friction);
    let after = total_energy(&step(&x0, &friction, 0.1).unwrap(), &friction);
    assert!(after < before);
}

#[test]
fn semigroup_and_empty_interval() {
    let (p, x) = seeded_state(5, 7);
    let whole = integrate(&x, &p, 0.0, 30.0, 1.0, &[30.0]).unwrap();
    let mid = integrate(&x, &p, 0.0, 12.0, 1.0, &[12.0]).unwrap();
    let rest = integrate(&mid.states[0], &p, 12.0, 30.0, 1.0, &[30.0]).unwrap();
    assert_eq!(whole.states[0], rest.states[0]);
    let empty = integrate(&x, &p, 5.0, 5.0, 1.0, &[5.0]).unwrap();
    assert_eq!(empty.states, vec![x]);
}

#[test]
fn benchmark_three_hours_stays_finite_and_mass_constant() {
    let p = benchmark_params(21, 1e4).unwrap();
    let x0 = benchmark_initial_state(21, 1e4);
    let tr = integrate(&x0, &p, 0.0, 10_800.0, 1.0, &[10_800.0]).unwrap();
    tr.states[0].check_finite().unwrap();
    let (m0, m1) = (total_mass(&x0, &p), total_mass(&tr.states[0], &p));
    assert!((m1 - m0).abs() / m0 < 1e-10);
}

#[test]
fn unstable_or_off_grid_requests_fail() {
    let p = benchmark_params(5, 1e4).unwrap();
    let x = benchmark_initial_state(5, 1e4);
    assert!(step(&x, &p, 1e4).is_err());
    assert!(matches!(integrate(&x, &p, 0.0, 10.0, 1.0, &[2.5]), Err(Error::OffGrid { .. })));
}

#[test]
fn snapshot_round_trips() {
    let (_, x) = seeded_state(4, 8);
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("x.bin");
    let csv = dir.path().join("x.csv");
    write_state_binary(&bin, &x).unwrap();
    write_state_csv(&csv, &x).unwrap();
    assert_eq!(read_state_binary(&bin).unwrap(), x);
    assert_eq!(read_state_csv(&csv).unwrap(), x);
    assert_eq!(std::fs::metadata(&bin).unwrap().len(), 16 + 8 * 48);
}
