mod common;

use common::*;
use flowvar::jacobian::cache::{read_chain, write_chain};
use flowvar::jacobian::{build_inverse_jacobian, build_jacobian, JacobianChain, JacobianConfig};
use flowvar::linalg::dot;
use flowvar::swe::{integrate, linear_jacobian, Grid};
use nalgebra::DMatrix;

const H_OBS: f64 = 10.0;

fn fd_jacobian(x: &flowvar::swe::StateVector, p: &flowvar::swe::ModelParams, span: f64, eps: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.as_mut_slice()[j] += eps;
        xm.as_mut_slice()[j] -= eps;
        let fp = flow(&xp, p, span);
        let fm = flow(&xm, p, span);
        for i in 0..n {
            m[(i, j)] = (fp.as_slice()[i] - fm.as_slice()[i]) / (2.0 * eps);
        }
    }
    m
}

fn max_column_error(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| (a.column(j) - reference.column(j)).norm() / reference.column(j).norm())
        .fold(0.0, f64::max)
}

#[test]
fn columns_match_finite_differences() {
    let (p, x) = seeded_state(5, 11);
    let cfg = JacobianConfig::default();
    let j = build_jacobian(&x, &p, H_OBS, cfg.l_max, cfg.substeps).unwrap();
    let fd = fd_jacobian(&x, &p, H_OBS, 1e-6);
    let err = max_column_error(&j.matrix.to_dense(), &fd);
    assert!(err < 1e-6, "max column error {err:e}");
}

#[test]
fn inverse_times_forward_is_identity() {
    let (p, x) = seeded_state(5, 12);
    let cfg = JacobianConfig::default();
    let xt = flow(&x, &p, H_OBS);
    let fwd = build_jacobian(&x, &p, H_OBS, cfg.l_max, cfg.substeps).unwrap();
    let inv = build_inverse_jacobian(&xt, &p, H_OBS, cfg.l_max, cfg.substeps).unwrap();
    let mut r = rng(5);
    for _ in 0..20 {
        let v = gaussian(&mut r, x.len());
        let back = inv.apply(&fwd.apply(&v).unwrap()).unwrap();
        assert!(rel_err(&back, &v) < 1e-5);
    }
}

#[test]
fn adjoint_identity_and_zero_vector() {
    let (p, x) = seeded_state(5, 13);
    let j = build_jacobian(&x, &p, H_OBS, 4, 1).unwrap();
    let mut r = rng(6);
    let v = gaussian(&mut r, x.len());
    let w = gaussian(&mut r, x.len());
    let lhs = dot(&j.apply(&v).unwrap(), &w);
    let rhs = dot(&v, &j.apply_transpose(&w).unwrap());
    assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs());
    assert!(j.apply(&vec![0.0; x.len()]).unwrap().iter().all(|&c| c == 0.0));
    assert!(j.apply(&[1.0]).is_err());
}

#[test]
fn apply_reproduces_dense_columns() {
    let (p, x) = seeded_state(4, 14);
    let j = build_jacobian(&x, &p, H_OBS, 4, 1).unwrap();
    let dense = j.matrix.to_dense();
    for c in 0..x.len() {
        let mut e = vec![0.0; x.len()];
        e[c] = 1.0;
        let col = j.apply(&e).unwrap();
        for r in 0..x.len() {
            assert_eq!(col[r], dense[(r, c)]);
        }
    }
}

#[test]
fn linear_dynamics_give_truncated_exponential() {
    let p = linear_params(5);
    let a = linear_jacobian(&p).to_dense();
    let n = a.nrows();
    let tau = 30.0;
    let mut expected = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for l in 1..=3 {
        term = &term * &a * (tau / l as f64);
        expected += &term;
    }
    let (_, x1) = seeded_state(5, 1);
    let (_, x2) = seeded_state(5, 2);
    for x in [&x1, &x2] {
        let j = build_jacobian(x, &p, tau, 3, 1).unwrap();
        assert!(dense_rel_err(&j.matrix.to_dense(), &expected) < 1e-13);
    }

    let mut inv_expected = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for l in 1..=3 {
        term = &term * &a * (-tau / l as f64);
        inv_expected += &term;
    }
    let ji = build_inverse_jacobian(&x1, &p, tau, 3, 1).unwrap();
    assert!(dense_rel_err(&ji.matrix.to_dense(), &inv_expected) < 1e-13);
}

#[test]
fn doubling_substeps_reduces_error_by_two_to_the_order() {
    let (p, x) = seeded_state(5, 15);
    let span = 40.0;
    let reference = build_jacobian(&x, &p, span, 4, 16).unwrap().matrix.to_dense();
    let l_max = 2;
    let err = |s: usize| {
        let j = build_jacobian(&x, &p, span, l_max, s).unwrap().matrix.to_dense();
        dense_rel_err(&j, &reference)
    };
    let (e2, e4) = (err(2), err(4));
    assert!(e2 / e4 >= 2f64.powi(l_max as i32), "ratio {}", e2 / e4);
}

#[test]
fn sparsity_stays_in_band() {
    let (p, x) = seeded_state(13, 16);
    let j = build_jacobian(&x, &p, H_OBS, 2, 1).unwrap();
    let grid = Grid::new(13);
    for row in 0..j.n() {
        let (cols, _) = j.matrix.row(row);
        assert!(cols.iter().all(|&c| grid.chebyshev(row, c as usize) <= 2));
    }
    assert!(j.matrix.max_row_nnz() <= 3 * 25);
}

fn window(d: usize, k: usize, seed: u64) -> (flowvar::swe::ModelParams, flowvar::swe::Trajectory) {
    let (p, x) = seeded_state(d, seed);
    let times: Vec<f64> = (0..=k).map(|l| l as f64 * H_OBS).collect();
    let tr = integrate(&x, &p, 0.0, times[k], 1.0, &times).unwrap();
    (p, tr)
}

#[test]
fn chain_products_match_dense_oracle() {
    let (p, tr) = window(4, 3, 17);
    let chain = JacobianChain::build(&tr, &p, JacobianConfig::default()).unwrap();
    let n = chain.n();
    let mut prod = DMatrix::identity(n, n);
    for f in chain.forward() {
        prod = f.matrix.to_dense() * prod;
    }
    let oracle = prod.transpose() * &prod;
    let mut got = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        let fw = chain.apply(&e, 3, false, false).unwrap();
        let col = chain.apply(&fw, 3, true, false).unwrap();
        got.set_column(c, &dvec(&col));
    }
    assert!(dense_rel_err(&got, &oracle) < 1e-10);

    let v = gaussian(&mut rng(1), n);
    assert_eq!(chain.apply(&v, 0, false, false).unwrap(), v);
    assert!(chain.apply(&v, 4, false, false).is_err());
}

#[test]
fn inverse_chain_round_trip() {
    let (p, tr) = window(5, 5, 18);
    let chain = JacobianChain::build(&tr, &p, JacobianConfig::default())
        .unwrap()
        .with_inverses(&p)
        .unwrap();
    let mut r = rng(2);
    for _ in 0..5 {
        let v = gaussian(&mut r, chain.n());
        let back = chain.apply(&chain.apply(&v, 5, false, true).unwrap(), 5, false, false).unwrap();
        assert!(rel_err(&back, &v) < 1e-4);
        let back_t = chain.apply(&chain.apply(&v, 5, true, false).unwrap(), 5, true, true).unwrap();
        assert!(rel_err(&back_t, &v) < 1e-4);
    }
}

#[test]
fn chain_cache_round_trip() {
    let (p, tr) = window(4, 3, 19);
    let chain = JacobianChain::build(&tr, &p, JacobianConfig::default())
        .unwrap()
        .with_inverses(&p)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_chain(dir.path(), &chain).unwrap();
    assert_eq!(read_chain(dir.path()).unwrap(), chain);

    std::fs::write(dir.path().join("fwd_00001.jac"), b"SWJACOB\0").unwrap();
    assert!(read_chain(dir.path()).is_err());
}
