use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};

/// Result of a conjugate gradient solve.
#[derive(Debug, Clone)]
pub struct PcgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final smoothed relative residual `||b - A x|| / ||b||`.
    pub rel_residual: f64,
    pub converged: bool,
    /// Smoothed relative residual after each iteration, starting with 1.
    pub history: Vec<f64>,
}

/// Unpreconditioned conjugate gradients for `A x = rhs` with `A` symmetric
/// positive definite, started from zero.
///
/// The returned iterate and residual are smoothed by minimal residual
/// smoothing, so the reported residual norm never increases. Reaching
/// `max_iter` is flagged through `converged`, not treated as an error; a
/// non-positive curvature `p^T A p` is.
pub fn pcg_solve(
    mut hvp: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<PcgOutcome> {
    let n = rhs.len();
    let b_norm = norm(rhs);
    if b_norm == 0.0 {
        return Ok(PcgOutcome {
            x: vec![0.0; n],
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
            history: vec![0.0],
        });
    }
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    // smoothed iterate and residual
    let mut y = x.clone();
    let mut s = r.clone();
    let mut history = vec![1.0];
    let mut rel = 1.0;
    let mut iterations = 0;
    while iterations < max_iter && rel > tol {
        iterations += 1;
        let ap = hvp(&p)?;
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::PcgBreakdown {
                iteration: iterations,
                curvature,
            });
        }
        let a = rr / curvature;
        axpy(a, &p, &mut x);
        axpy(-a, &ap, &mut r);

        let diff: Vec<f64> = r.iter().zip(&s).map(|(ri, si)| ri - si).collect();
        let dd = dot(&diff, &diff);
        if dd > 0.0 {
            let eta = -dot(&s, &diff) / dd;
            for i in 0..n {
                y[i] += eta * (x[i] - y[i]);
                s[i] += eta * diff[i];
            }
        }
        rel = norm(&s) / b_norm;
        history.push(rel);

        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Ok(PcgOutcome {
        x: y,
        iterations,
        rel_residual: rel,
        converged: rel <= tol,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_converges_in_one_step() {
        let b = vec![1.0, -2.0, 3.0];
        let out = pcg_solve(|v| Ok(v.to_vec()), &b, 1e-12, 10).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
        assert!(out.x.iter().zip(&b).all(|(x, b)| (x - b).abs() < 1e-15));
    }

    #[test]
    fn random_spd_matches_dense_solve() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let g = DMatrix::from_fn(20, 20, |_, _| rng.random::<f64>() - 0.5);
        let a = &g * g.transpose() + DMatrix::identity(20, 20);
        let b = DVector::from_fn(20, |_, _| rng.random::<f64>());
        let exact = a.clone().cholesky().unwrap().solve(&b);
        let out = pcg_solve(|v| Ok((&a * DVector::from_column_slice(v)).as_slice().to_vec()), b.as_slice(), 1e-10, 200)
            .unwrap();
        let err = (DVector::from_vec(out.x) - &exact).norm() / exact.norm();
        assert!(err < 1e-8);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn indefinite_operator_breaks_down() {
        let out = pcg_solve(|v| Ok(v.iter().map(|x| -x).collect()), &[1.0, 1.0], 1e-8, 10);
        assert!(matches!(out, Err(Error::PcgBreakdown { iteration: 1, .. })));
    }
}
