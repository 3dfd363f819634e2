//! Sparse Taylor-series Jacobians of the shallow-water flow map.
//!
//! For `dx/dt = L x + Q(x)` with `Q` quadratic, the time derivatives at a
//! basepoint obey the Leibniz recursion
//!
//! ```text
//! x^(l+1) = L x^(l) + 1/2 sum_{j=0..l} C(l,j) G(x^(l-j)) x^(j)
//! ```
//!
//! where `G(y)` is the (linear in `y`) Jacobian of `Q` at `y`. Differentiating
//! with respect to the basepoint gives the Jacobians `J_l = d x^(l) / d x`:
//!
//! ```text
//! J_0 = I,   J_(l+1) = L J_l + sum_{j=0..l} C(l,j) G(x^(l-j)) J_j
//! ```
//!
//! and the flow Jacobian over a span `tau` is `I + sum_l J_l tau^l / l!`.
//! `J_l` couples grid points at most `l` cells apart, so the result is
//! banded on the torus.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sparse::{CsrBuilder, CsrMatrix};
use crate::swe::{advance_raw, linear_jacobian, quadratic_jacobian, Grid, ModelParams, StateVector};

/// Largest supported Taylor order.
pub const MAX_TAYLOR_ORDER: usize = 4;

/// Truncation order and substep count of the Taylor Jacobians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JacobianConfig {
    pub l_max: usize,
    pub substeps: usize,
}

impl Default for JacobianConfig {
    fn default() -> Self {
        Self { l_max: 4, substeps: 1 }
    }
}

impl JacobianConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_TAYLOR_ORDER).contains(&self.l_max) {
            return Err(Error::InvalidParameter(format!(
                "Taylor order l_max = {} must be in 1..={MAX_TAYLOR_ORDER}",
                self.l_max
            )));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be at least 1".into()));
        }
        Ok(())
    }

    /// Certified half-width (in cells) of the band around each row's grid point.
    pub fn band(&self) -> usize {
        self.l_max * self.substeps
    }
}

/// Linearization of the flow map over `[t_from, t_to]` (or its inverse when
/// `t_to < t_from`), stored as a CSR matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseJacobian {
    pub matrix: CsrMatrix,
    pub t_from: f64,
    pub t_to: f64,
    pub basepoint_hash: u64,
    pub l_max: usize,
    pub substeps: usize,
}

impl SparseJacobian {
    /// Wraps an explicit matrix, e.g. a linear model's transition matrix.
    pub fn from_matrix(matrix: CsrMatrix, t_from: f64, t_to: f64) -> Self {
        Self {
            matrix,
            t_from,
            t_to,
            basepoint_hash: 0,
            l_max: 0,
            substeps: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.n_rows()
    }

    /// Shifts the time stamps so the span starts at `t_from`.
    pub fn with_start(mut self, t_from: f64) -> Self {
        let span = self.t_to - self.t_from;
        self.t_from = t_from;
        self.t_to = t_from + span;
        self
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        Ok(self.matrix.mul_vec(v))
    }

    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        Ok(self.matrix.tmul_vec(v))
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: v.len(),
            });
        }
        Ok(())
    }
}

/// Digest of a state's bit pattern.
pub fn state_hash(x: &[f64]) -> u64 {
    let mut h = Sha256::new();
    for v in x {
        h.update(v.to_le_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

/// `sum_t alpha_t * A_t * B_t`, with `B_t = None` standing for the identity.
fn sum_of_products(n_cols: usize, n_rows: usize, terms: &[(f64, &CsrMatrix, Option<&CsrMatrix>)]) -> CsrMatrix {
    let mut b = CsrBuilder::new(n_cols);
    for i in 0..n_rows {
        for &(alpha, a, rhs) in terms {
            match rhs {
                None => b.add_row_of(a, i, alpha),
                Some(m) => {
                    let (cols, vals) = a.row(i);
                    for (&k, &v) in cols.iter().zip(vals) {
                        b.add_row_of(m, k as usize, alpha * v);
                    }
                }
            }
        }
        b.finish_row();
    }
    b.build()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Taylor Jacobian of a single substep of (signed) length `tau` at `y`.
fn taylor_factor(y: &[f64], p: &ModelParams, lin: &CsrMatrix, tau: f64, l_max: usize) -> CsrMatrix {
    let n = y.len();
    // time derivatives x^(0..l_max-1) and the quadratic Jacobians at each
    let mut derivs: Vec<Vec<f64>> = vec![y.to_vec()];
    let mut gq: Vec<CsrMatrix> = vec![quadratic_jacobian(y, p)];
    for l in 0..l_max.saturating_sub(1) {
        let mut next = lin.mul_vec(&derivs[l]);
        for j in 0..=l {
            let gx = gq[l - j].mul_vec(&derivs[j]);
            crate::linalg::axpy(0.5 * binomial(l, j), &gx, &mut next);
        }
        gq.push(quadratic_jacobian(&next, p));
        derivs.push(next);
    }

    // J_1 = L + G(x); J_(l+1) = J_1 J_l + sum_{j<l} C(l,j) G(x^(l-j)) J_j
    let j1 = CsrMatrix::linear_combination(&[(1.0, lin), (1.0, &gq[0])]);
    let mut jacs: Vec<CsrMatrix> = vec![j1];
    for l in 1..l_max {
        let mut terms: Vec<(f64, &CsrMatrix, Option<&CsrMatrix>)> = vec![(1.0, &jacs[0], Some(&jacs[l - 1]))];
        for j in 0..l {
            let rhs = if j == 0 { None } else { Some(&jacs[j - 1]) };
            terms.push((binomial(l, j), &gq[l - j], rhs));
        }
        let next = sum_of_products(n, n, &terms);
        jacs.push(next);
    }

    let eye = CsrMatrix::identity(n);
    let mut coef = 1.0;
    let mut combo: Vec<(f64, &CsrMatrix)> = vec![(1.0, &eye)];
    for (l, jl) in jacs.iter().enumerate() {
        coef *= tau / (l + 1) as f64;
        combo.push((coef, jl));
    }
    CsrMatrix::linear_combination(&combo)
}

fn certify(m: &CsrMatrix, d: usize, band: usize) -> Result<()> {
    let grid = Grid::new(d);
    if 2 * band + 1 >= d {
        return Ok(());
    }
    for row in 0..m.n_rows() {
        let (cols, _) = m.row(row);
        if cols.iter().any(|&c| grid.chebyshev(row, c as usize) > band) {
            return Err(Error::SparsityOverflow { row, band });
        }
    }
    Ok(())
}

fn raw_steps(p: &ModelParams, tau: f64) -> usize {
    let cap = 0.25 * p.cfl_cap();
    if cap.is_finite() {
        ((tau.abs() / cap).ceil() as usize).max(1)
    } else {
        1
    }
}

fn build_signed(x: &StateVector, p: &ModelParams, span: f64, cfg: JacobianConfig) -> Result<CsrMatrix> {
    cfg.validate()?;
    if x.d() != p.d {
        return Err(Error::Dimension {
            expected: p.n(),
            got: x.len(),
        });
    }
    x.check_finite()?;
    let lin = linear_jacobian(p);
    let tau = span / cfg.substeps as f64;
    let mut base = x.as_slice().to_vec();
    let mut product: Option<CsrMatrix> = None;
    for s in 0..cfg.substeps {
        let factor = taylor_factor(&base, p, &lin, tau, cfg.l_max);
        product = Some(match product {
            None => factor,
            Some(acc) => factor.matmul(&acc),
        });
        if s + 1 < cfg.substeps {
            base = advance_raw(&base, p, tau, raw_steps(p, tau))?;
        }
    }
    let m = product.expect("substeps >= 1");
    if !m.is_finite() {
        return Err(Error::NonFinite {
            index: m.values().iter().position(|v| !v.is_finite()).unwrap_or(0),
        });
    }
    certify(&m, p.d, cfg.band())?;
    Ok(m)
}

/// Jacobian of the flow map over `t_span` seconds, linearized at `x_s`.
pub fn build_jacobian(
    x_s: &StateVector,
    p: &ModelParams,
    t_span: f64,
    l_max: usize,
    substeps: usize,
) -> Result<SparseJacobian> {
    if !(t_span > 0.0) {
        return Err(Error::InvalidParameter(format!("span {t_span} must be positive")));
    }
    let cfg = JacobianConfig { l_max, substeps };
    let matrix = build_signed(x_s, p, t_span, cfg)?;
    Ok(SparseJacobian {
        matrix,
        t_from: 0.0,
        t_to: t_span,
        basepoint_hash: state_hash(x_s.as_slice()),
        l_max,
        substeps,
    })
}

/// Inverse of the flow Jacobian over `t_span`, built as the backward-flow
/// Jacobian at the right endpoint state `x_t`.
pub fn build_inverse_jacobian(
    x_t: &StateVector,
    p: &ModelParams,
    t_span: f64,
    l_max: usize,
    substeps: usize,
) -> Result<SparseJacobian> {
    if !(t_span > 0.0) {
        return Err(Error::InvalidParameter(format!("span {t_span} must be positive")));
    }
    let cfg = JacobianConfig { l_max, substeps };
    let matrix = build_signed(x_t, p, -t_span, cfg)?;
    Ok(SparseJacobian {
        matrix,
        t_from: t_span,
        t_to: 0.0,
        basepoint_hash: state_hash(x_t.as_slice()),
        l_max,
        substeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swe::{benchmark_initial_state, benchmark_params};

    #[test]
    fn binomials() {
        assert_eq!(binomial(3, 0), 1.0);
        assert_eq!(binomial(3, 1), 3.0);
        assert_eq!(binomial(4, 2), 6.0);
    }

    #[test]
    fn tiny_span_is_identity() {
        let p = benchmark_params(5, 1e4).unwrap();
        let x = benchmark_initial_state(5, 1e4);
        let j = build_jacobian(&x, &p, 1e-12, 1, 1).unwrap();
        let diff = j.matrix.to_dense() - nalgebra::DMatrix::identity(75, 75);
        assert!(diff.abs().max() < 1e-10);
        let ji = build_inverse_jacobian(&x, &p, 1e-12, 1, 1).unwrap();
        assert!((ji.matrix.to_dense() - nalgebra::DMatrix::identity(75, 75)).abs().max() < 1e-10);
    }

    #[test]
    fn config_validation() {
        let p = benchmark_params(5, 1e4).unwrap();
        let x = benchmark_initial_state(5, 1e4);
        assert!(build_jacobian(&x, &p, 1.0, 0, 1).is_err());
        assert!(build_jacobian(&x, &p, 1.0, 5, 1).is_err());
        assert!(build_jacobian(&x, &p, 1.0, 2, 0).is_err());
        assert!(build_jacobian(&x, &p, -1.0, 2, 1).is_err());
    }

    #[test]
    fn band_respected_on_larger_grid() {
        let p = benchmark_params(13, 1e4).unwrap();
        let x = benchmark_initial_state(13, 1e4);
        let j = build_jacobian(&x, &p, 10.0, 2, 2).unwrap();
        let grid = Grid::new(13);
        for row in 0..j.n() {
            for &c in j.matrix.row(row).0 {
                assert!(grid.chebyshev(row, c as usize) <= 4);
            }
        }
        // (2 l_max substeps + 1)^2 cells per field, three fields
        assert!(j.matrix.max_row_nnz() <= 3 * 81);
    }
}
