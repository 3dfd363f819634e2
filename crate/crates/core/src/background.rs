//! Flow-dependent background precision built from the previous `b`
//! assimilation windows.
//!
//! For records ordered newest (`j = 1`) to oldest (`j = b`), with `M_-j` the
//! full-window Jacobian of record `j` and `D_-j` its observation information,
//!
//! ```text
//! w_-j = M_-j^-1 w_-(j-1),                 w_0 = w
//! q    = M_-b^-T (B0^-1 / (1 + alpha) + D_-b) w_-b
//! q    = M_-j^-T (q + D_-j w_-j),          j = b-1, ..., 1
//! ```
//!
//! and `q` is the background precision applied to `w`.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jacobian::cache::{read_chain, write_chain};
use crate::jacobian::JacobianChain;
use crate::obs::ObsOperator;
use crate::swe::{Grid, ModelParams, StateVector};
use crate::var4d::{information_apply, pcg_solve, Background, MapResult};

/// Linearization and observation metadata of one past window.
#[derive(Debug, Clone)]
pub struct WindowRecord {
    /// Factors over the window's `k` observation intervals, with inverses.
    pub chain: JacobianChain,
    pub op: ObsOperator,
    /// Number of observation times in the window.
    pub k_obs: usize,
    pub window: usize,
}

impl WindowRecord {
    pub fn new(chain: JacobianChain, op: ObsOperator, k_obs: usize, window: usize) -> Result<Self> {
        if !chain.has_inverses() {
            return Err(Error::InvalidParameter("window record needs inverse Jacobian factors".into()));
        }
        if k_obs == 0 || chain.len() + 1 < k_obs {
            return Err(Error::Dimension {
                expected: k_obs,
                got: chain.len(),
            });
        }
        if chain.n() != op.n() {
            return Err(Error::Dimension {
                expected: op.n(),
                got: chain.n(),
            });
        }
        Ok(Self {
            chain,
            op,
            k_obs,
            window,
        })
    }

    /// `sum_l M(t_l, t_start)^T H^T R^-1 H M(t_l, t_start) v`.
    pub fn d_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        information_apply(&self.chain, &self.op, self.k_obs, v)
    }

    /// Full-window Jacobian applied to `v`.
    pub fn transport(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.chain.apply(v, self.chain.len(), false, false)
    }

    fn inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.chain.apply(v, self.chain.len(), false, true)
    }

    fn inverse_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.chain.apply(v, self.chain.len(), true, true)
    }
}

/// Free-function form of [`WindowRecord::d_apply`].
pub fn d_apply(rec: &WindowRecord, v: &[f64]) -> Result<Vec<f64>> {
    rec.d_apply(v)
}

/// Background mean plus the implicitly represented flow-dependent precision.
#[derive(Debug, Clone)]
pub struct ImplicitBackground {
    pub mean: StateVector,
    /// Diagonal of `B0^-1`.
    pub base_precision: Vec<f64>,
    /// Oldest first.
    pub records: VecDeque<WindowRecord>,
    pub alpha: f64,
    pub b: usize,
}

impl ImplicitBackground {
    pub fn new(mean: StateVector, base_precision: Vec<f64>, b: usize, alpha: f64) -> Result<Self> {
        if base_precision.len() != mean.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: base_precision.len(),
            });
        }
        if base_precision.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidParameter("base precision must be finite and non-negative".into()));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("inflation alpha = {alpha} must be non-negative")));
        }
        Ok(Self {
            mean,
            base_precision,
            records: VecDeque::new(),
            alpha,
            b,
        })
    }

    pub fn n(&self) -> usize {
        self.mean.len()
    }

    /// Applies the flow-dependent precision to `w`.
    pub fn apply_precision(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: w.len(),
            });
        }
        if self.records.is_empty() {
            return Ok(w.iter().zip(&self.base_precision).map(|(a, p)| a * p).collect());
        }
        // newest first
        let recs: Vec<&WindowRecord> = self.records.iter().rev().collect();
        let mut ws = Vec::with_capacity(recs.len());
        let mut cur = w.to_vec();
        for rec in &recs {
            cur = rec.inverse(&cur)?;
            ws.push(cur.clone());
        }
        let scale = 1.0 / (1.0 + self.alpha);
        let oldest = recs.len() - 1;
        let mut q: Vec<f64> = ws[oldest]
            .iter()
            .zip(&self.base_precision)
            .map(|(a, p)| scale * a * p)
            .collect();
        for j in (0..recs.len()).rev() {
            let dw = recs[j].d_apply(&ws[j])?;
            for (a, b) in q.iter_mut().zip(dw) {
                *a += b;
            }
            q = recs[j].inverse_transpose(&q)?;
        }
        Ok(q)
    }

    /// Pushes the record of a just-solved window and moves the mean to `next_mean`.
    pub fn advance(
        &self,
        result: &MapResult,
        op: &ObsOperator,
        params: &ModelParams,
        window: usize,
        next_mean: StateVector,
    ) -> Result<ImplicitBackground> {
        let mut next = ImplicitBackground {
            mean: next_mean,
            base_precision: self.base_precision.clone(),
            records: self.records.clone(),
            alpha: self.alpha,
            b: self.b,
        };
        if self.b > 0 {
            let chain = result.chain.clone().with_inverses(params)?;
            let k_obs = result.trajectory.len() - 1;
            next.records.push_back(WindowRecord::new(chain, op.clone(), k_obs, window)?);
        }
        while next.records.len() > self.b {
            next.records.pop_front();
        }
        Ok(next)
    }

    /// Dense matrix of the precision action (column by column).
    pub fn densify(&self) -> Result<DMatrix<f64>> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e[c] = 1.0;
            let col = self.apply_precision(&e)?;
            e[c] = 0.0;
            m.set_column(c, &nalgebra::DVector::from_vec(col));
        }
        Ok(m)
    }

    /// Writes the background into `dir`: `background.json` plus one chain cache per record.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut records = Vec::new();
        for (i, rec) in self.records.iter().enumerate() {
            let sub = format!("record_{i:03}");
            write_chain(&dir.join(&sub), &rec.chain)?;
            records.push(RecordMeta {
                chain_dir: sub,
                op: rec.op.clone(),
                k_obs: rec.k_obs,
                window: rec.window,
            });
        }
        let meta = BackgroundMeta {
            version: 1,
            mean: self.mean.clone(),
            base_precision: self.base_precision.clone(),
            alpha: self.alpha,
            b: self.b,
            records,
        };
        std::fs::write(dir.join("background.json"), serde_json::to_string(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: BackgroundMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("background.json"))?)?;
        let mut bg = ImplicitBackground::new(meta.mean, meta.base_precision, meta.b, meta.alpha)?;
        for r in meta.records {
            let chain = read_chain(&dir.join(&r.chain_dir))?;
            bg.records.push_back(WindowRecord::new(chain, r.op, r.k_obs, r.window)?);
        }
        Ok(bg)
    }
}

impl Background for ImplicitBackground {
    fn mean(&self) -> &StateVector {
        &self.mean
    }

    fn apply_precision(&self, w: &[f64]) -> Result<Vec<f64>> {
        ImplicitBackground::apply_precision(self, w)
    }
}

#[derive(Serialize, Deserialize)]
struct RecordMeta {
    chain_dir: String,
    op: ObsOperator,
    k_obs: usize,
    window: usize,
}

#[derive(Serialize, Deserialize)]
struct BackgroundMeta {
    version: u32,
    mean: StateVector,
    base_precision: Vec<f64>,
    alpha: f64,
    b: usize,
    records: Vec<RecordMeta>,
}

/// Dense information-filter precision for linear dynamics with an
/// observation at the start of every step: `P <- F^-T (P + H^T H / sigma^2) F^-1`
/// for each transition matrix `F` in `steps`, starting from `p0`.
pub fn kalman_information_oracle(
    steps: &[DMatrix<f64>],
    h: &DMatrix<f64>,
    sigma: f64,
    p0: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let info = h.transpose() * h / (sigma * sigma);
    let mut p = p0.clone();
    for f in steps {
        let f_inv = f
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("singular transition matrix".into()))?;
        p = f_inv.transpose() * (p + &info) * &f_inv;
    }
    Ok(p)
}

/// Mean absolute correlation of the implied background covariance, binned by
/// torus Chebyshev distance in cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProfile {
    pub distance: Vec<usize>,
    pub mean_abs_correlation: Vec<f64>,
    pub pairs: Vec<usize>,
}

impl CorrelationProfile {
    /// Mean absolute correlation over all pairs at distance `>= min_distance`.
    pub fn tail_mean(&self, min_distance: usize) -> f64 {
        let (mut s, mut c) = (0.0, 0usize);
        for ((&dist, &m), &p) in self.distance.iter().zip(&self.mean_abs_correlation).zip(&self.pairs) {
            if dist >= min_distance && p > 0 {
                s += m * p as f64;
                c += p;
            }
        }
        if c == 0 {
            0.0
        } else {
            s / c as f64
        }
    }
}

/// How columns of the covariance are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Probing {
    /// Solve `P z = e_i` by conjugate gradients for `n_probe` sampled indices.
    Pcg { n_probe: usize, seed: u64, tol: f64, max_iter: usize },
    /// Densify the precision and invert it (small `n` only).
    Dense,
}

/// Correlations among the probed indices (all indices for [`Probing::Dense`]),
/// binned by the torus distance between their grid points.
pub fn correlation_profile(bg: &ImplicitBackground, probing: Probing) -> Result<CorrelationProfile> {
    let n = bg.n();
    let d = bg.mean.d();
    let (probes, cov) = match probing {
        Probing::Dense => {
            let p = bg.densify()?;
            let sym = (&p + p.transpose()) * 0.5;
            let cov = sym
                .cholesky()
                .ok_or_else(|| Error::InvalidParameter("background precision is not positive definite".into()))?
                .inverse();
            ((0..n).collect::<Vec<_>>(), cov)
        }
        Probing::Pcg {
            n_probe,
            seed,
            tol,
            max_iter,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut probes = sample(&mut rng, n, n_probe.min(n)).into_vec();
            probes.sort_unstable();
            let mut cov = DMatrix::zeros(n, probes.len());
            for (c, &i) in probes.iter().enumerate() {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                let sol = pcg_solve(|v| bg.apply_precision(v), &e, tol, max_iter)?;
                cov.set_column(c, &nalgebra::DVector::from_vec(sol.x));
            }
            // restrict to the probed rows
            let sub = DMatrix::from_fn(probes.len(), probes.len(), |r, c| cov[(probes[r], c)]);
            let sub = (&sub + sub.transpose()) * 0.5;
            (probes, sub)
        }
    };
    let grid = Grid::new(d);
    let max_dist = d / 2;
    let mut sum = vec![0.0; max_dist + 1];
    let mut count = vec![0usize; max_dist + 1];
    for a in 0..probes.len() {
        for b in (a + 1)..probes.len() {
            let denom = (cov[(a, a)] * cov[(b, b)]).sqrt();
            if !(denom > 0.0) {
                continue;
            }
            let dist = grid.chebyshev(probes[a], probes[b]);
            sum[dist] += (cov[(a, b)] / denom).abs();
            count[dist] += 1;
        }
    }
    Ok(CorrelationProfile {
        distance: (0..=max_dist).collect(),
        mean_abs_correlation: sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect(),
        pairs: count,
    })
}
