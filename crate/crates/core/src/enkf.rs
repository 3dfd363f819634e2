//! Localized, inflated ensemble Kalman filter (perturbed-observation variant)
//! and the hybrid En4D-Var background covariance.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obs::{ObsOperator, ObservationSet};
use crate::sparse::{CsrBuilder, CsrMatrix};
use crate::swe::io::{read_state_binary, write_state_binary};
use crate::swe::{integrate, Grid, ModelParams, StateVector};
use crate::var4d::{assimilate_window, pcg_solve, Background, MapResult, SolverOptions};

/// Name recorded in run metadata.
pub const ENKF_VARIANT: &str = "perturbed-observation";
pub const TAPER_NAME: &str = "separable-chordal-gaspari-cohn";

/// Separates the observation-perturbation streams from the sampling streams.
const PERTURBATION_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<StateVector>,
    pub time: f64,
    /// Root seed of the perturbation streams.
    pub seed: u64,
    /// Number of analyses performed so far; selects the perturbation stream.
    pub analyses: u64,
}

impl Ensemble {
    pub fn new(members: Vec<StateVector>, time: f64, seed: u64) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidParameter("ensemble needs at least one member".into()))?;
        let d = first.d();
        for m in &members {
            if m.d() != d {
                return Err(Error::Dimension {
                    expected: first.len(),
                    got: m.len(),
                });
            }
            m.check_finite()?;
        }
        Ok(Self {
            members,
            time,
            seed,
            analyses: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn d(&self) -> usize {
        self.members[0].d()
    }

    pub fn n(&self) -> usize {
        self.members[0].len()
    }

    pub fn mean(&self) -> StateVector {
        let mut out = vec![0.0; self.n()];
        for m in &self.members {
            for (o, v) in out.iter_mut().zip(m.as_slice()) {
                *o += v;
            }
        }
        let inv = 1.0 / self.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        StateVector::from_vec(self.d(), out).expect("consistent dimensions")
    }

    /// Deviations of the members from the ensemble mean.
    pub fn anomalies(&self) -> Vec<Vec<f64>> {
        let mean = self.mean();
        self.members
            .iter()
            .map(|m| m.as_slice().iter().zip(mean.as_slice()).map(|(a, b)| a - b).collect())
            .collect()
    }
}

/// Samples `n_e` members from `N(mean, diag(variance))`.
pub fn enkf_init(mean: &StateVector, variance: &[f64], n_e: usize, seed: u64) -> Result<Ensemble> {
    if variance.len() != mean.len() {
        return Err(Error::Dimension {
            expected: mean.len(),
            got: variance.len(),
        });
    }
    if variance.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("variances must be finite and non-negative".into()));
    }
    let members = (0..n_e)
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(m as u64);
            let data = mean
                .as_slice()
                .iter()
                .zip(variance)
                .map(|(mu, v)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mu + v.sqrt() * z
                })
                .collect();
            StateVector::from_vec(mean.d(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(members, 0.0, seed)
}

/// Propagates every member over `t_span` seconds with step `dt`.
pub fn enkf_forecast(e: &Ensemble, params: &ModelParams, dt: f64, t_span: f64) -> Result<Ensemble> {
    let t1 = e.time + t_span;
    let members = e
        .members
        .par_iter()
        .map(|m| {
            let tr = integrate(m, params, e.time, t1, dt, &[t1])?;
            Ok(tr.states.into_iter().next().expect("one record"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        members,
        time: t1,
        seed: e.seed,
        analyses: e.analyses,
    })
}

/// Localization radius in meters.
///
/// The taper between two grid cells is the product over both axes of
/// [`gaspari_cohn`] applied to the chordal distance on that axis' circle,
/// `(L / pi) sin(pi dx / L)`. This keeps the taper matrix positive
/// semidefinite on the torus for every radius. Each factor vanishes beyond
/// `2 radius`; `radius = 0` keeps variances only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSpec {
    pub radius: f64,
}

impl LocalizationSpec {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!("localization radius {radius} must be non-negative")));
        }
        Ok(Self { radius })
    }

    /// One-dimensional taper value at distance `dist` (meters).
    pub fn weight(&self, dist: f64) -> f64 {
        if self.radius == 0.0 {
            return if dist == 0.0 { 1.0 } else { 0.0 };
        }
        gaspari_cohn(dist / self.radius)
    }

    /// Taper between two cells `di`, `dj` grid steps apart on a torus of
    /// `d` cells of size `delta`.
    pub fn cell_weight(&self, di: usize, dj: usize, d: usize, delta: f64) -> f64 {
        let l = d as f64 * delta;
        let chord = |k: usize| l / std::f64::consts::PI * (std::f64::consts::PI * k as f64 / d as f64).sin();
        self.weight(chord(di)) * self.weight(chord(dj))
    }

    /// Sparse taper matrix over state indices of a `d x d` grid.
    pub fn build(&self, d: usize, delta: f64) -> Taper {
        let grid = Grid::new(d);
        let n = grid.n();
        if self.radius == 0.0 {
            return Taper {
                spec: *self,
                matrix: CsrMatrix::identity(n),
            };
        }
        let d2 = d * d;
        let mut cells = CsrBuilder::new(d2);
        for a in 0..d2 {
            let (ia, ja) = (a / d, a % d);
            for b in 0..d2 {
                let (ib, jb) = (b / d, b % d);
                let w = self.cell_weight(grid.wrap_delta(ia, ib), grid.wrap_delta(ja, jb), d, delta);
                if w > 0.0 {
                    cells.add(b, w);
                }
            }
            cells.finish_row();
        }
        let cells = cells.build();
        let mut full = CsrBuilder::with_capacity(n, n, 9 * cells.nnz());
        for row in 0..n {
            let (cols, vals) = cells.row(row % d2);
            for field in 0..3 {
                for (&c, &w) in cols.iter().zip(vals) {
                    full.add(field * d2 + c as usize, w);
                }
            }
            full.finish_row();
        }
        Taper {
            spec: *self,
            matrix: full.build(),
        }
    }
}

/// Fifth-order piecewise rational compactly supported correlation function,
/// `z = dist / radius`.
pub fn gaspari_cohn(z: f64) -> f64 {
    let z = z.abs();
    if z <= 1.0 {
        (((-0.25 * z + 0.5) * z + 0.625) * z - 5.0 / 3.0) * z * z + 1.0
    } else if z < 2.0 {
        ((((z / 12.0 - 0.5) * z + 0.625) * z + 5.0 / 3.0) * z - 5.0) * z + 4.0 - 2.0 / (3.0 * z)
    } else {
        0.0
    }
}

/// Localization weights between state indices.
#[derive(Debug, Clone)]
pub struct Taper {
    pub spec: LocalizationSpec,
    pub matrix: CsrMatrix,
}

impl Taper {
    pub fn n(&self) -> usize {
        self.matrix.n_rows()
    }
}

/// Perturbed-observation analysis with anomalies inflated by `rho`.
pub fn enkf_analysis(e: &Ensemble, y: &[f64], op: &ObsOperator, taper: &Taper, rho: f64) -> Result<Ensemble> {
    let mut rng = ChaCha8Rng::seed_from_u64(e.seed ^ PERTURBATION_SALT);
    rng.set_stream(e.analyses);
    let sigma = op.sigma;
    let perturbations = (0..e.len())
        .map(|_| {
            (0..op.n_obs())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma * z
                })
                .collect()
        })
        .collect::<Vec<Vec<f64>>>();
    enkf_analysis_with(e, y, op, taper, rho, &perturbations)
}

/// [`enkf_analysis`] with explicit observation perturbations, one vector per member.
pub fn enkf_analysis_with(
    e: &Ensemble,
    y: &[f64],
    op: &ObsOperator,
    taper: &Taper,
    rho: f64,
    perturbations: &[Vec<f64>],
) -> Result<Ensemble> {
    let n_e = e.len();
    if n_e < 2 {
        return Err(Error::InvalidParameter("analysis needs at least two members".into()));
    }
    if !(rho >= 1.0) || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!("inflation rho = {rho} must be at least 1")));
    }
    let n = e.n();
    let n_obs = op.n_obs();
    if op.n() != n || taper.n() != n {
        return Err(Error::Dimension {
            expected: n,
            got: if op.n() != n { op.n() } else { taper.n() },
        });
    }
    if y.len() != n_obs {
        return Err(Error::Dimension {
            expected: n_obs,
            got: y.len(),
        });
    }
    if perturbations.len() != n_e || perturbations.iter().any(|p| p.len() != n_obs) {
        return Err(Error::InvalidParameter("one perturbation vector of length n_obs per member required".into()));
    }

    let mean = e.mean();
    let mean = mean.as_slice();
    let mut anomalies = e.anomalies();
    for a in &mut anomalies {
        a.iter_mut().for_each(|v| *v *= rho);
    }
    let cross = localized_cross_covariance(&anomalies, taper, op.indices());
    let mut s = DMatrix::from_fn(n_obs, n_obs, |r, c| cross[(op.indices()[r], c)]);
    let s2 = sigma_sq(op);
    for i in 0..n_obs {
        s[(i, i)] += s2;
    }
    let scale = s.diagonal().max();
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    let l = chol.l_dirty();
    if (0..n_obs).any(|i| l[(i, i)] * l[(i, i)] <= 1e-13 * scale) {
        return Err(Error::SingularInnovation);
    }

    let innovations = DMatrix::from_fn(n_obs, n_e, |o, m| {
        let idx = op.indices()[o];
        let x = mean[idx] + anomalies[m][idx];
        y[o] + perturbations[m][o] - x
    });
    let z = chol.solve(&innovations);
    let increments = &cross * z;
    let members = (0..n_e)
        .map(|m| {
            let data = (0..n).map(|i| mean[i] + anomalies[m][i] + increments[(i, m)]).collect();
            StateVector::from_vec(e.d(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    for m in &members {
        m.check_finite()?;
    }
    Ok(Ensemble {
        members,
        time: e.time,
        seed: e.seed,
        analyses: e.analyses + 1,
    })
}

fn sigma_sq(op: &ObsOperator) -> f64 {
    op.sigma * op.sigma
}

/// Columns `indices` of the tapered sample covariance, as an `n x |indices|` matrix.
fn localized_cross_covariance(anomalies: &[Vec<f64>], taper: &Taper, indices: &[usize]) -> DMatrix<f64> {
    let n = taper.n();
    let denom = (anomalies.len() - 1) as f64;
    let mut out = DMatrix::zeros(n, indices.len());
    for (c, &o) in indices.iter().enumerate() {
        let (rows, weights) = taper.matrix.row(o);
        for (&a, &w) in rows.iter().zip(weights) {
            let a = a as usize;
            let cov: f64 = anomalies.iter().map(|m| m[a] * m[o]).sum();
            out[(a, c)] = w * cov / denom;
        }
    }
    out
}

/// `((1 - beta) B0 + beta (T o P_e)) v` with `B0 = diag(b0_variance)` and
/// `P_e` the sample covariance of `anomalies`.
pub fn hybrid_covariance_apply(
    b0_variance: &[f64],
    anomalies: &[Vec<f64>],
    beta: f64,
    taper: &Taper,
    v: &[f64],
) -> Result<Vec<f64>> {
    let n = b0_variance.len();
    if v.len() != n || taper.n() != n || anomalies.iter().any(|a| a.len() != n) {
        return Err(Error::Dimension { expected: n, got: v.len() });
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("hybrid weight beta = {beta} must lie in [0, 1]")));
    }
    let mut out: Vec<f64> = v.iter().zip(b0_variance).map(|(x, b)| (1.0 - beta) * b * x).collect();
    if beta == 0.0 {
        return Ok(out);
    }
    if anomalies.len() < 2 {
        return Err(Error::InvalidParameter("sample covariance needs at least two members".into()));
    }
    let coef = beta / (anomalies.len() - 1) as f64;
    let mut scaled = vec![0.0; n];
    let mut tapered = vec![0.0; n];
    for a in anomalies {
        for i in 0..n {
            scaled[i] = a[i] * v[i];
        }
        taper.matrix.mul_vec_into(&scaled, &mut tapered);
        for i in 0..n {
            out[i] += coef * a[i] * tapered[i];
        }
    }
    Ok(out)
}

/// Background whose covariance is the hybrid blend; the precision action is
/// an inner conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct HybridBackground {
    pub mean: StateVector,
    pub b0_variance: Vec<f64>,
    pub beta: f64,
    pub taper: Taper,
    pub anomalies: Vec<Vec<f64>>,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl HybridBackground {
    pub fn new(mean: StateVector, b0_variance: Vec<f64>, beta: f64, taper: Taper, ensemble: &Ensemble) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!("hybrid weight beta = {beta} must lie in [0, 1)")));
        }
        if b0_variance.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter("fixed background variances must be positive".into()));
        }
        let n = mean.len();
        if b0_variance.len() != n || ensemble.n() != n || taper.n() != n {
            return Err(Error::Dimension { expected: n, got: ensemble.n() });
        }
        Ok(Self {
            mean,
            b0_variance,
            beta,
            taper,
            anomalies: ensemble.anomalies(),
            inner_tol: 1e-10,
            inner_max_iter: 10 * n,
        })
    }

    pub fn apply_covariance(&self, v: &[f64]) -> Result<Vec<f64>> {
        hybrid_covariance_apply(&self.b0_variance, &self.anomalies, self.beta, &self.taper, v)
    }
}

impl Background for HybridBackground {
    fn mean(&self) -> &StateVector {
        &self.mean
    }

    fn apply_precision(&self, w: &[f64]) -> Result<Vec<f64>> {
        if self.beta == 0.0 {
            return Ok(w.iter().zip(&self.b0_variance).map(|(x, b)| x * (1.0 / b)).collect());
        }
        let sol = pcg_solve(|v| self.apply_covariance(v), w, self.inner_tol, self.inner_max_iter)?;
        if !sol.converged {
            log::warn!("hybrid precision solve stopped at relative residual {:.2e}", sol.rel_residual);
        }
        Ok(sol.x)
    }
}

/// Fixed part and tuning of an En4D-Var window.
#[derive(Debug, Clone)]
pub struct HybridWindow<'a> {
    pub mean: &'a StateVector,
    pub b0_variance: &'a [f64],
    pub beta: f64,
    pub taper: &'a Taper,
    pub inflation: f64,
}

/// One En4D-Var window: Gauss-Newton with the hybrid background built from
/// the forecast ensemble at `t0`, while the ensemble itself is cycled through
/// the window by ENKF analyses. Returns the MAP result and the ensemble at
/// the window end.
#[allow(clippy::too_many_arguments)]
pub fn en4dvar_assimilate(
    hybrid: &HybridWindow<'_>,
    ensemble: &Ensemble,
    obs: &ObservationSet,
    op: &ObsOperator,
    params: &ModelParams,
    t0: f64,
    h_obs: f64,
    options: SolverOptions,
) -> Result<(MapResult, Ensemble)> {
    let bg = HybridBackground::new(
        hybrid.mean.clone(),
        hybrid.b0_variance.to_vec(),
        hybrid.beta,
        hybrid.taper.clone(),
        ensemble,
    )?;
    let (map, _) = assimilate_window(&bg, obs, op, params, t0, h_obs, options)?;
    let dt = h_obs / options.steps_per_obs as f64;
    let mut e = ensemble.clone();
    for y in &obs.values {
        e = enkf_analysis(&e, y, op, hybrid.taper, hybrid.inflation)?;
        e = enkf_forecast(&e, params, dt, h_obs)?;
    }
    Ok((map, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleMeta {
    time: f64,
    seed: u64,
    analyses: u64,
    members: usize,
    d: usize,
}

/// Writes `ensemble.json` and one binary state snapshot per member.
pub fn write_ensemble(dir: &Path, e: &Ensemble) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = EnsembleMeta {
        time: e.time,
        seed: e.seed,
        analyses: e.analyses,
        members: e.len(),
        d: e.d(),
    };
    fs::write(dir.join("ensemble.json"), serde_json::to_string_pretty(&meta)?)?;
    for (i, m) in e.members.iter().enumerate() {
        write_state_binary(&dir.join(format!("member_{i:04}.bin")), m)?;
    }
    Ok(())
}

pub fn read_ensemble(dir: &Path) -> Result<Ensemble> {
    let meta: EnsembleMeta = serde_json::from_str(&fs::read_to_string(dir.join("ensemble.json"))?)?;
    let members = (0..meta.members)
        .map(|i| read_state_binary(&dir.join(format!("member_{i:04}.bin"))))
        .collect::<Result<Vec<_>>>()?;
    if members.iter().any(|m| m.d() != meta.d) {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            reason: "member grid size disagrees with ensemble.json".into(),
        });
    }
    let mut e = Ensemble::new(members, meta.time, meta.seed)?;
    e.analyses = meta.analyses;
    Ok(e)
}
