use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use crate::background::ImplicitBackground;
use crate::enkf::{self, en4dvar_assimilate, enkf_analysis, enkf_forecast, enkf_init, HybridWindow};
use crate::error::{Error, Result};
use crate::obs::{generate_observations, ObsOperator, ObservationSet};
use crate::swe::{benchmark_initial_state, integrate, Field, ModelParams, StateVector, Trajectory};
use crate::var4d::{assimilate_window, write_trace, MapResult, TraceRow};

const BACKGROUND_SALT: u64 = 0x5bd1_e995_2f6b_a3c7;

/// Truth run, observations and initial background of one seed.
#[derive(Debug, Clone)]
pub struct Twin {
    pub params: ModelParams,
    pub op: ObsOperator,
    /// Truth at every observation time and at the final time.
    pub truth: Trajectory,
    pub obs: ObservationSet,
    /// Background mean of the first window.
    pub initial_mean: StateVector,
    /// Diagonal of `B0`.
    pub b0_variance: Vec<f64>,
}

impl Twin {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let params = cfg.params()?;
        let op = cfg.operator()?;
        let x0 = benchmark_initial_state(cfg.d, cfg.model.delta);
        let times = cfg.obs_times();
        let mut record = times.clone();
        record.push(cfg.total_time());
        let dt = cfg.dt() / cfg.truth_refinement as f64;
        let truth = integrate(&x0, &params, 0.0, cfg.total_time(), dt, &record)?;
        let obs = generate_observations(&truth, &op, &times, seed)?;
        let b0_variance = cfg.background.variance(cfg.d);
        let initial_mean = perturb(&x0, &b0_variance, seed);
        Ok(Self {
            params,
            op,
            truth,
            obs,
            initial_mean,
            b0_variance,
        })
    }

    pub fn truth_at(&self, l: usize) -> &StateVector {
        &self.truth.states[l]
    }
}

/// `x + N(0, diag(variance))`, with the height perturbation shifted to zero
/// mean so the background carries the true total mass.
fn perturb(x: &StateVector, variance: &[f64], seed: u64) -> StateVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BACKGROUND_SALT);
    let mut noise: Vec<f64> = variance
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v.sqrt() * z
        })
        .collect();
    let d2 = x.d() * x.d();
    let h = Field::H.offset() * d2..(Field::H.offset() + 1) * d2;
    let mean = noise[h.clone()].iter().sum::<f64>() / d2 as f64;
    noise[h].iter_mut().for_each(|v| *v -= mean);
    let mut out = x.clone();
    out.as_mut_slice().iter_mut().zip(noise).for_each(|(a, b)| *a += b);
    out
}

/// Initial ensemble around the first background mean. With
/// `conserve_mass` every member carries the mean's total height.
fn initial_ensemble(cfg: &ExperimentConfig, twin: &Twin, n_e: usize, seed: u64) -> Result<enkf::Ensemble> {
    let mut e = enkf_init(&twin.initial_mean, &twin.b0_variance, n_e, seed)?;
    if cfg.solver.conserve_mass {
        let d2 = cfg.d * cfg.d;
        let h = Field::H.offset() * d2..(Field::H.offset() + 1) * d2;
        let target = twin.initial_mean.as_slice()[h.clone()].iter().sum::<f64>() / d2 as f64;
        for m in &mut e.members {
            let block = &mut m.as_mut_slice()[h.clone()];
            let shift = block.iter().sum::<f64>() / d2 as f64 - target;
            block.iter_mut().for_each(|v| *v -= shift);
        }
    }
    Ok(e)
}

/// `||w_hat - w|| / ||w||` over the coordinates `op` does not observe.
pub fn relative_error(estimate: &StateVector, truth: &StateVector, op: &ObsOperator) -> f64 {
    let (e, t) = (estimate.as_slice(), truth.as_slice());
    let (mut num, mut den) = (0.0, 0.0);
    for i in op.unobserved() {
        num += (e[i] - t[i]).powi(2);
        den += t[i] * t[i];
    }
    num.sqrt() / den.sqrt()
}

/// Error series of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub method: Method,
    pub seed: u64,
    /// Estimate times, one per observation time.
    pub times: Vec<f64>,
    /// Relative error of the unobserved component at each estimate time.
    pub rel_error: Vec<f64>,
    /// Wall time of each window (s).
    pub window_seconds: Vec<f64>,
    /// Gauss-Newton trace of each window (variational methods only).
    pub traces: Vec<Vec<TraceRow>>,
    pub partial: bool,
}

impl MetricSeries {
    fn new(method: Method, seed: u64) -> Self {
        Self {
            method,
            seed,
            times: Vec::new(),
            rel_error: Vec::new(),
            window_seconds: Vec::new(),
            traces: Vec::new(),
            partial: false,
        }
    }

    pub fn final_error(&self) -> f64 {
        self.rel_error.last().copied().unwrap_or(f64::NAN)
    }

    /// Mean relative error over the last `k` estimate times.
    pub fn tail_mean(&self, k: usize) -> f64 {
        let k = k.min(self.rel_error.len()).max(1);
        self.rel_error[self.rel_error.len() - k..].iter().sum::<f64>() / k as f64
    }

    pub fn total_seconds(&self) -> f64 {
        self.window_seconds.iter().sum()
    }

    /// PCG solves that met `tol`, and the total number of solves.
    pub fn pcg_within_budget(&self, tol: f64) -> (usize, usize) {
        let rows = self.traces.iter().flatten();
        let met = rows.clone().filter(|r| r.pcg_rel_residual <= tol).count();
        (met, rows.count())
    }
}

#[derive(Serialize)]
struct MetricRow<'a> {
    time: f64,
    rel_error: f64,
    method: &'a str,
    seed: u64,
}

/// Runs one seed without writing anything. On failure the error carries the
/// index of the failing window.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<MetricSeries> {
    let mut series = MetricSeries::new(cfg.method, seed);
    simulate(cfg, seed, &mut series)?;
    Ok(series)
}

fn simulate(cfg: &ExperimentConfig, seed: u64, series: &mut MetricSeries) -> Result<()> {
    let twin = Twin::new(cfg, seed)?;
    match cfg.method {
        Method::Fixed4dvar | Method::Fdvar { .. } => run_fdvar(cfg, &twin, series),
        Method::Enkf { n_e, radius, rho } => run_enkf(cfg, &twin, seed, n_e, radius, rho, series),
        Method::En4dvar { beta, n_e, radius, rho } => run_en4dvar(cfg, &twin, seed, beta, n_e, radius, rho, series),
    }
}

fn window_failed(window: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Window {
        window,
        source: Box::new(e),
    }
}

fn record_window(
    cfg: &ExperimentConfig,
    twin: &Twin,
    window: usize,
    map: &MapResult,
    started: Instant,
    series: &mut MetricSeries,
) {
    for (l, est) in map.estimates().iter().enumerate() {
        let idx = window * cfg.k + l;
        series.times.push(twin.obs.times[idx]);
        series.rel_error.push(relative_error(est, twin.truth_at(idx), &twin.op));
    }
    series.traces.push(map.trace.clone());
    series.window_seconds.push(started.elapsed().as_secs_f64());
}

fn window_obs(cfg: &ExperimentConfig, twin: &Twin, window: usize) -> Result<(f64, ObservationSet)> {
    let range = window * cfg.k..(window + 1) * cfg.k;
    let obs = ObservationSet::new(
        twin.obs.times[range.clone()].to_vec(),
        twin.obs.values[range].to_vec(),
        twin.obs.seed,
    )?;
    Ok((obs.times[0], obs))
}

fn run_fdvar(cfg: &ExperimentConfig, twin: &Twin, series: &mut MetricSeries) -> Result<()> {
    let base: Vec<f64> = twin.b0_variance.iter().map(|v| 1.0 / v).collect();
    let mut bg = ImplicitBackground::new(twin.initial_mean.clone(), base, cfg.method.memory(), cfg.alpha)?;
    for w in 0..cfg.windows {
        let started = Instant::now();
        let (t0, obs) = window_obs(cfg, twin, w)?;
        let (map, next) = assimilate_window(&bg, &obs, &twin.op, &twin.params, t0, cfg.h_obs, cfg.solver)
            .map_err(window_failed(w))?;
        bg = bg.advance(&map, &twin.op, &twin.params, w, next).map_err(window_failed(w))?;
        record_window(cfg, twin, w, &map, started, series);
        log::info!("{} seed {}: window {w} final error {:.4}", cfg.method, series.seed, series.final_error());
    }
    Ok(())
}

fn run_enkf(
    cfg: &ExperimentConfig,
    twin: &Twin,
    seed: u64,
    n_e: usize,
    radius: f64,
    rho: f64,
    series: &mut MetricSeries,
) -> Result<()> {
    let taper = enkf::LocalizationSpec::new(radius)?.build(cfg.d, cfg.model.delta);
    let mut e = initial_ensemble(cfg, twin, n_e, seed)?;
    for w in 0..cfg.windows {
        let started = Instant::now();
        for l in 0..cfg.k {
            let idx = w * cfg.k + l;
            e = enkf_analysis(&e, &twin.obs.values[idx], &twin.op, &taper, rho).map_err(window_failed(w))?;
            series.times.push(twin.obs.times[idx]);
            series.rel_error.push(relative_error(&e.mean(), twin.truth_at(idx), &twin.op));
            e = enkf_forecast(&e, &twin.params, cfg.dt(), cfg.h_obs).map_err(window_failed(w))?;
        }
        series.window_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_en4dvar(
    cfg: &ExperimentConfig,
    twin: &Twin,
    seed: u64,
    beta: f64,
    n_e: usize,
    radius: f64,
    rho: f64,
    series: &mut MetricSeries,
) -> Result<()> {
    let taper = enkf::LocalizationSpec::new(radius)?.build(cfg.d, cfg.model.delta);
    let mut e = initial_ensemble(cfg, twin, n_e, seed)?;
    let mut mean = twin.initial_mean.clone();
    for w in 0..cfg.windows {
        let started = Instant::now();
        let (t0, obs) = window_obs(cfg, twin, w)?;
        let hybrid = HybridWindow {
            mean: &mean,
            b0_variance: &twin.b0_variance,
            beta,
            taper: &taper,
            inflation: rho,
        };
        let (map, next) = en4dvar_assimilate(&hybrid, &e, &obs, &twin.op, &twin.params, t0, cfg.h_obs, cfg.solver)
            .map_err(window_failed(w))?;
        mean = map.pushforward.clone();
        e = next;
        record_window(cfg, twin, w, &map, started, series);
    }
    Ok(())
}

/// Output directory of one run.
pub fn run_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join(cfg.method.slug()).join(format!("seed_{seed}"))
}

/// Writes `metrics.csv`, `metadata.json` and one trace CSV per window.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, series: &MetricSeries, error: Option<&Error>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let method = series.method.to_string();
    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    for (t, e) in series.times.iter().zip(&series.rel_error) {
        w.serialize(MetricRow {
            time: *t,
            rel_error: *e,
            method: &method,
            seed: series.seed,
        })?;
    }
    w.flush()?;
    for (i, trace) in series.traces.iter().enumerate() {
        write_trace(&dir.join(format!("trace_window_{i:03}.csv")), trace)?;
    }
    let (met, total) = series.pcg_within_budget(cfg.solver.pcg_tol);
    let ensemble = cfg.method.localization().map(|_| {
        serde_json::json!({
            "variant": enkf::ENKF_VARIANT,
            "taper": enkf::TAPER_NAME,
        })
    });
    let meta = serde_json::json!({
        "crate_version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "seed": series.seed,
        "method": method,
        "estimate_times": series.times.len(),
        "window_seconds": series.window_seconds,
        "pcg_solves_within_tolerance": met,
        "pcg_solves": total,
        "ensemble": ensemble,
        "partial": series.partial,
        "error": error.map(|e| e.to_string()),
        "integrator": "rk4",
        "truth_dt": cfg.dt() / cfg.truth_refinement as f64,
    });
    fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Runs every seed of `cfg` in parallel and writes each run's outputs.
/// A failing seed still writes its partial results before the error is
/// returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricSeries>> {
    cfg.validate()?;
    let results: Vec<Result<MetricSeries>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut series = MetricSeries::new(cfg.method, seed);
            let outcome = simulate(cfg, seed, &mut series);
            series.partial = outcome.is_err();
            write_outputs(&run_dir(cfg, seed), cfg, &series, outcome.as_ref().err())?;
            outcome.map(|()| series)
        })
        .collect();
    results.into_iter().collect()
}
