use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::run::{run_experiment, MetricSeries};
use crate::error::{Error, Result};

/// Values to sweep per tuning parameter. An empty list keeps the value of
/// the base configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub radius: Vec<f64>,
    pub rho: Vec<f64>,
    pub beta: Vec<f64>,
    pub b: Vec<usize>,
    pub alpha: Vec<f64>,
}

/// One grid point; `None` keeps the base value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepPoint {
    pub radius: Option<f64>,
    pub rho: Option<f64>,
    pub beta: Option<f64>,
    pub b: Option<usize>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub radius: Option<f64>,
    pub rho: Option<f64>,
    pub beta: Option<f64>,
    pub b: Option<usize>,
    pub alpha: f64,
    /// Relative error at the final estimate time, averaged over seeds.
    pub final_rel_error: f64,
    /// Set when a run of this point failed numerically.
    pub error: Option<String>,
}

fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

impl SweepGrid {
    /// Parses `key=v1,v2,...` and adds the values to that axis.
    pub fn add_entry(&mut self, entry: &str) -> Result<()> {
        let (key, values) = entry
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid entry '{entry}' must look like key=v1,v2")))?;
        let nums = values
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("grid entry '{entry}' has a non-numeric value")))?;
        match key.trim() {
            "radius" => self.radius.extend(nums),
            "rho" => self.rho.extend(nums),
            "beta" => self.beta.extend(nums),
            "alpha" => self.alpha.extend(nums),
            "b" => {
                for v in nums {
                    if v < 0.0 || v.fract() != 0.0 {
                        return Err(Error::Config(format!("b = {v} must be a non-negative integer")));
                    }
                    self.b.push(v as usize);
                }
            }
            other => return Err(Error::Config(format!("unknown sweep parameter '{other}'"))),
        }
        Ok(())
    }

    /// Cartesian product in the fixed order radius, rho, beta, b, alpha
    /// (last axis varies fastest).
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for radius in axis(&self.radius) {
            for rho in axis(&self.rho) {
                for beta in axis(&self.beta) {
                    for b in axis(&self.b) {
                        for alpha in axis(&self.alpha) {
                            out.push(SweepPoint {
                                radius,
                                rho,
                                beta,
                                b,
                                alpha,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

impl SweepPoint {
    /// The base configuration with this point's values substituted.
    pub fn apply(&self, base: &ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        if let Some(alpha) = self.alpha {
            cfg.alpha = alpha;
        }
        cfg.method = match base.method {
            Method::Fixed4dvar | Method::Fdvar { .. } => match self.b.unwrap_or(base.method.memory()) {
                0 => Method::Fixed4dvar,
                b => Method::Fdvar { b },
            },
            Method::Enkf { n_e, radius, rho } => Method::Enkf {
                n_e,
                radius: self.radius.unwrap_or(radius),
                rho: self.rho.unwrap_or(rho),
            },
            Method::En4dvar { beta, n_e, radius, rho } => Method::En4dvar {
                beta: self.beta.unwrap_or(beta),
                n_e,
                radius: self.radius.unwrap_or(radius),
                rho: self.rho.unwrap_or(rho),
            },
        };
        cfg.method.validate()?;
        Ok(cfg)
    }
}

fn row(cfg: &ExperimentConfig, runs: Result<Vec<MetricSeries>>) -> Result<SweepRow> {
    let (radius, rho, beta, b) = match cfg.method {
        Method::Fixed4dvar => (None, None, None, Some(0)),
        Method::Fdvar { b } => (None, None, None, Some(b)),
        Method::Enkf { radius, rho, .. } => (Some(radius), Some(rho), None, None),
        Method::En4dvar { beta, radius, rho, .. } => (Some(radius), Some(rho), Some(beta), None),
    };
    let (final_rel_error, error) = match runs {
        Ok(runs) => (
            runs.iter().map(MetricSeries::final_error).sum::<f64>() / runs.len() as f64,
            None,
        ),
        Err(e) if e.is_numerical() => (f64::NAN, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(SweepRow {
        method: cfg.method.to_string(),
        radius,
        rho,
        beta,
        b,
        alpha: cfg.alpha,
        final_rel_error,
        error,
    })
}

/// Runs every grid point (each over all seeds) and returns one row per
/// point, in grid order. Point `i` writes its runs under `out_dir/point_i`.
/// A point whose runs fail numerically gets a NaN error and the message.
pub fn sweep(base: &ExperimentConfig, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    let configs = grid
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut cfg = p.apply(base)?;
            cfg.out_dir = base.out_dir.join(format!("point_{i:03}"));
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    configs
        .par_iter()
        .map(|cfg| row(cfg, run_experiment(cfg)))
        .collect()
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
