use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::enkf::LocalizationSpec;
use crate::error::{Error, Result};
use crate::obs::{ObsOperator, Scenario};
use crate::swe::{benchmark_params, Field, ModelParams};
use crate::var4d::SolverOptions;

/// Assimilation method of an experiment.
///
/// Text form: `fixed4dvar`, `fdvar:b=2`, `enkf:n=20,radius=3e4,rho=1.05`,
/// `en4dvar:beta=0.5,n=20,radius=3e4,rho=1.05`. `fdvar:b=0` is the same
/// method as `fixed4dvar` and parses to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Fixed4dvar,
    Fdvar { b: usize },
    Enkf { n_e: usize, radius: f64, rho: f64 },
    En4dvar { beta: f64, n_e: usize, radius: f64, rho: f64 },
}

impl Method {
    /// Memory length `b` of the flow-dependent background (0 for fixed).
    pub fn memory(&self) -> usize {
        match self {
            Method::Fdvar { b } => *b,
            _ => 0,
        }
    }

    pub fn is_variational(&self) -> bool {
        !matches!(self, Method::Enkf { .. })
    }

    pub fn localization(&self) -> Option<LocalizationSpec> {
        match *self {
            Method::Enkf { radius, .. } | Method::En4dvar { radius, .. } => Some(LocalizationSpec { radius }),
            _ => None,
        }
    }

    /// Name safe for directory names.
    pub fn slug(&self) -> String {
        self.to_string().replace([':', ','], "_").replace('=', "")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            Method::Fixed4dvar => Ok(()),
            Method::Fdvar { b } if b > 64 => bad(format!("memory b = {b} is beyond the supported 64 windows")),
            Method::Fdvar { .. } => Ok(()),
            Method::Enkf { n_e, radius, rho } => check_ensemble(n_e, radius, rho),
            Method::En4dvar { beta, n_e, radius, rho } => {
                if !(0.0..1.0).contains(&beta) {
                    return bad(format!("hybrid weight beta = {beta} must lie in [0, 1)"));
                }
                check_ensemble(n_e, radius, rho)
            }
        }
    }
}

fn check_ensemble(n_e: usize, radius: f64, rho: f64) -> Result<()> {
    if n_e < 2 {
        return Err(Error::Config(format!("ensemble size n = {n_e} must be at least 2")));
    }
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::Config(format!("localization radius {radius} must be non-negative")));
    }
    if !(rho >= 1.0) || !rho.is_finite() {
        return Err(Error::Config(format!("inflation rho = {rho} must be at least 1")));
    }
    Ok(())
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Method::Fixed4dvar => write!(f, "fixed4dvar"),
            Method::Fdvar { b } => write!(f, "fdvar:b={b}"),
            Method::Enkf { n_e, radius, rho } => write!(f, "enkf:n={n_e},radius={radius},rho={rho}"),
            Method::En4dvar { beta, n_e, radius, rho } => {
                write!(f, "en4dvar:beta={beta},n={n_e},radius={radius},rho={rho}")
            }
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let mut kv = Vec::new();
        for part in args.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value in method argument '{part}'")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("method argument '{part}' is not a number")))?;
            kv.push((k.trim().to_string(), v));
        }
        let mut take = |key: &str, default: Option<f64>| -> Result<f64> {
            match kv.iter().position(|(k, _)| k == key) {
                Some(i) => Ok(kv.remove(i).1),
                None => default.ok_or_else(|| Error::Config(format!("method '{name}' needs '{key}'"))),
            }
        };
        let count = |v: f64, key: &str| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("'{key}' must be a non-negative integer")))
            }
        };
        let method = match name {
            "fixed4dvar" => Method::Fixed4dvar,
            "fdvar" => match count(take("b", None)?, "b")? {
                0 => Method::Fixed4dvar,
                b => Method::Fdvar { b },
            },
            "enkf" => Method::Enkf {
                n_e: count(take("n", Some(20.0))?, "n")?,
                radius: take("radius", None)?,
                rho: take("rho", Some(1.0))?,
            },
            "en4dvar" => Method::En4dvar {
                beta: take("beta", None)?,
                n_e: count(take("n", Some(20.0))?, "n")?,
                radius: take("radius", None)?,
                rho: take("rho", Some(1.0))?,
            },
            other => return Err(Error::Config(format!("unknown method '{other}'"))),
        };
        if let Some((k, _)) = kv.first() {
            return Err(Error::Config(format!("unknown argument '{k}' for method '{name}'")));
        }
        method.validate()?;
        Ok(method)
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Model constants. Depth field and initial condition always follow the
/// sinusoidal benchmark formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Grid spacing (m).
    pub delta: f64,
    pub nu: f64,
    pub cb: f64,
    pub g: f64,
    pub f: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            delta: 1e4,
            nu: 1e-3,
            cb: 1e-5,
            g: 9.81,
            f: 1e-4,
        }
    }
}

/// Standard deviations of the diagonal fixed background covariance `B0`
/// per field. Also used to perturb the truth into the initial background
/// mean and to sample initial ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundConfig {
    pub std_u: f64,
    pub std_v: f64,
    pub std_h: f64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self {
            std_u: 0.1,
            std_v: 0.1,
            std_h: 0.5,
        }
    }
}

impl BackgroundConfig {
    /// Diagonal of `B0`.
    pub fn variance(&self, d: usize) -> Vec<f64> {
        let d2 = d * d;
        let mut out = Vec::with_capacity(3 * d2);
        for (field, s) in [(Field::U, self.std_u), (Field::V, self.std_v), (Field::H, self.std_h)] {
            debug_assert_eq!(out.len(), field.offset() * d2);
            out.extend(std::iter::repeat_n(s * s, d2));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub d: usize,
    #[serde(default)]
    pub model: ModelConfig,
    /// Observation scenario number 1, 2 or 3.
    pub scenario: u8,
    /// Spacing of sparse observation sites.
    pub r: usize,
    pub sigma: f64,
    /// Observation interval (s).
    pub h_obs: f64,
    /// Observations per window.
    pub k: usize,
    pub windows: usize,
    pub method: Method,
    /// Inflation of the oldest window's base precision.
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub background: BackgroundConfig,
    /// The truth is integrated with a time step this many times finer.
    #[serde(default = "default_truth_refinement")]
    pub truth_refinement: usize,
    #[serde(default)]
    pub solver: SolverOptions,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

fn default_truth_refinement() -> usize {
    10
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d < 3 {
            return bad(format!("grid size d = {} must be at least 3", self.d));
        }
        Scenario::from_number(self.scenario).map_err(|e| Error::Config(e.to_string()))?;
        if self.r == 0 || self.r > self.d {
            return bad(format!("site spacing r = {} must lie in 1..={}", self.r, self.d));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma = {} must be positive", self.sigma));
        }
        if !(self.h_obs > 0.0) || !self.h_obs.is_finite() {
            return bad(format!("h_obs = {} must be positive", self.h_obs));
        }
        if self.k == 0 || self.windows == 0 {
            return bad("k and windows must be positive".into());
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha = {} must be non-negative", self.alpha));
        }
        let b = &self.background;
        if [b.std_u, b.std_v, b.std_h].iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return bad("background standard deviations must be positive".into());
        }
        if self.truth_refinement == 0 {
            return bad("truth_refinement must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        self.method.validate()?;
        self.solver.validate().map_err(|e| Error::Config(e.to_string()))?;
        let p = self.params()?;
        let dt = self.dt();
        if dt > p.cfl_cap() {
            return bad(format!("assimilation step {dt} s exceeds the stability cap {:.3} s", p.cfl_cap()));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams> {
        let m = &self.model;
        let depth = benchmark_params(self.d, m.delta)?.depth;
        ModelParams::new(self.d, m.delta, depth, m.f, m.g, m.nu, m.cb).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn operator(&self) -> Result<ObsOperator> {
        ObsOperator::new(Scenario::from_number(self.scenario)?, self.d, self.r, self.sigma)
    }

    /// Assimilation time step.
    pub fn dt(&self) -> f64 {
        self.h_obs / self.solver.steps_per_obs as f64
    }

    /// Window length `T = k h_obs`.
    pub fn window_span(&self) -> f64 {
        self.k as f64 * self.h_obs
    }

    pub fn total_time(&self) -> f64 {
        self.window_span() * self.windows as f64
    }

    /// Every observation (and estimate) time.
    pub fn obs_times(&self) -> Vec<f64> {
        (0..self.k * self.windows).map(|l| l as f64 * self.h_obs).collect()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies the `FLOWVAR_OUT` override of the output directory.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(dir) = std::env::var("FLOWVAR_OUT") {
            if !dir.is_empty() {
                self.out_dir = PathBuf::from(dir);
            }
        }
        self
    }
}

/// The d = 21 synthetic benchmark: 10 km cells on a 210 km torus,
/// `sigma = 1e-2`, observations every 10 s, 3 h windows (`k = 1080`) over one
/// day, velocity observations everywhere.
pub fn preset_paper_benchmark() -> ExperimentConfig {
    ExperimentConfig {
        name: "paper".into(),
        d: 21,
        model: ModelConfig::default(),
        scenario: 1,
        r: 3,
        sigma: 1e-2,
        h_obs: 10.0,
        k: 1080,
        windows: 8,
        method: Method::Fdvar { b: 3 },
        alpha: 0.0,
        background: BackgroundConfig::default(),
        truth_refinement: 10,
        solver: SolverOptions {
            conserve_mass: true,
            ..SolverOptions::default()
        },
        seeds: vec![0],
        out_dir: PathBuf::from("out/paper"),
    }
}

/// Sparse height observations (`r = 3`, 49 sites) every 60 s over 10 days.
pub fn preset_paper_sparse_heights() -> ExperimentConfig {
    ExperimentConfig {
        name: "paper-s3".into(),
        scenario: 3,
        h_obs: 60.0,
        k: 180,
        windows: 80,
        out_dir: PathBuf::from("out/paper-s3"),
        ..preset_paper_benchmark()
    }
}

/// Desk-scale analogue: d = 11 with the same formulas, 15 min windows
/// (`k = 90`), four windows, ten seeds.
pub fn preset_desk() -> ExperimentConfig {
    ExperimentConfig {
        name: "desk".into(),
        d: 11,
        k: 90,
        windows: 4,
        method: Method::Fdvar { b: 2 },
        seeds: (0..10).collect(),
        out_dir: PathBuf::from("out/desk"),
        ..preset_paper_benchmark()
    }
}

pub const PRESET_NAMES: [&str; 3] = ["paper", "paper-s3", "desk"];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "paper" => Ok(preset_paper_benchmark()),
        "paper-s3" => Ok(preset_paper_sparse_heights()),
        "desk" => Ok(preset_desk()),
        other => Err(Error::Config(format!(
            "unknown preset '{other}' (available: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}
