use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the assimilation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at state index {index}")]
    NonFinite { index: usize },

    #[error("solver diverged at t = {time} s: |x[{index}]| exceeded {cap:e}")]
    Divergence { time: f64, index: usize, cap: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("record time {time} s is not on the substep grid (dt = {dt} s)")]
    OffGrid { time: f64, dt: f64 },

    #[error("Jacobian row {row} has fill beyond the certified band of {band} cells; use more substeps or a smaller span")]
    SparsityOverflow { row: usize, band: usize },

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("conjugate gradient breakdown at iteration {iteration}: non-positive curvature {curvature:e}")]
    PcgBreakdown { iteration: usize, curvature: f64 },

    #[error("Gauss-Newton diverged: cost increased on {consecutive} consecutive steps (costs: {trace:?})")]
    GaussNewtonDivergence { consecutive: usize, trace: Vec<f64> },

    #[error("innovation system is singular; increase the ensemble size or the observation noise")]
    SingularInnovation,

    #[error("trajectory and observation times disagree: {0}")]
    TimeMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("window {window} failed: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. }
            | Error::Divergence { .. }
            | Error::SparsityOverflow { .. }
            | Error::PcgBreakdown { .. }
            | Error::GaussNewtonDivergence { .. }
            | Error::SingularInnovation => true,
            Error::Window { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
