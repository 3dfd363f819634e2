//! Twin-experiment harness: configuration and presets, truth runs and
//! synthetic observations, sequential windowed assimilation, error metrics,
//! tuning sweeps and the runtime invariant suite.
//!
//! Environment variables: `FLOWVAR_OUT` overrides the output directory of a
//! configuration, `FLOWVAR_THREADS` sets the worker-pool size.

mod config;
mod run;
mod stats;
mod sweep;
mod validate;

pub use config::{
    preset, preset_desk, preset_paper_benchmark, preset_paper_sparse_heights, BackgroundConfig, ExperimentConfig,
    Method, ModelConfig, PRESET_NAMES,
};
pub use run::{relative_error, run_dir, run_experiment, run_seed, write_outputs, MetricSeries, Twin};
pub use stats::{paired_comparison, sign_test_p_value, PairedComparison};
pub use sweep::{sweep, write_sweep, SweepGrid, SweepPoint, SweepRow};
pub use validate::{validate_suite, Check};

/// Sizes the global worker pool from `threads`, falling back to
/// `FLOWVAR_THREADS`. Has no effect once the pool exists.
pub fn init_thread_pool(threads: Option<usize>) {
    let threads = threads.or_else(|| std::env::var("FLOWVAR_THREADS").ok().and_then(|s| s.parse().ok()));
    if let Some(n) = threads.filter(|&n| n > 0) {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("worker pool already initialized");
        }
    }
}
