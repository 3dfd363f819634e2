use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowvar::harness::{
    init_thread_pool, preset, run_experiment, sweep, validate_suite, write_sweep, ExperimentConfig, Method,
    SweepGrid,
};
use flowvar::Error;

#[derive(Parser)]
#[command(name = "flowvar", version, about = "Shallow-water 4D-Var twin experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment over all configured seeds.
    Run(Common),
    /// Run a tuning grid and write sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid axis, e.g. `radius=2e4,4e4` (repeatable).
        #[arg(long = "grid", required = true)]
        grid: Vec<String>,
    },
    /// Print a preset configuration as TOML.
    Preset {
        /// One of paper, paper-s3, desk.
        name: String,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the runtime invariant suite (and check --config if given).
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Start from a named preset instead of a file.
    #[arg(long)]
    preset: Option<String>,
    /// Replace the configured seeds (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Replace the configured method, e.g. `fdvar:b=2`.
    #[arg(long)]
    method: Option<String>,
    /// Output directory (overrides FLOWVAR_OUT and the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (overrides FLOWVAR_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        init_thread_pool(self.threads);
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => return Err(Error::Config("either --config or --preset is required".into())),
        };
        cfg = cfg.with_env_overrides();
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        if let Some(m) = &self.method {
            cfg.method = m.parse::<Method>()?;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_numerical() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn validate(config: Option<PathBuf>, threads: Option<usize>) -> ExitCode {
    init_thread_pool(threads);
    if let Some(path) = config {
        if let Err(e) = ExperimentConfig::load(&path) {
            return exit_code(&e);
        }
        println!("config {} is valid", path.display());
    }
    let checks = match validate_suite() {
        Ok(c) => c,
        Err(e) => return exit_code(&e),
    };
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status} {}: {:.3e} (< {:.0e}, {:.2} s)", c.name, c.value, c.threshold, c.seconds);
    }
    if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(common) => common.resolve().and_then(|cfg| {
            let runs = run_experiment(&cfg)?;
            for r in &runs {
                println!(
                    "{} seed {}: final relative error {:.6} ({:.1} s)",
                    r.method,
                    r.seed,
                    r.final_error(),
                    r.total_seconds()
                );
            }
            println!("outputs in {}", cfg.out_dir.display());
            Ok(())
        }),
        Command::Sweep { common, grid } => common.resolve().and_then(|cfg| {
            let mut g = SweepGrid::default();
            for entry in &grid {
                g.add_entry(entry)?;
            }
            let rows = sweep(&cfg, &g)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let path = cfg.out_dir.join("sweep.csv");
            write_sweep(&path, &rows)?;
            for r in &rows {
                match &r.error {
                    Some(e) => println!("{}: failed: {e}", r.method),
                    None => println!("{}: final relative error {:.6}", r.method, r.final_rel_error),
                }
            }
            println!("wrote {}", path.display());
            Ok(())
        }),
        Command::Preset { name, out } => preset(&name).and_then(|cfg| {
            let text = cfg.to_toml()?;
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
            Ok(())
        }),
        Command::Validate { config, threads } => return validate(config, threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => exit_code(&e),
    }
}
