//! Paired twin experiment over several seeds with the harness: fixed 4D-Var
//! against flow-dependent 4D-Var, a sign test on the final errors, and a
//! small sweep over the memory `b`. Outputs go to `out/example` (or
//! `FLOWVAR_OUT`).

use flowvar::harness::{paired_comparison, run_experiment, sweep, write_sweep, ExperimentConfig, Method, SweepGrid};

fn main() -> flowvar::Result<()> {
    let base = ExperimentConfig {
        name: "example".into(),
        d: 7,
        k: 30,
        windows: 3,
        seeds: (0..4).collect(),
        out_dir: "out/example".into(),
        ..flowvar::harness::preset_desk()
    }
    .with_env_overrides();

    let fixed = run_experiment(&ExperimentConfig { method: Method::Fixed4dvar, ..base.clone() })?;
    let flow = run_experiment(&ExperimentConfig { method: Method::Fdvar { b: 2 }, ..base.clone() })?;
    let final_errors = |runs: &[flowvar::harness::MetricSeries]| runs.iter().map(|r| r.final_error()).collect::<Vec<_>>();
    let cmp = paired_comparison(&final_errors(&flow), &final_errors(&fixed));
    println!(
        "fixed4dvar {:.4}, fdvar:b=2 {:.4}: reduction {:.1}%, wins {}/{}, sign-test p = {:.3}",
        cmp.mean_reference,
        cmp.mean_candidate,
        100.0 * cmp.reduction,
        cmp.wins,
        cmp.n,
        cmp.p_value
    );

    let mut grid = SweepGrid::default();
    grid.add_entry("b=0,1,3")?;
    let rows = sweep(&ExperimentConfig { out_dir: base.out_dir.join("sweep"), ..base.clone() }, &grid)?;
    for r in &rows {
        println!("{:<12} final relative error {:.4}", r.method, r.final_rel_error);
    }
    write_sweep(&base.out_dir.join("sweep.csv"), &rows)?;
    println!("outputs in {}", base.out_dir.display());
    Ok(())
}
