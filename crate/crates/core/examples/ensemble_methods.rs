//! Localized perturbed-observation ENKF and the hybrid EN4D-Var on the same
//! twin, with the ensemble written to disk at the end.

use flowvar::enkf::{
    en4dvar_assimilate, enkf_analysis, enkf_forecast, enkf_init, write_ensemble, HybridWindow, LocalizationSpec,
};
use flowvar::harness::{relative_error, ExperimentConfig, Twin};
use flowvar::obs::ObservationSet;

fn main() -> flowvar::Result<()> {
    let cfg = ExperimentConfig {
        d: 7,
        k: 30,
        windows: 3,
        ..flowvar::harness::preset_desk()
    };
    let twin = Twin::new(&cfg, 1)?;
    let taper = LocalizationSpec::new(3e4)?.build(cfg.d, cfg.model.delta);

    let mut e = enkf_init(&twin.initial_mean, &twin.b0_variance, 20, 1)?;
    for l in 0..cfg.k * cfg.windows {
        e = enkf_analysis(&e, &twin.obs.values[l], &twin.op, &taper, 1.05)?;
        if (l + 1) % cfg.k == 0 {
            println!("enkf    t = {:>5.0} s: error {:.4}", twin.obs.times[l], relative_error(&e.mean(), twin.truth_at(l), &twin.op));
        }
        e = enkf_forecast(&e, &twin.params, cfg.dt(), cfg.h_obs)?;
    }

    let mut ens = enkf_init(&twin.initial_mean, &twin.b0_variance, 20, 1)?;
    let mut mean = twin.initial_mean.clone();
    for w in 0..cfg.windows {
        let range = w * cfg.k..(w + 1) * cfg.k;
        let obs = ObservationSet::new(twin.obs.times[range.clone()].to_vec(), twin.obs.values[range].to_vec(), 0)?;
        let hybrid = HybridWindow {
            mean: &mean,
            b0_variance: &twin.b0_variance,
            beta: 0.5,
            taper: &taper,
            inflation: 1.05,
        };
        let (map, next) =
            en4dvar_assimilate(&hybrid, &ens, &obs, &twin.op, &twin.params, obs.times[0], cfg.h_obs, cfg.solver)?;
        let last = (w + 1) * cfg.k - 1;
        let est = &map.estimates()[cfg.k - 1];
        println!("en4dvar t = {:>5.0} s: error {:.4}", twin.obs.times[last], relative_error(est, twin.truth_at(last), &twin.op));
        mean = map.pushforward.clone();
        ens = next;
    }

    let dir = std::env::temp_dir().join(format!("flowvar-ensemble-{}", std::process::id()));
    write_ensemble(&dir, &ens)?;
    println!("ensemble of {} members written to {}", ens.len(), dir.display());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
