//! One strong-constraint 4D-Var window solved by Gauss-Newton with PCG inner
//! solves, on a synthetic twin with sparse height observations.

use flowvar::harness::relative_error;
use flowvar::obs::{generate_observations, ObsOperator, Scenario};
use flowvar::swe::{benchmark_initial_state, benchmark_params, integrate};
use flowvar::var4d::{assimilate_window, DiagonalBackground, SolverOptions};

fn main() -> flowvar::Result<()> {
    let (d, k, h_obs) = (7, 30, 10.0);
    let p = benchmark_params(d, 1e4)?;
    let truth0 = benchmark_initial_state(d, 1e4);
    let op = ObsOperator::new(Scenario::VelocitiesEverywhere, d, 1, 1e-2)?;

    let times: Vec<f64> = (0..k).map(|l| l as f64 * h_obs).collect();
    let truth = integrate(&truth0, &p, 0.0, times[k - 1], 0.1, &times)?;
    let obs = generate_observations(&truth, &op, &times, 42)?;

    let mut mean = truth0.clone();
    for (i, v) in mean.as_mut_slice().iter_mut().enumerate() {
        *v += 0.2 * ((i * 7919 % 101) as f64 / 50.0 - 1.0);
    }
    let variance = vec![0.04; p.n()];
    let bg = DiagonalBackground::new(mean.clone(), variance.iter().map(|v| 1.0 / v).collect())?;

    println!("background error {:.4}", relative_error(&mean, &truth0, &op));
    let (map, _) = assimilate_window(&bg, &obs, &op, &p, 0.0, h_obs, SolverOptions::default())?;
    println!("{:>5} {:>14} {:>12} {:>6} {:>10}", "iter", "cost", "|grad|", "pcg", "residual");
    for r in &map.trace {
        println!(
            "{:>5} {:>14.4} {:>12.3e} {:>6} {:>10.2e}",
            r.outer_iter, r.cost, r.grad_norm, r.pcg_iters, r.pcg_rel_residual
        );
    }
    println!("analysis error {:.4} (converged: {})", relative_error(&map.x_map, &truth0, &op), map.converged);
    Ok(())
}
