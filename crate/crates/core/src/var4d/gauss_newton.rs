use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pcg::pcg_solve;
use super::problem::WindowProblem;
use crate::error::{Error, Result};
use crate::jacobian::JacobianChain;
use crate::linalg::norm;
use crate::swe::{StateVector, Trajectory};

/// One row of the solver trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub outer_iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub step_norm: f64,
    pub pcg_iters: usize,
    pub pcg_rel_residual: f64,
}

/// Output of a Gauss-Newton solve on one window.
#[derive(Debug, Clone)]
pub struct MapResult {
    pub x_map: StateVector,
    /// The MAP pushed forward to the window end.
    pub pushforward: StateVector,
    /// MAP trajectory at every observation time and the window end.
    pub trajectory: Trajectory,
    /// Linearization along `trajectory`.
    pub chain: JacobianChain,
    /// Number of Gauss-Newton updates applied.
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

impl MapResult {
    /// Estimate at each observation time of the window (pushforward of the MAP).
    pub fn estimates(&self) -> &[StateVector] {
        &self.trajectory.states[..self.trajectory.len() - 1]
    }

    /// Outer iterations whose PCG solve met `tol`, and the total count.
    pub fn pcg_within_budget(&self, tol: f64) -> (usize, usize) {
        let met = self.trace.iter().filter(|r| r.pcg_rel_residual <= tol).count();
        (met, self.trace.len())
    }
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Subtracts the mean of the height block.
fn remove_mass(v: &mut [f64], d: usize) {
    let h = &mut v[2 * d * d..];
    let mean = h.iter().sum::<f64>() / h.len() as f64;
    h.iter_mut().for_each(|x| *x -= mean);
}

/// Gauss-Newton iterations `x <- x - H^-1 grad J` from `x_init`, with PCG
/// inner solves and backtracking by step halving.
pub fn gauss_newton(prob: &WindowProblem<'_>, x_init: &StateVector) -> Result<MapResult> {
    let opts = prob.options;
    if opts.continuation && prob.k() >= 2 {
        let half = prob.obs.slice(prob.t0, prob.t0 + (prob.k() / 2) as f64 * prob.h_obs);
        let short = prob.truncated(&half)?;
        let mut inner = short.options;
        inner.continuation = false;
        let short = WindowProblem { options: inner, ..short };
        let first = solve(&short, x_init)?;
        let mut full = solve(prob, &first.x_map)?;
        full.iterations += first.iterations;
        let mut trace = first.trace;
        trace.extend(full.trace);
        full.trace = trace;
        return Ok(full);
    }
    solve(prob, x_init)
}

fn solve(prob: &WindowProblem<'_>, x_init: &StateVector) -> Result<MapResult> {
    let opts = prob.options;
    let delta_min = opts.delta_min_for(prob.n());
    let mut x = x_init.clone();
    let mut traj = prob.forward(&x)?;
    let mut cost = prob.cost_on(&x, &traj)?;
    let mut trace = Vec::new();
    let mut costs = vec![cost];
    let mut iterations = 0;
    let mut increases = 0;
    let mut converged = false;
    let mut chain = None;

    for outer in 0..opts.max_outer {
        let c = prob.linearize(&traj)?;
        let grad = prob.gradient_on(&x, &traj, &c)?;
        let grad_norm = norm(&grad);
        let mut rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let sol = if opts.conserve_mass {
            let d = prob.params.d;
            remove_mass(&mut rhs, d);
            pcg_solve(
                |v| {
                    let mut w = v.to_vec();
                    remove_mass(&mut w, d);
                    let mut hv = prob.gn_hessian_vec(&c, &w)?;
                    remove_mass(&mut hv, d);
                    Ok(hv)
                },
                &rhs,
                opts.pcg_tol,
                opts.pcg_max_iter,
            )?
        } else {
            pcg_solve(|v| prob.gn_hessian_vec(&c, v), &rhs, opts.pcg_tol, opts.pcg_max_iter)?
        };
        let step = sol.x;
        let full_norm = norm(&step);
        let mut row = TraceRow {
            outer_iter: outer,
            cost,
            grad_norm,
            step_norm: full_norm,
            pcg_iters: sol.iterations,
            pcg_rel_residual: sol.rel_residual,
        };
        if full_norm < delta_min {
            trace.push(row);
            chain = Some(c);
            converged = true;
            break;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        let mut fallback = None;
        for _ in 0..=opts.max_halvings {
            let mut trial = x.clone();
            for (t, s) in trial.as_mut_slice().iter_mut().zip(&step) {
                *t += alpha * s;
            }
            if let Ok(tr) = prob.forward(&trial) {
                let c_trial = prob.cost_on(&trial, &tr)?;
                if c_trial < cost {
                    accepted = Some((trial, tr, c_trial));
                    break;
                }
                fallback = Some((trial, tr, c_trial));
            }
            alpha *= 0.5;
        }
        let (next, next_traj, next_cost) = match accepted {
            Some(a) => {
                increases = 0;
                a
            }
            None => {
                increases += 1;
                fallback.ok_or_else(|| Error::GaussNewtonDivergence {
                    consecutive: increases,
                    trace: costs.clone(),
                })?
            }
        };
        row.step_norm = norm(&crate::linalg::sub(next.as_slice(), x.as_slice()));
        trace.push(row);
        x = next;
        traj = next_traj;
        cost = next_cost;
        costs.push(cost);
        iterations += 1;
        log::debug!("outer {outer}: cost {cost:.6e}, step {:.3e}", row.step_norm);
        if increases >= opts.max_increases {
            return Err(Error::GaussNewtonDivergence {
                consecutive: increases,
                trace: costs,
            });
        }
        if row.step_norm < delta_min {
            converged = true;
            break;
        }
    }
    let chain = match chain {
        Some(c) => c,
        None => prob.linearize(&traj)?,
    };
    let pushforward = traj.last().expect("non-empty trajectory").clone();
    Ok(MapResult {
        x_map: x,
        pushforward,
        trajectory: traj,
        chain,
        iterations,
        converged,
        trace,
    })
}
