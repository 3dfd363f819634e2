//! Strong-constraint 4D-Var on one assimilation window: cost, adjoint
//! gradient, Gauss-Newton Hessian action, conjugate gradients and the outer
//! Gauss-Newton loop.

mod gauss_newton;
mod pcg;
mod problem;

pub use gauss_newton::{gauss_newton, write_trace, MapResult, TraceRow};
pub use pcg::{pcg_solve, PcgOutcome};
pub use problem::{information_apply, Background, DiagonalBackground, SolverOptions, WindowProblem};

use crate::error::Result;
use crate::obs::{ObsOperator, ObservationSet};
use crate::swe::{ModelParams, StateVector};

/// Solves one window starting from the background mean and returns the MAP
/// together with the next window's background mean (the MAP pushed forward
/// to the window end).
pub fn assimilate_window(
    background: &dyn Background,
    obs: &ObservationSet,
    op: &ObsOperator,
    params: &ModelParams,
    t0: f64,
    h_obs: f64,
    options: SolverOptions,
) -> Result<(MapResult, StateVector)> {
    let prob = WindowProblem::new(background, obs, op, params, t0, h_obs, options)?;
    let result = gauss_newton(&prob, background.mean())?;
    let next = result.pushforward.clone();
    Ok((result, next))
}
