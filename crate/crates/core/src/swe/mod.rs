//! Discretized shallow-water dynamics on a periodic `d x d` grid.

mod dynamics;
mod integrate;
pub mod io;
mod params;
mod state;

pub use dynamics::{
    linear_jacobian, linear_tendency, quadratic_jacobian, quadratic_tendency, tendency, tendency_into,
    tendency_jacobian,
};
pub(crate) use integrate::advance_raw;
pub use integrate::{integrate, step, total_energy, total_mass, Trajectory, BLOW_UP_CAP, GRID_SNAP_TOL};
pub use params::{benchmark_initial_state, benchmark_params, ModelParams};
pub use state::{roll_field, Field, Grid, StateVector};
