use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jacobian::{JacobianChain, JacobianConfig};
use crate::linalg::{dot, sub};
use crate::obs::{ObsOperator, ObservationSet};
use crate::swe::{integrate, ModelParams, StateVector, Trajectory, GRID_SNAP_TOL};

/// Gaussian prior on the window's initial state, given by its mean and the
/// action of its precision matrix.
pub trait Background: Send + Sync {
    fn mean(&self) -> &StateVector;
    fn apply_precision(&self, w: &[f64]) -> Result<Vec<f64>>;
}

/// Background with a diagonal precision. Zero entries are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalBackground {
    pub mean: StateVector,
    pub precision: Vec<f64>,
}

impl DiagonalBackground {
    pub fn new(mean: StateVector, precision: Vec<f64>) -> Result<Self> {
        if precision.len() != mean.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: precision.len(),
            });
        }
        if precision.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidParameter("background precision must be finite and non-negative".into()));
        }
        Ok(Self { mean, precision })
    }
}

impl Background for DiagonalBackground {
    fn mean(&self) -> &StateVector {
        &self.mean
    }

    fn apply_precision(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.precision.len() {
            return Err(Error::Dimension {
                expected: self.precision.len(),
                got: w.len(),
            });
        }
        Ok(w.iter().zip(&self.precision).map(|(a, b)| a * b).collect())
    }
}

/// Knobs of the Gauss-Newton / PCG solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// RK4 steps per observation interval.
    pub steps_per_obs: usize,
    pub jacobian: JacobianConfig,
    pub pcg_tol: f64,
    pub pcg_max_iter: usize,
    /// Step-norm stopping threshold; `None` means `1e-6 sqrt(n)`.
    pub delta_min: Option<f64>,
    pub max_outer: usize,
    pub max_halvings: usize,
    /// Consecutive cost increases tolerated before aborting.
    pub max_increases: usize,
    /// Solve on the first half of the window first, then on the whole window.
    pub continuation: bool,
    /// Restrict increments to zero total height, i.e. condition on the
    /// background's total mass.
    pub conserve_mass: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            steps_per_obs: 10,
            jacobian: JacobianConfig::default(),
            pcg_tol: 0.01,
            pcg_max_iter: 100,
            delta_min: None,
            max_outer: 20,
            max_halvings: 8,
            max_increases: 3,
            continuation: false,
            conserve_mass: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        self.jacobian.validate()?;
        if self.steps_per_obs == 0 || self.max_outer == 0 || self.pcg_max_iter == 0 || self.max_increases == 0 {
            return Err(Error::InvalidParameter("solver step and iteration counts must be positive".into()));
        }
        if !(self.pcg_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("PCG tolerance {} must be positive", self.pcg_tol)));
        }
        if let Some(dm) = self.delta_min {
            if !(dm > 0.0) {
                return Err(Error::InvalidParameter(format!("delta_min {dm} must be positive")));
            }
        }
        Ok(())
    }

    pub fn delta_min_for(&self, n: usize) -> f64 {
        self.delta_min.unwrap_or(1e-6 * (n as f64).sqrt())
    }
}

/// One assimilation window `[t0, t0 + k h_obs]` with observations at
/// `t0 + l h_obs`, `l = 0..k`.
pub struct WindowProblem<'a> {
    pub background: &'a dyn Background,
    pub obs: &'a ObservationSet,
    pub op: &'a ObsOperator,
    pub params: &'a ModelParams,
    pub t0: f64,
    pub h_obs: f64,
    pub options: SolverOptions,
}

impl<'a> WindowProblem<'a> {
    pub fn new(
        background: &'a dyn Background,
        obs: &'a ObservationSet,
        op: &'a ObsOperator,
        params: &'a ModelParams,
        t0: f64,
        h_obs: f64,
        options: SolverOptions,
    ) -> Result<Self> {
        options.validate()?;
        if obs.is_empty() {
            return Err(Error::InvalidParameter("window has no observations".into()));
        }
        if !(h_obs > 0.0) {
            return Err(Error::InvalidParameter(format!("observation interval {h_obs} must be positive")));
        }
        for (l, &t) in obs.times.iter().enumerate() {
            let expected = t0 + l as f64 * h_obs;
            if (t - expected).abs() > GRID_SNAP_TOL.max(1e-12 * expected.abs()) {
                return Err(Error::TimeMismatch(format!(
                    "observation {l} at t = {t}, expected {expected}"
                )));
            }
        }
        if obs.values.iter().any(|v| v.len() != op.n_obs()) {
            return Err(Error::Dimension {
                expected: op.n_obs(),
                got: obs.values.iter().map(|v| v.len()).find(|&m| m != op.n_obs()).unwrap_or(0),
            });
        }
        if background.mean().d() != params.d || op.d != params.d {
            return Err(Error::Dimension {
                expected: params.n(),
                got: background.mean().len(),
            });
        }
        Ok(Self {
            background,
            obs,
            op,
            params,
            t0,
            h_obs,
            options,
        })
    }

    /// Number of observation times `k`.
    pub fn k(&self) -> usize {
        self.obs.len()
    }

    pub fn n(&self) -> usize {
        self.params.n()
    }

    /// `t0, t0 + h_obs, ..., t0 + k h_obs`.
    pub fn record_times(&self) -> Vec<f64> {
        (0..=self.k()).map(|l| self.t0 + l as f64 * self.h_obs).collect()
    }

    pub fn window_end(&self) -> f64 {
        self.t0 + self.k() as f64 * self.h_obs
    }

    /// Nonlinear trajectory from `x0` recorded at every observation time and at the window end.
    pub fn forward(&self, x0: &StateVector) -> Result<Trajectory> {
        let times = self.record_times();
        let dt = self.h_obs / self.options.steps_per_obs as f64;
        integrate(x0, self.params, self.t0, *times.last().unwrap(), dt, &times)
    }

    /// Sub-problem on the first `k` observations.
    pub fn truncated(&self, obs: &'a ObservationSet) -> Result<WindowProblem<'a>> {
        WindowProblem::new(self.background, obs, self.op, self.params, self.t0, self.h_obs, self.options)
    }

    fn background_term(&self, x0: &StateVector) -> Result<(Vec<f64>, f64)> {
        let dx = sub(x0.as_slice(), self.background.mean().as_slice());
        let bdx = self.background.apply_precision(&dx)?;
        let q = 0.5 * dot(&dx, &bdx);
        Ok((bdx, q))
    }

    /// `H x(t_l) - y_l` for each observation time.
    pub fn residuals(&self, traj: &Trajectory) -> Vec<Vec<f64>> {
        self.obs
            .values
            .iter()
            .zip(&traj.states)
            .map(|(y, x)| sub(&self.op.observe(x), y))
            .collect()
    }

    fn obs_cost(&self, residuals: &[Vec<f64>]) -> f64 {
        let s2 = self.op.sigma * self.op.sigma;
        0.5 * residuals.iter().map(|r| dot(r, r) / s2).sum::<f64>()
    }

    /// The 4D-Var cost, with a fresh forward integration.
    pub fn cost(&self, x0: &StateVector) -> Result<f64> {
        let traj = self.forward(x0)?;
        self.cost_on(x0, &traj)
    }

    pub(crate) fn cost_on(&self, x0: &StateVector, traj: &Trajectory) -> Result<f64> {
        let (_, q) = self.background_term(x0)?;
        Ok(q + self.obs_cost(&self.residuals(traj)))
    }

    /// Linearization of the flow along `traj`, one factor per observation interval.
    pub fn linearize(&self, traj: &Trajectory) -> Result<JacobianChain> {
        JacobianChain::build(traj, self.params, self.options.jacobian)
    }

    /// Gradient of the cost at `x0` (forward run, linearization, adjoint sweep).
    pub fn gradient(&self, x0: &StateVector) -> Result<Vec<f64>> {
        let traj = self.forward(x0)?;
        let chain = self.linearize(&traj)?;
        self.gradient_on(x0, &traj, &chain)
    }

    /// `B^-1 (x0 - x^b) + sum_l M(t_l, t0)^T H^T R^-1 (H x(t_l) - y_l)` via
    /// the backward recursion `g_l = H^T R^-1 r_l + M_(l+1)^T g_(l+1)`.
    pub fn gradient_on(&self, x0: &StateVector, traj: &Trajectory, chain: &JacobianChain) -> Result<Vec<f64>> {
        let k = self.k();
        check_chain(chain, k)?;
        let res = self.residuals(traj);
        let (mut grad, _) = self.background_term(x0)?;
        let mut g = self.op.observe_transpose(&self.op.r_inv(&res[k - 1]))?;
        for l in (0..k - 1).rev() {
            let mut next = chain.forward()[l].matrix.tmul_vec(&g);
            let local = self.op.observe_transpose(&self.op.r_inv(&res[l]))?;
            for (a, b) in next.iter_mut().zip(local) {
                *a += b;
            }
            g = next;
        }
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
        Ok(grad)
    }

    /// Gauss-Newton Hessian action `B^-1 w + sum_l M(t_l,t0)^T H^T R^-1 H M(t_l,t0) w`.
    pub fn gn_hessian_vec(&self, chain: &JacobianChain, w: &[f64]) -> Result<Vec<f64>> {
        let mut out = information_apply(chain, self.op, self.k(), w)?;
        let bw = self.background.apply_precision(w)?;
        for (a, b) in out.iter_mut().zip(bw) {
            *a += b;
        }
        Ok(out)
    }
}

fn check_chain(chain: &JacobianChain, k: usize) -> Result<()> {
    if chain.len() + 1 < k {
        return Err(Error::Dimension {
            expected: k - 1,
            got: chain.len(),
        });
    }
    Ok(())
}

/// `sum_{l<k} M(t_l,t0)^T H^T R^-1 H M(t_l,t0) w` through the forward sweep
/// `w_l = M_l w_(l-1)` and the backward sweep `h_l = H^T R^-1 H w_l + M_(l+1)^T h_(l+1)`.
pub fn information_apply(chain: &JacobianChain, op: &ObsOperator, k: usize, w: &[f64]) -> Result<Vec<f64>> {
    if k == 0 {
        return Ok(vec![0.0; w.len()]);
    }
    check_chain(chain, k)?;
    if w.len() != chain.n() || w.len() != op.n() {
        return Err(Error::Dimension {
            expected: chain.n(),
            got: w.len(),
        });
    }
    let mut ws = Vec::with_capacity(k);
    ws.push(w.to_vec());
    for l in 1..k {
        let next = chain.forward()[l - 1].matrix.mul_vec(&ws[l - 1]);
        ws.push(next);
    }
    let mut h = vec![0.0; w.len()];
    op.add_information(&ws[k - 1], &mut h);
    for l in (0..k - 1).rev() {
        let mut next = chain.forward()[l].matrix.tmul_vec(&h);
        op.add_information(&ws[l], &mut next);
        h = next;
    }
    Ok(h)
}
