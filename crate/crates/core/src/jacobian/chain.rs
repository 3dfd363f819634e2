use rayon::prelude::*;

use super::taylor::{build_inverse_jacobian, build_jacobian, JacobianConfig, SparseJacobian};
use crate::error::{Error, Result};
use crate::swe::{ModelParams, StateVector, Trajectory};

/// The factored linearization `M_k ... M_1` of one window, with
/// `M_i = M(t_i, t_(i-1))` built at the stored trajectory states.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianChain {
    times: Vec<f64>,
    trajectory: Vec<StateVector>,
    forward: Vec<SparseJacobian>,
    inverse: Option<Vec<SparseJacobian>>,
    config: JacobianConfig,
}

impl JacobianChain {
    /// Builds the forward factors along `trajectory`, whose states are the
    /// basepoints `x(t_0), ..., x(t_k)`. Factors are built in parallel.
    pub fn build(trajectory: &Trajectory, p: &ModelParams, config: JacobianConfig) -> Result<Self> {
        config.validate()?;
        if trajectory.is_empty() {
            return Err(Error::InvalidParameter("chain needs at least one trajectory state".into()));
        }
        let times = trajectory.times.clone();
        let forward = (1..times.len())
            .into_par_iter()
            .map(|i| {
                let span = times[i] - times[i - 1];
                build_jacobian(&trajectory.states[i - 1], p, span, config.l_max, config.substeps)
                    .map(|j| j.with_start(times[i - 1]))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            times,
            trajectory: trajectory.states.clone(),
            forward,
            inverse: None,
            config,
        })
    }

    /// Adds the inverse factors, each built at the right endpoint of its interval.
    pub fn with_inverses(mut self, p: &ModelParams) -> Result<Self> {
        if self.inverse.is_some() {
            return Ok(self);
        }
        let cfg = self.config;
        let inverse = (1..self.times.len())
            .into_par_iter()
            .map(|i| {
                let span = self.times[i] - self.times[i - 1];
                build_inverse_jacobian(&self.trajectory[i], p, span, cfg.l_max, cfg.substeps).map(|mut j| {
                    j.t_from = self.times[i];
                    j.t_to = self.times[i - 1];
                    j
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.inverse = Some(inverse);
        Ok(self)
    }

    /// Assembles a chain from explicit factors (linear test systems, cache loads).
    pub fn from_factors(
        times: Vec<f64>,
        trajectory: Vec<StateVector>,
        forward: Vec<SparseJacobian>,
        inverse: Option<Vec<SparseJacobian>>,
        config: JacobianConfig,
    ) -> Result<Self> {
        if times.len() != forward.len() + 1 || trajectory.len() != times.len() {
            return Err(Error::Dimension {
                expected: forward.len() + 1,
                got: times.len(),
            });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("chain times must be strictly increasing".into()));
        }
        if let Some(inv) = &inverse {
            if inv.len() != forward.len() {
                return Err(Error::Dimension {
                    expected: forward.len(),
                    got: inv.len(),
                });
            }
        }
        let n = forward.first().map(|f| f.n());
        if let Some(n) = n {
            let all = forward.iter().chain(inverse.iter().flatten());
            if let Some(bad) = all.map(|f| f.n()).find(|&m| m != n) {
                return Err(Error::Dimension { expected: n, got: bad });
            }
        }
        Ok(Self {
            times,
            trajectory,
            forward,
            inverse,
            config,
        })
    }

    /// Number of factors `k`.
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn n(&self) -> usize {
        self.trajectory.first().map(|s| s.len()).unwrap_or(0)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn trajectory(&self) -> &[StateVector] {
        &self.trajectory
    }

    pub fn forward(&self) -> &[SparseJacobian] {
        &self.forward
    }

    pub fn inverse(&self) -> Option<&[SparseJacobian]> {
        self.inverse.as_deref()
    }

    pub fn has_inverses(&self) -> bool {
        self.inverse.is_some()
    }

    pub fn config(&self) -> JacobianConfig {
        self.config
    }

    /// Applies `P = M_upto ... M_1`, or `P^T`, `P^-1`, `P^-T`, factor by factor.
    pub fn apply(&self, v: &[f64], upto: usize, transpose: bool, inverse: bool) -> Result<Vec<f64>> {
        if upto > self.len() {
            return Err(Error::OutOfRange {
                index: upto,
                len: self.len(),
            });
        }
        if v.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: v.len(),
            });
        }
        let factors: &[SparseJacobian] = if inverse {
            self.inverse
                .as_deref()
                .ok_or_else(|| Error::InvalidParameter("chain has no inverse factors".into()))?
        } else {
            &self.forward
        };
        let factors = &factors[..upto];
        let mut out = v.to_vec();
        let mut tmp = vec![0.0; v.len()];
        // P = M_u..M_1:      M_1 first
        // P^T = M_1^T..M_u^T: M_u^T first
        // P^-1 = M_1^-1..M_u^-1: M_u^-1 first
        // P^-T = M_u^-T..M_1^-T: M_1^-T first
        let reversed = transpose != inverse;
        let order: Box<dyn Iterator<Item = &SparseJacobian>> = if reversed {
            Box::new(factors.iter().rev())
        } else {
            Box::new(factors.iter())
        };
        for f in order {
            if transpose {
                f.matrix.tmul_vec_into(&out, &mut tmp);
            } else {
                f.matrix.mul_vec_into(&out, &mut tmp);
            }
            std::mem::swap(&mut out, &mut tmp);
        }
        Ok(out)
    }

    /// Drops the trailing factors, keeping `M_1..M_keep`.
    pub fn truncated(&self, keep: usize) -> Result<Self> {
        if keep > self.len() {
            return Err(Error::OutOfRange {
                index: keep,
                len: self.len(),
            });
        }
        Ok(Self {
            times: self.times[..=keep].to_vec(),
            trajectory: self.trajectory[..=keep].to_vec(),
            forward: self.forward[..keep].to_vec(),
            inverse: self.inverse.as_ref().map(|inv| inv[..keep].to_vec()),
            config: self.config,
        })
    }
}

/// Free-function form of [`JacobianChain::apply`].
pub fn chain_apply(c: &JacobianChain, v: &[f64], upto: usize, transpose: bool, inverse: bool) -> Result<Vec<f64>> {
    c.apply(v, upto, transpose, inverse)
}
