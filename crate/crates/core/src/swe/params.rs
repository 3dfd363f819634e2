use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::state::StateVector;
use crate::error::{Error, Result};

/// Physical and grid parameters of the discretized shallow-water model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Grid size; the domain is a `d x d` torus.
    pub d: usize,
    /// Grid spacing (m).
    pub delta: f64,
    /// Gravity (m/s^2).
    pub g: f64,
    /// Coriolis parameter per cell (1/s), row-major `d x d`.
    pub coriolis: Vec<f64>,
    /// Viscosity (m^2/s).
    pub nu: f64,
    /// Bottom friction (1/s).
    pub cb: f64,
    /// Ocean depth per cell (m), row-major `d x d`.
    pub depth: Vec<f64>,
    /// Drop the quadratic (advective) terms, leaving the linearization about rest.
    #[serde(default)]
    pub linear_only: bool,
}

impl ModelParams {
    /// Parameters with a spatially constant Coriolis parameter.
    pub fn new(d: usize, delta: f64, depth: Vec<f64>, f: f64, g: f64, nu: f64, cb: f64) -> Result<Self> {
        let p = Self {
            d,
            delta,
            g,
            coriolis: vec![f; d * d],
            nu,
            cb,
            depth,
            linear_only: false,
        };
        p.validate()?;
        Ok(p)
    }

    /// Flat-bottom parameters, handy for tests.
    pub fn flat(d: usize, delta: f64, depth: f64, f: f64, g: f64, nu: f64, cb: f64) -> Result<Self> {
        Self::new(d, delta, vec![depth; d * d], f, g, nu, cb)
    }

    pub fn with_linear_only(mut self, linear_only: bool) -> Self {
        self.linear_only = linear_only;
        self
    }

    pub fn n(&self) -> usize {
        3 * self.d * self.d
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.d < 3 {
            return bad(format!("grid size d = {} must be at least 3", self.d));
        }
        if !(self.delta > 0.0) {
            return bad(format!("grid spacing {} must be positive", self.delta));
        }
        if !(self.nu >= 0.0) || !(self.cb >= 0.0) {
            return bad("viscosity and bottom friction must be non-negative".into());
        }
        if !(self.g >= 0.0) || !self.g.is_finite() {
            return bad(format!("gravity {} must be finite and non-negative", self.g));
        }
        let d2 = self.d * self.d;
        if self.depth.len() != d2 || self.coriolis.len() != d2 {
            return bad(format!("depth and Coriolis fields must have {d2} entries"));
        }
        if let Some(k) = self.depth.iter().position(|&h| !(h > 0.0) || !h.is_finite()) {
            return bad(format!("depth at cell {k} must be positive and finite"));
        }
        if self.coriolis.iter().any(|f| !f.is_finite()) {
            return bad("Coriolis field must be finite".into());
        }
        Ok(())
    }

    pub fn max_depth(&self) -> f64 {
        self.depth.iter().cloned().fold(0.0, f64::max)
    }

    /// Largest stable time step, `0.2 * delta / sqrt(g * max depth)`.
    pub fn cfl_cap(&self) -> f64 {
        let c = (self.g * self.max_depth()).sqrt();
        if c > 0.0 {
            0.2 * self.delta / c
        } else {
            f64::INFINITY
        }
    }

    /// Domain length `L = d * delta`.
    pub fn domain_length(&self) -> f64 {
        self.d as f64 * self.delta
    }
}

/// Benchmark parameters on a `d x d` grid: the sinusoidal depth field
/// `100 + 100 (1 + 0.5 sin(2 pi x / L)) (1 + 0.5 sin(2 pi y / L))`,
/// `nu = 1e-3`, `c_b = 1e-5`, `g = 9.81`, `f = 1e-4`.
pub fn benchmark_params(d: usize, delta: f64) -> Result<ModelParams> {
    let l = d as f64 * delta;
    let mut depth = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let (x, y) = (i as f64 * delta, j as f64 * delta);
            depth[i * d + j] = 100.0 + 100.0 * (1.0 + 0.5 * (2.0 * PI * x / l).sin()) * (1.0 + 0.5 * (2.0 * PI * y / l).sin());
        }
    }
    ModelParams::new(d, delta, depth, 1e-4, 9.81, 1e-3, 1e-5)
}

/// Benchmark initial condition:
/// `u = 0.5 + 0.5 sin(2 pi (x + y) / L)`, `v = 0.5 - 0.5 cos(2 pi (x - y) / L)`,
/// `h = 2 sin(2 pi x / L) cos(2 pi y / L)`.
pub fn benchmark_initial_state(d: usize, delta: f64) -> StateVector {
    use super::state::Field;
    let l = d as f64 * delta;
    let k = 2.0 * PI / l;
    StateVector::from_fn(d, |field, i, j| {
        let (x, y) = (i as f64 * delta, j as f64 * delta);
        match field {
            Field::U => 0.5 + 0.5 * (k * (x + y)).sin(),
            Field::V => 0.5 - 0.5 * (k * (x - y)).cos(),
            Field::H => 2.0 * (k * x).sin() * (k * y).cos(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_catches_bad_values() {
        assert!(ModelParams::flat(2, 1.0, 1.0, 0.0, 9.81, 0.0, 0.0).is_err());
        assert!(ModelParams::flat(3, 0.0, 1.0, 0.0, 9.81, 0.0, 0.0).is_err());
        assert!(ModelParams::flat(3, 1.0, 0.0, 0.0, 9.81, 0.0, 0.0).is_err());
        assert!(ModelParams::flat(3, 1.0, 1.0, 0.0, 9.81, -1.0, 0.0).is_err());
        assert!(ModelParams::flat(3, 1.0, 1.0, 0.0, 9.81, 0.0, -1.0).is_err());
        assert!(ModelParams::flat(3, 1.0, 1.0, 0.0, 9.81, 0.0, 0.0).is_ok());
    }

    #[test]
    fn benchmark_depth_range() {
        let p = benchmark_params(21, 1e4).unwrap();
        let min = p.depth.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > 100.0 && p.max_depth() <= 325.0 + 1e-9);
        assert!((p.cfl_cap() - 0.2 * 1e4 / (9.81 * p.max_depth()).sqrt()).abs() < 1e-12);
    }
}
