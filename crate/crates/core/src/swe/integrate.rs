use serde::{Deserialize, Serialize};

use super::dynamics::tendency_into;
use super::params::ModelParams;
use super::state::StateVector;
use crate::error::{Error, Result};

/// Components larger than this in magnitude abort integration.
pub const BLOW_UP_CAP: f64 = 1e8;

/// Record times must sit on the substep grid to within this many seconds.
pub const GRID_SNAP_TOL: f64 = 1e-9;

/// States recorded at a strictly increasing sequence of times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<StateVector>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::TimeMismatch(format!(
                "{} times but {} states",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::TimeMismatch("times must be strictly increasing".into()));
        }
        Ok(Self { times, states })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&StateVector> {
        self.states.last()
    }

    /// State recorded at `t` (to within the grid snapping tolerance).
    pub fn at(&self, t: f64) -> Option<&StateVector> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= GRID_SNAP_TOL)
            .map(|k| &self.states[k])
    }
}

fn check_dt(dt: f64, p: &ModelParams) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
    }
    let cap = p.cfl_cap();
    if dt > cap {
        return Err(Error::InvalidParameter(format!(
            "time step {dt} s exceeds the stability cap {cap:.4} s"
        )));
    }
    Ok(())
}

/// Scratch buffers for repeated RK4 steps.
struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    /// One classical RK4 step in place. `dt` may be negative.
    fn advance(&mut self, x: &mut [f64], p: &ModelParams, dt: f64) {
        tendency_into(x, p, &mut self.k1);
        stage(&mut self.tmp, x, 0.5 * dt, &self.k1);
        tendency_into(&self.tmp, p, &mut self.k2);
        stage(&mut self.tmp, x, 0.5 * dt, &self.k2);
        tendency_into(&self.tmp, p, &mut self.k3);
        stage(&mut self.tmp, x, dt, &self.k3);
        tendency_into(&self.tmp, p, &mut self.k4);
        let ks = self.k1.iter().zip(&self.k2).zip(&self.k3).zip(&self.k4);
        for (xi, (((a, b), c), d)) in x.iter_mut().zip(ks) {
            *xi += dt / 6.0 * (a + 2.0 * b + 2.0 * c + d);
        }
    }
}

/// `out = x + c k`.
fn stage(out: &mut [f64], x: &[f64], c: f64, k: &[f64]) {
    for ((o, a), b) in out.iter_mut().zip(x).zip(k) {
        *o = a + c * b;
    }
}

fn check_blow_up(x: &[f64], time: f64) -> Result<()> {
    match x.iter().position(|v| !(v.abs() <= BLOW_UP_CAP)) {
        Some(index) => Err(Error::Divergence {
            time,
            index,
            cap: BLOW_UP_CAP,
        }),
        None => Ok(()),
    }
}

/// Advances the state by one classical RK4 step of size `dt`.
pub fn step(x: &StateVector, p: &ModelParams, dt: f64) -> Result<StateVector> {
    check_dt(dt, p)?;
    if x.d() != p.d {
        return Err(Error::Dimension {
            expected: p.n(),
            got: x.len(),
        });
    }
    x.check_finite()?;
    let mut out = x.clone();
    Rk4::new(x.len()).advance(out.as_mut_slice(), p, dt);
    check_blow_up(out.as_slice(), dt)?;
    Ok(out)
}

/// Integrates from `t0` to `t1` with fixed step `dt`, recording the state at
/// each time in `record_at`. All record times and `t1` must lie on the
/// substep grid `t0 + m dt`.
pub fn integrate(
    x0: &StateVector,
    p: &ModelParams,
    t0: f64,
    t1: f64,
    dt: f64,
    record_at: &[f64],
) -> Result<Trajectory> {
    if x0.d() != p.d {
        return Err(Error::Dimension {
            expected: p.n(),
            got: x0.len(),
        });
    }
    x0.check_finite()?;
    if t1 < t0 {
        return Err(Error::InvalidParameter(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    if record_at.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("record times must be strictly increasing".into()));
    }
    if let Some(&t) = record_at.iter().find(|&&t| t < t0 - GRID_SNAP_TOL || t > t1 + GRID_SNAP_TOL) {
        return Err(Error::InvalidParameter(format!("record time {t} outside [{t0}, {t1}]")));
    }
    if t1 == t0 {
        return Trajectory::new(record_at.to_vec(), record_at.iter().map(|_| x0.clone()).collect());
    }
    check_dt(dt, p)?;
    let grid_step = |t: f64| -> Result<usize> {
        let m = ((t - t0) / dt).round();
        if (t0 + m * dt - t).abs() > GRID_SNAP_TOL {
            return Err(Error::OffGrid { time: t, dt });
        }
        Ok(m as usize)
    };
    let total = grid_step(t1)?;
    let marks = record_at.iter().map(|&t| grid_step(t)).collect::<Result<Vec<_>>>()?;

    let mut states = Vec::with_capacity(record_at.len());
    let mut x = x0.as_slice().to_vec();
    let mut rk = Rk4::new(x.len());
    let mut next = 0;
    for m in 0..=total {
        while next < marks.len() && marks[next] == m {
            states.push(StateVector::from_vec(p.d, x.clone())?);
            next += 1;
        }
        if m == total {
            break;
        }
        rk.advance(&mut x, p, dt);
        check_blow_up(&x, t0 + (m + 1) as f64 * dt)?;
    }
    Trajectory::new(record_at.to_vec(), states)
}

/// Integrates over `span` seconds (may be negative) using `steps` equal RK4
/// steps, without any stability cap. Used for short substep basepoints.
pub(crate) fn advance_raw(x: &[f64], p: &ModelParams, span: f64, steps: usize) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    let mut rk = Rk4::new(x.len());
    let dt = span / steps as f64;
    for _ in 0..steps {
        rk.advance(&mut out, p, dt);
    }
    check_blow_up(&out, span)?;
    Ok(out)
}

/// Mass `sum (h + depth)`.
pub fn total_mass(x: &StateVector, p: &ModelParams) -> f64 {
    x.field(super::state::Field::H)
        .iter()
        .zip(&p.depth)
        .map(|(h, hb)| h + hb)
        .sum()
}

/// Energy `1/2 sum ((h + H) u^2 + (h + H) v^2 + g (h^2 - H^2))`.
pub fn total_energy(x: &StateVector, p: &ModelParams) -> f64 {
    use super::state::Field;
    let (u, v, h) = (x.field(Field::U), x.field(Field::V), x.field(Field::H));
    let mut e = 0.0;
    for k in 0..u.len() {
        let hb = p.depth[k];
        let col = h[k] + hb;
        e += col * u[k] * u[k] + col * v[k] * v[k] + p.g * (h[k] * h[k] - hb * hb);
    }
    0.5 * e
}
