//! Linear selection observation operators and synthetic observations.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::swe::{Field, Grid, StateVector, Trajectory, GRID_SNAP_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// `u` and `v` at every grid point.
    VelocitiesEverywhere,
    /// `h` everywhere, `u` and `v` on the sparse site lattice.
    HeightsPlusSparseVel,
    /// `h` on the sparse site lattice.
    SparseHeights,
    /// Arbitrary index list.
    Custom,
}

impl Scenario {
    /// Scenario number 1..=3 (0 for custom).
    pub fn number(self) -> u8 {
        match self {
            Scenario::VelocitiesEverywhere => 1,
            Scenario::HeightsPlusSparseVel => 2,
            Scenario::SparseHeights => 3,
            Scenario::Custom => 0,
        }
    }

    pub fn from_number(k: u8) -> Result<Self> {
        match k {
            1 => Ok(Scenario::VelocitiesEverywhere),
            2 => Ok(Scenario::HeightsPlusSparseVel),
            3 => Ok(Scenario::SparseHeights),
            _ => Err(Error::InvalidParameter(format!("unknown observation scenario {k}"))),
        }
    }
}

/// `H x` selects the components listed in `indices`; `R = sigma^2 I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsOperator {
    pub scenario: Scenario,
    pub d: usize,
    pub r: usize,
    pub offset: usize,
    pub sigma: f64,
    indices: Vec<usize>,
}

/// Sparse lattice coordinates `offset, offset + r, ...` below `d`.
fn sites(d: usize, r: usize, offset: usize) -> Vec<usize> {
    (offset..d).step_by(r).collect()
}

impl ObsOperator {
    /// Operator for one of the three standard scenarios, with sites anchored at 0.
    pub fn new(scenario: Scenario, d: usize, r: usize, sigma: f64) -> Result<Self> {
        Self::with_offset(scenario, d, r, 0, sigma)
    }

    pub fn with_offset(scenario: Scenario, d: usize, r: usize, offset: usize, sigma: f64) -> Result<Self> {
        if d < 3 {
            return Err(Error::InvalidParameter(format!("grid size d = {d} must be at least 3")));
        }
        if r == 0 || r > d {
            return Err(Error::InvalidParameter(format!("spatial frequency r = {r} must be in 1..={d}")));
        }
        if offset >= r {
            return Err(Error::InvalidParameter(format!("site offset {offset} must be below r = {r}")));
        }
        check_sigma(sigma)?;
        let grid = Grid::new(d);
        let lattice = sites(d, r, offset);
        let sparse = |field: Field| -> Vec<usize> {
            let mut out = Vec::new();
            for &i in &lattice {
                for &j in &lattice {
                    out.push(grid.index(field, i, j));
                }
            }
            out
        };
        let full = |field: Field| -> Vec<usize> { (0..d * d).map(|k| field.offset() * d * d + k).collect() };
        let mut indices = match scenario {
            Scenario::VelocitiesEverywhere => [full(Field::U), full(Field::V)].concat(),
            Scenario::HeightsPlusSparseVel => [sparse(Field::U), sparse(Field::V), full(Field::H)].concat(),
            Scenario::SparseHeights => sparse(Field::H),
            Scenario::Custom => {
                return Err(Error::InvalidParameter("use ObsOperator::custom for explicit index lists".into()))
            }
        };
        indices.sort_unstable();
        Ok(Self {
            scenario,
            d,
            r,
            offset,
            sigma,
            indices,
        })
    }

    /// Operator observing an explicit set of state indices.
    pub fn custom(d: usize, mut indices: Vec<usize>, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        let n = 3 * d * d;
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::OutOfRange { index: bad, len: n });
        }
        Ok(Self {
            scenario: Scenario::Custom,
            d,
            r: 1,
            offset: 0,
            sigma,
            indices,
        })
    }

    pub fn n(&self) -> usize {
        3 * self.d * self.d
    }

    /// Number of observed components `n°`.
    pub fn n_obs(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// State indices that are not observed, in increasing order.
    pub fn unobserved(&self) -> Vec<usize> {
        let mut mask = vec![true; self.n()];
        for &i in &self.indices {
            mask[i] = false;
        }
        (0..self.n()).filter(|&i| mask[i]).collect()
    }

    pub fn observe(&self, x: &StateVector) -> Vec<f64> {
        self.observe_slice(x.as_slice())
    }

    pub fn observe_slice(&self, x: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| x[i]).collect()
    }

    /// `H^T w`: scatters `w` into a zero state vector.
    pub fn observe_transpose(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.n_obs() {
            return Err(Error::Dimension {
                expected: self.n_obs(),
                got: w.len(),
            });
        }
        let mut out = vec![0.0; self.n()];
        for (&i, &v) in self.indices.iter().zip(w) {
            out[i] += v;
        }
        Ok(out)
    }

    /// `R^-1 w`.
    pub fn r_inv(&self, w: &[f64]) -> Vec<f64> {
        let s2 = self.sigma * self.sigma;
        w.iter().map(|v| v / s2).collect()
    }

    /// `H^T R^-1 H v` accumulated into `out`.
    pub fn add_information(&self, v: &[f64], out: &mut [f64]) {
        let s2 = self.sigma * self.sigma;
        for &i in &self.indices {
            out[i] += v[i] / s2;
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("observation noise sigma = {sigma} must be positive")));
    }
    Ok(())
}

/// Observations `y_l = H x(t_l) + eps_l` at a sequence of times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub seed: u64,
}

impl ObservationSet {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::TimeMismatch(format!(
                "{} observation times but {} value vectors",
                times.len(),
                values.len()
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("observation values must be finite".into()));
        }
        Ok(Self { times, values, seed })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Observations with times in `[t0, t1)`.
    pub fn slice(&self, t0: f64, t1: f64) -> ObservationSet {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&l| self.times[l] >= t0 - GRID_SNAP_TOL && self.times[l] < t1 - GRID_SNAP_TOL)
            .collect();
        ObservationSet {
            times: keep.iter().map(|&l| self.times[l]).collect(),
            values: keep.iter().map(|&l| self.values[l].clone()).collect(),
            seed: self.seed,
        }
    }

    /// Writes `l,time,obs_index,value` rows plus a JSON sidecar at `<path>.json`.
    pub fn write(&self, path: &Path, op: &ObsOperator) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["l", "time", "obs_index", "value"])?;
        for (l, (t, ys)) in self.times.iter().zip(&self.values).enumerate() {
            for (j, y) in ys.iter().enumerate() {
                w.write_record(&[l.to_string(), t.to_string(), j.to_string(), y.to_string()])?;
            }
        }
        w.flush()?;
        let meta = ObservationMeta {
            scenario: op.scenario,
            d: op.d,
            r: op.r,
            offset: op.offset,
            sigma: op.sigma,
            seed: self.seed,
            indices: op.indices.clone(),
        };
        std::fs::write(sidecar(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Reads a file written by [`ObservationSet::write`], returning the operator too.
    pub fn read(path: &Path) -> Result<(ObservationSet, ObsOperator)> {
        let meta: ObservationMeta = serde_json::from_str(&std::fs::read_to_string(sidecar(path))?)?;
        let op = ObsOperator {
            scenario: meta.scenario,
            d: meta.d,
            r: meta.r,
            offset: meta.offset,
            sigma: meta.sigma,
            indices: meta.indices,
        };
        let mut rdr = csv::Reader::from_path(path)?;
        let mut times: Vec<f64> = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.deserialize() {
            let (l, t, j, y): (usize, f64, usize, f64) = rec?;
            if l == values.len() {
                times.push(t);
                values.push(Vec::with_capacity(op.n_obs()));
            }
            let bad = || Error::Format {
                path: path.to_path_buf(),
                reason: format!("row (l = {l}, obs_index = {j}) out of order"),
            };
            let row = values.get_mut(l).ok_or_else(bad)?;
            if j != row.len() {
                return Err(bad());
            }
            row.push(y);
        }
        if values.iter().any(|v| v.len() != op.n_obs()) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("expected {} values per time", op.n_obs()),
            });
        }
        Ok((ObservationSet::new(times, values, meta.seed)?, op))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationMeta {
    scenario: Scenario,
    d: usize,
    r: usize,
    offset: usize,
    sigma: f64,
    seed: u64,
    indices: Vec<usize>,
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Noise stream for observation time `l`: ChaCha8 keyed by `seed`, stream `l`.
pub fn noise(seed: u64, l: u64, n: usize, sigma: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(l);
    (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Synthetic observations of `truth` at `times` with i.i.d. `N(0, sigma^2)` noise.
pub fn generate_observations(truth: &Trajectory, op: &ObsOperator, times: &[f64], seed: u64) -> Result<ObservationSet> {
    let mut values = Vec::with_capacity(times.len());
    for (l, &t) in times.iter().enumerate() {
        let x = truth
            .at(t)
            .ok_or_else(|| Error::TimeMismatch(format!("truth trajectory has no state at t = {t}")))?;
        if x.d() != op.d {
            return Err(Error::Dimension {
                expected: op.n(),
                got: x.len(),
            });
        }
        let mut y = op.observe(x);
        for (yi, e) in y.iter_mut().zip(noise(seed, l as u64, op.n_obs(), op.sigma)) {
            *yi += e;
        }
        values.push(y);
    }
    ObservationSet::new(times.to_vec(), values, seed)
}
