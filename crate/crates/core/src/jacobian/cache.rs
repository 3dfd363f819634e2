//! On-disk cache of a [`JacobianChain`].
//!
//! A cache directory holds `index.json` plus one file per factor and a
//! trajectory file. Factor files start with the magic `SWJACOB\0` and a
//! versioned header (`u32` version, `u32` n, `u64` nnz, `u32` l_max,
//! `u32` substeps, `u64` basepoint hash, `f64` t_from, `f64` t_to), followed
//! by `nnz` triplets `(u32 row, u32 col, f64 value)` in row-major order.
//! All integers and floats are little endian.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::chain::JacobianChain;
use super::taylor::{JacobianConfig, SparseJacobian};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::swe::StateVector;

pub const JACOBIAN_MAGIC: &[u8; 8] = b"SWJACOB\0";
pub const TRAJECTORY_MAGIC: &[u8; 8] = b"SWTRAJ\0\0";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorEntry {
    pub file: String,
    pub t_from: f64,
    pub t_to: f64,
    pub basepoint_hash: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainIndex {
    pub version: u32,
    pub l_max: usize,
    pub substeps: usize,
    pub n: usize,
    pub d: usize,
    pub times: Vec<f64>,
    pub trajectory_file: String,
    pub forward: Vec<FactorEntry>,
    pub inverse: Option<Vec<FactorEntry>>,
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn write_factor(path: &Path, j: &SparseJacobian) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let m = &j.matrix;
    w.write_all(JACOBIAN_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(m.n_rows() as u32).to_le_bytes())?;
    w.write_all(&(m.nnz() as u64).to_le_bytes())?;
    w.write_all(&(j.l_max as u32).to_le_bytes())?;
    w.write_all(&(j.substeps as u32).to_le_bytes())?;
    w.write_all(&j.basepoint_hash.to_le_bytes())?;
    w.write_all(&j.t_from.to_le_bytes())?;
    w.write_all(&j.t_to.to_le_bytes())?;
    for row in 0..m.n_rows() {
        let (cols, vals) = m.row(row);
        for (&c, &v) in cols.iter().zip(vals) {
            w.write_all(&(row as u32).to_le_bytes())?;
            w.write_all(&c.to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let s = self.buf.get(self.pos..self.pos + N)?;
        self.pos += N;
        Some(s.try_into().unwrap())
    }
    fn u32(&mut self) -> Option<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Option<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }
    fn f64(&mut self) -> Option<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }
}

pub fn read_factor(path: &Path) -> Result<SparseJacobian> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut c = Cursor { buf: &bytes, pos: 0 };
    let short = || format_err(path, "truncated factor file");
    if c.take::<8>().as_ref() != Some(JACOBIAN_MAGIC) {
        return Err(format_err(path, "missing Jacobian magic"));
    }
    let version = c.u32().ok_or_else(short)?;
    if version != CACHE_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let n = c.u32().ok_or_else(short)? as usize;
    let nnz = c.u64().ok_or_else(short)? as usize;
    let l_max = c.u32().ok_or_else(short)? as usize;
    let substeps = c.u32().ok_or_else(short)? as usize;
    let basepoint_hash = c.u64().ok_or_else(short)?;
    let t_from = c.f64().ok_or_else(short)?;
    let t_to = c.f64().ok_or_else(short)?;
    let mut indptr = vec![0usize; n + 1];
    let mut indices = Vec::with_capacity(nnz);
    let mut data = Vec::with_capacity(nnz);
    let mut last_row = 0usize;
    for _ in 0..nnz {
        let row = c.u32().ok_or_else(short)? as usize;
        let col = c.u32().ok_or_else(short)?;
        let val = c.f64().ok_or_else(short)?;
        if row >= n || row < last_row {
            return Err(format_err(path, "triplets out of row order"));
        }
        last_row = row;
        indptr[row + 1] += 1;
        indices.push(col);
        data.push(val);
    }
    if c.pos != bytes.len() {
        return Err(format_err(path, "trailing bytes"));
    }
    for r in 0..n {
        indptr[r + 1] += indptr[r];
    }
    let matrix = CsrMatrix::from_parts(n, n, indptr, indices, data).map_err(|e| format_err(path, e.to_string()))?;
    Ok(SparseJacobian {
        matrix,
        t_from,
        t_to,
        basepoint_hash,
        l_max,
        substeps,
    })
}

fn write_trajectory(path: &Path, times: &[f64], states: &[StateVector]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let d = states.first().map(|s| s.d()).unwrap_or(0);
    w.write_all(TRAJECTORY_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    w.write_all(&(states.len() as u64).to_le_bytes())?;
    for (t, s) in times.iter().zip(states) {
        w.write_all(&t.to_le_bytes())?;
        for v in s.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_trajectory(path: &Path) -> Result<(Vec<f64>, Vec<StateVector>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut c = Cursor { buf: &bytes, pos: 0 };
    let short = || format_err(path, "truncated trajectory file");
    if c.take::<8>().as_ref() != Some(TRAJECTORY_MAGIC) {
        return Err(format_err(path, "missing trajectory magic"));
    }
    let version = c.u32().ok_or_else(short)?;
    if version != CACHE_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let d = c.u32().ok_or_else(short)? as usize;
    let count = c.u64().ok_or_else(short)? as usize;
    let mut times = Vec::with_capacity(count);
    let mut states = Vec::with_capacity(count);
    for _ in 0..count {
        times.push(c.f64().ok_or_else(short)?);
        let data = (0..3 * d * d).map(|_| c.f64().ok_or_else(short)).collect::<Result<Vec<_>>>()?;
        states.push(StateVector::from_vec(d, data)?);
    }
    Ok((times, states))
}

/// Writes the chain into `dir` (created if missing).
pub fn write_chain(dir: &Path, chain: &JacobianChain) -> Result<()> {
    fs::create_dir_all(dir)?;
    let entries = |factors: &[SparseJacobian], prefix: &str| -> Result<Vec<FactorEntry>> {
        factors
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let file = format!("{prefix}_{i:05}.jac");
                write_factor(&dir.join(&file), f)?;
                Ok(FactorEntry {
                    file,
                    t_from: f.t_from,
                    t_to: f.t_to,
                    basepoint_hash: f.basepoint_hash,
                })
            })
            .collect()
    };
    let forward = entries(chain.forward(), "fwd")?;
    let inverse = chain.inverse().map(|inv| entries(inv, "inv")).transpose()?;
    write_trajectory(&dir.join("trajectory.bin"), chain.times(), chain.trajectory())?;
    let cfg = chain.config();
    let index = ChainIndex {
        version: CACHE_VERSION,
        l_max: cfg.l_max,
        substeps: cfg.substeps,
        n: chain.n(),
        d: chain.trajectory().first().map(|s| s.d()).unwrap_or(0),
        times: chain.times().to_vec(),
        trajectory_file: "trajectory.bin".into(),
        forward,
        inverse,
    };
    fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

/// Loads a chain written by [`write_chain`], checking factor headers against the index.
pub fn read_chain(dir: &Path) -> Result<JacobianChain> {
    let index_path = dir.join("index.json");
    let index: ChainIndex = serde_json::from_str(&fs::read_to_string(&index_path)?)?;
    if index.version != CACHE_VERSION {
        return Err(format_err(&index_path, format!("unsupported version {}", index.version)));
    }
    let load = |entries: &[FactorEntry]| -> Result<Vec<SparseJacobian>> {
        entries
            .iter()
            .map(|e| {
                let path = dir.join(&e.file);
                let f = read_factor(&path)?;
                if f.basepoint_hash != e.basepoint_hash || f.l_max != index.l_max || f.substeps != index.substeps {
                    return Err(format_err(&path, "factor header disagrees with index"));
                }
                Ok(f)
            })
            .collect()
    };
    let forward = load(&index.forward)?;
    let inverse = index.inverse.as_deref().map(load).transpose()?;
    let (times, states) = read_trajectory(&dir.join(&index.trajectory_file))?;
    if times != index.times {
        return Err(format_err(&index_path, "trajectory times disagree with index"));
    }
    JacobianChain::from_factors(
        times,
        states,
        forward,
        inverse,
        JacobianConfig {
            l_max: index.l_max,
            substeps: index.substeps,
        },
    )
}
