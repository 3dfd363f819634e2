//! State snapshot files.
//!
//! Binary layout (little endian): the 8-byte magic `SWSTATE\0`, a `u32`
//! format version, a `u32` grid size `d`, then `3 d^2` `f64` values in
//! field order u, v, h, each field row-major.
//!
//! CSV layout: `# d=<d>` and `# order=u,v,h row-major` header lines, then
//! one value per line in the same order. Values are written in shortest
//! round-trip form, so CSV snapshots are lossless too.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::state::StateVector;
use crate::error::{Error, Result};

pub const STATE_MAGIC: &[u8; 8] = b"SWSTATE\0";
pub const STATE_VERSION: u32 = 1;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn write_state_binary(path: &Path, x: &StateVector) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(STATE_MAGIC)?;
    w.write_all(&STATE_VERSION.to_le_bytes())?;
    w.write_all(&(x.d() as u32).to_le_bytes())?;
    for v in x.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_state_binary(path: &Path) -> Result<StateVector> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..8] != STATE_MAGIC {
        return Err(format_err(path, "missing state magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != STATE_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != 3 * d * d * 8 {
        return Err(format_err(path, format!("expected {} values for d = {d}", 3 * d * d)));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    StateVector::from_vec(d, data)
}

pub fn write_state_csv(path: &Path, x: &StateVector) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# d={}", x.d())?;
    writeln!(w, "# order=u,v,h row-major")?;
    for v in x.as_slice() {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_state_csv(path: &Path) -> Result<StateVector> {
    let reader = BufReader::new(File::open(path)?);
    let mut d = None;
    let mut data = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("d=") {
                d = Some(v.parse::<usize>().map_err(|e| format_err(path, e.to_string()))?);
            }
            continue;
        }
        data.push(line.parse::<f64>().map_err(|e| format_err(path, e.to_string()))?);
    }
    let d = d.ok_or_else(|| format_err(path, "missing `# d=` header"))?;
    StateVector::from_vec(d, data).map_err(|e| format_err(path, e.to_string()))
}
