use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::io::{write_atomic, Reader};

const MAGIC: &[u8; 8] = b"MSDEPATH";
const VERSION: u16 = 1;
const HAS_INCREMENTS: u8 = 1;
const HAS_ETA: u8 = 2;

/// Writes an ensemble in the MSDEPATH layout: magic, version (u16), seed,
/// paths, steps (u64), d, d1 (u32), dt, t0, x0 (f64), a flag byte, then the
/// states, increments and derivative flow as little-endian f64.
pub fn save_ensemble(path: &Path, ens: &PathEnsemble) -> Result<()> {
    let payload = ens.states.len() + ens.increments.as_ref().map_or(0, Vec::len) + ens.eta.as_ref().map_or(0, Vec::len);
    let mut bytes = Vec::with_capacity(64 + 8 * (ens.dim + payload));
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&ens.seed.to_le_bytes());
    bytes.extend_from_slice(&(ens.paths as u64).to_le_bytes());
    bytes.extend_from_slice(&(ens.steps as u64).to_le_bytes());
    bytes.extend_from_slice(&(ens.dim as u32).to_le_bytes());
    bytes.extend_from_slice(&(ens.noise_dim as u32).to_le_bytes());
    bytes.extend_from_slice(&ens.dt.to_le_bytes());
    bytes.extend_from_slice(&ens.t0.to_le_bytes());
    for v in &ens.x0 {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut flags = 0;
    if ens.increments.is_some() {
        flags |= HAS_INCREMENTS;
    }
    if ens.eta.is_some() {
        flags |= HAS_ETA;
    }
    bytes.push(flags);
    let blocks = [Some(&ens.states), ens.increments.as_ref(), ens.eta.as_ref()];
    for v in blocks.into_iter().flatten().flatten() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

fn read_block(r: &mut Reader<'_>, n: usize, what: &str) -> Result<Vec<f64>> {
    let raw = r.take(8 * n, what)?;
    Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn load_ensemble(path: &Path) -> Result<PathEnsemble> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes, path);
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::format(path, "missing MSDEPATH magic"));
    }
    let version = r.u16("header")?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let seed = r.u64("header")?;
    let paths = r.u64("header")? as usize;
    let steps = r.u64("header")? as usize;
    let dim = r.u32("header")? as usize;
    let noise_dim = r.u32("header")? as usize;
    let dt = r.f64("header")?;
    let t0 = r.f64("header")?;
    if dim == 0 || noise_dim == 0 || !(dt > 0.0) {
        return Err(Error::format(path, "invalid header"));
    }
    let x0 = read_block(&mut r, dim, "header")?;
    let flags = r.u8("header")?;
    let states_len = paths
        .checked_mul(steps + 1)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| Error::format(path, "header sizes overflow"))?;
    let inc_len = paths * steps * noise_dim;
    let expected = states_len
        + if flags & HAS_INCREMENTS != 0 { inc_len } else { 0 }
        + if flags & HAS_ETA != 0 { states_len } else { 0 };
    if r.rest().len() != 8 * expected {
        return Err(Error::Mismatch(format!(
            "{}: header needs {} payload bytes, file has {}",
            path.display(),
            8 * expected,
            r.rest().len()
        )));
    }
    let states = read_block(&mut r, states_len, "states")?;
    let increments = (flags & HAS_INCREMENTS != 0).then(|| read_block(&mut r, inc_len, "increments")).transpose()?;
    let eta = (flags & HAS_ETA != 0).then(|| read_block(&mut r, states_len, "flow")).transpose()?;
    Ok(PathEnsemble { t0, x0, dt, steps, paths, dim, noise_dim, seed, states, increments, eta })
}

/// One line of a functional report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalRow {
    pub claim: String,
    pub lhs: f64,
    pub rhs_bound: f64,
    pub std_error: f64,
    pub pass: bool,
}

pub fn write_functional_rows(path: &Path, rows: &[FunctionalRow]) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(rows)?)
}

pub fn read_functional_rows(path: &Path) -> Result<Vec<FunctionalRow>> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
