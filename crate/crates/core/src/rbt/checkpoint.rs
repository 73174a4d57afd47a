use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RbtConfig, RbtError, RbtParams};

const MAGIC: &[u8; 8] = b"RBTPARAM";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize, PartialEq)]
struct Header {
    config: RbtConfig,
    state_dim: usize,
    action_dim: usize,
}

/// Magic, version, length-prefixed JSON config echo, then every parameter as
/// little-endian `f64` in declaration order.
pub fn write_checkpoint<W: Write>(params: &RbtParams, mut out: W) -> Result<(), RbtError> {
    let header = Header { config: params.config.clone(), state_dim: params.state_dim, action_dim: params.action_dim };
    let json = serde_json::to_vec(&header).map_err(|e| RbtError::Checkpoint(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let flat = params.flat();
    out.write_all(&(flat.len() as u64).to_le_bytes())?;
    for v in flat {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64, RbtError> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a checkpoint whose config echo must equal `expected`.
pub fn read_checkpoint<R: Read>(mut input: R, expected: &RbtConfig) -> Result<RbtParams, RbtError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(RbtError::Checkpoint("not a parameter checkpoint".into()));
    }
    let mut v = [0u8; 4];
    input.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(RbtError::Checkpoint(format!("unsupported version {version}")));
    }
    let len = read_u64(&mut input)? as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| RbtError::Checkpoint(e.to_string()))?;
    if &header.config != expected {
        return Err(RbtError::ConfigMismatch);
    }
    let mut params = RbtParams::zeroed(&header.config, header.state_dim, header.action_dim)?;
    let n = read_u64(&mut input)? as usize;
    if n != params.n_scalars() {
        return Err(RbtError::Checkpoint(format!("expected {} parameters, file has {n}", params.n_scalars())));
    }
    let mut values = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        input.read_exact(&mut b)?;
        values.push(f64::from_le_bytes(b));
    }
    params.set_flat(&values)?;
    Ok(params)
}

pub fn save_checkpoint(params: &RbtParams, path: &Path) -> Result<(), RbtError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected: &RbtConfig) -> Result<RbtParams, RbtError> {
    read_checkpoint(BufReader::new(File::open(path)?), expected)
}
