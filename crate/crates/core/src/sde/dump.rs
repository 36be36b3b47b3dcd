use std::io::{Read, Write};

use super::euler::PathBatch;
use crate::error::{Error, Result};
use crate::nets::{read_f64s, read_u32, read_u64, write_f64s};

const MAGIC: &[u8; 8] = b"BSDEPATH";
const VERSION: u32 = 1;

/// Header of a path dump.
#[derive(Clone, Debug, PartialEq)]
pub struct DumpHeader {
    pub samples: usize,
    pub steps: usize,
    pub dim: usize,
    pub seed: u64,
    pub horizon: f64,
    pub problem: String,
}

/// Writes the forward states `X` (sample-major, `M x (N+1) x d`) as
/// little-endian f64 after a small header.
pub fn write_path_dump(w: &mut impl Write, paths: &PathBatch, problem: &str) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [paths.samples(), paths.grid.steps(), paths.dim()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&paths.brownian.seed().to_le_bytes())?;
    w.write_all(&paths.grid.horizon().to_le_bytes())?;
    w.write_all(&(problem.len() as u32).to_le_bytes())?;
    w.write_all(problem.as_bytes())?;
    write_f64s(w, paths.data())
}

/// Reads a dump back as its header and the flat state array.
pub fn read_path_dump(r: &mut impl Read) -> Result<(DumpHeader, Vec<f64>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a path dump".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported path dump version {version}")));
    }
    let samples = read_u64(r)? as usize;
    let steps = read_u64(r)? as usize;
    let dim = read_u64(r)? as usize;
    let seed = read_u64(r)?;
    let horizon = f64::from_bits(read_u64(r)?);
    let len = read_u32(r)? as usize;
    let mut name = vec![0u8; len];
    r.read_exact(&mut name)?;
    let problem = String::from_utf8(name).map_err(|_| Error::Format("problem id is not utf-8".into()))?;
    let x = read_f64s(r, samples * (steps + 1) * dim)?;
    Ok((
        DumpHeader {
            samples,
            steps,
            dim,
            seed,
            horizon,
            problem,
        },
        x,
    ))
}
