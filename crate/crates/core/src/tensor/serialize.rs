//! Flat little-endian parameter files.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes   b"SHPPARAM"
//! version  u32
//! count    u32       number of tensors
//! per tensor, in list order:
//!   rank     u32
//!   extents  rank x u64
//!   payload  product(extents) x f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 8] = b"SHPPARAM";
pub const PARAMS_FORMAT_VERSION: u32 = 1;

pub fn write_params(path: &Path, params: &[Tensor]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    encode(&mut out, params).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn encode(out: &mut impl Write, params: &[Tensor]) -> std::io::Result<()> {
    out.write_all(PARAMS_MAGIC)?;
    out.write_all(&PARAMS_FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        out.write_all(&(p.rank() as u32).to_le_bytes())?;
        for &e in p.shape() {
            out.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in p.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_params(path: &Path) -> Result<Vec<Tensor>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    decode(&mut input).map_err(|e| match e {
        DecodeError::Io(e) => Error::io(path, e),
        DecodeError::Format(m) => Error::format(path, m),
    })
}

enum DecodeError {
    Io(std::io::Error),
    Format(String),
}

impl From<std::io::Error> for DecodeError {
    fn from(e: std::io::Error) -> Self {
        DecodeError::Io(e)
    }
}

fn read_u32(input: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(input: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn decode(input: &mut impl Read) -> std::result::Result<Vec<Tensor>, DecodeError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != PARAMS_MAGIC {
        return Err(DecodeError::Format("not a parameter file (bad magic)".into()));
    }
    let version = read_u32(input)?;
    if version != PARAMS_FORMAT_VERSION {
        return Err(DecodeError::Format(format!(
            "unsupported parameter format version {version}"
        )));
    }
    let count = read_u32(input)? as usize;
    let mut params = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let rank = read_u32(input)? as usize;
        if rank > 8 {
            return Err(DecodeError::Format(format!("tensor {i}: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(input)? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| DecodeError::Format(format!("tensor {i}: extents overflow")))?;
        let mut bytes = vec![0u8; len * 8];
        input.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        params.push(Tensor::new(shape, data).map_err(|e| DecodeError::Format(e.to_string()))?);
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(DecodeError::Format("trailing bytes after last tensor".into()));
    }
    Ok(params)
}
