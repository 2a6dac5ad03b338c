//! Versioned binary checkpoint format for named-tensor sets.
//!
//! Layout (all integers little-endian):
//!   magic  b"WVC1"
//!   u32    format version (currently 1)
//!   u32    tensor count
//!   per tensor:
//!     u32      name byte length, then that many UTF-8 bytes
//!     u32      rank, then rank u32 dims
//!     f64 x N  row-major payload
//!
//! Round-trips are bit-exact: payloads are raw f64 bits.

use super::{NetworkParams, Tensor};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"WVC1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, params: &NetworkParams) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, tensor) in params.iter() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(tensor.dims.len() as u32).to_le_bytes())?;
        for &d in &tensor.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &tensor.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(format!("truncated checkpoint reading {what}")))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("truncated checkpoint reading magic"))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(format!(
            "bad checkpoint magic {:?} (expected {:?})",
            magic, CHECKPOINT_MAGIC
        )));
    }
    let version = read_u32(&mut r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = read_u32(&mut r, "tensor count")?;
    let mut params = NetworkParams::new();
    for idx in 0..count {
        let name_len = read_u32(&mut r, "name length")? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)
            .map_err(|_| Error::format(format!("truncated checkpoint in tensor {idx} name")))?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::format(format!("tensor {idx} name is not UTF-8")))?;
        let rank = read_u32(&mut r, "rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut r, "dimension")? as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf).map_err(|_| {
                Error::format(format!("truncated checkpoint in tensor `{name}` payload"))
            })?;
            data.push(f64::from_le_bytes(buf));
        }
        params.insert(&name, Tensor { dims, data })?;
    }
    Ok(params)
}
