//! Binary checkpoint container: named f64 tensors plus a JSON metadata
//! blob. The format is lossless (bit-exact round trip) and byte-stable:
//! identical tensors and metadata serialize to identical files.
//!
//! Layout (all integers little-endian):
//! ```text
//! magic "BDCK" | u32 version | u64 meta_len | meta (JSON, UTF-8)
//! | u64 tensor_count | per tensor:
//!     u64 name_len | name | u64 ndim | u64 dims.. | f64 values..
//! ```

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

use super::{Parameterized, TensorRef};

const MAGIC: &[u8; 4] = b"BDCK";
const VERSION: u32 = 1;

/// One tensor read back from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Write tensors and metadata to `path`.
pub fn write_checkpoint(
    path: &Path,
    meta: &serde_json::Value,
    tensors: &[TensorRef<'_>],
) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    f.write_all(MAGIC).map_err(io_err)?;
    f.write_u32::<LittleEndian>(VERSION).map_err(io_err)?;
    let meta_bytes = serde_json::to_vec(meta)
        .map_err(|e| Error::Checkpoint(format!("metadata serialization: {e}")))?;
    f.write_u64::<LittleEndian>(meta_bytes.len() as u64)
        .map_err(io_err)?;
    f.write_all(&meta_bytes).map_err(io_err)?;
    f.write_u64::<LittleEndian>(tensors.len() as u64)
        .map_err(io_err)?;
    for t in tensors {
        let expected: usize = t.shape.iter().product();
        if expected != t.data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} declares shape {:?} but holds {} values",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        f.write_u64::<LittleEndian>(t.name.len() as u64)
            .map_err(io_err)?;
        f.write_all(t.name.as_bytes()).map_err(io_err)?;
        f.write_u64::<LittleEndian>(t.shape.len() as u64)
            .map_err(io_err)?;
        for &d in &t.shape {
            f.write_u64::<LittleEndian>(d as u64).map_err(io_err)?;
        }
        for &v in t.data {
            f.write_f64::<LittleEndian>(v).map_err(io_err)?;
        }
    }
    f.flush().map_err(io_err)?;
    Ok(())
}

/// Convenience: write a whole [`Parameterized`] model.
pub fn write_model<M: Parameterized>(
    path: &Path,
    meta: &serde_json::Value,
    model: &M,
) -> Result<()> {
    write_checkpoint(path, meta, &model.tensors())
}

/// Read metadata and all tensors back.
pub fn read_checkpoint(path: &Path) -> Result<(serde_json::Value, Vec<TensorEntry>)> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(io_err)?);

    let mut magic = [0u8; 4];
    f.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)".into()));
    }
    let version = f.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let meta_len = f.read_u64::<LittleEndian>().map_err(io_err)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    f.read_exact(&mut meta_bytes).map_err(io_err)?;
    let meta: serde_json::Value =
        serde_json::from_slice(&meta_bytes).map_err(|e| bad(format!("bad metadata JSON: {e}")))?;

    let count = f.read_u64::<LittleEndian>().map_err(io_err)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = f.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        f.read_exact(&mut name_bytes).map_err(io_err)?;
        let name =
            String::from_utf8(name_bytes).map_err(|e| bad(format!("bad tensor name: {e}")))?;
        let ndim = f.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(f.read_u64::<LittleEndian>().map_err(io_err)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f.read_f64::<LittleEndian>().map_err(io_err)?);
        }
        tensors.push(TensorEntry { name, shape, data });
    }
    Ok((meta, tensors))
}

/// Copy checkpoint tensors into an existing model by matching names.
/// Errors if any model tensor is missing from the file or shapes differ.
pub fn load_into<M: Parameterized>(model: &mut M, tensors: &[TensorEntry]) -> Result<()> {
    for dst in model.tensors_mut().iter_mut() {
        let src = tensors
            .iter()
            .find(|t| t.name == dst.name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", dst.name)))?;
        if src.shape != dst.shape {
            return Err(Error::ShapeMismatch {
                context: format!("checkpoint tensor {}", dst.name),
                expected: format!("{:?}", dst.shape),
                got: format!("{:?}", src.shape),
            });
        }
        dst.data.copy_from_slice(&src.data);
    }
    Ok(())
}
