//! Named-tensor checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    8 bytes  "PSQCKPT1"
//! u32      manifest length, then that many bytes of UTF-8 JSON
//! u32      tensor count
//! repeated:
//!   u32    name length, then the UTF-8 name
//!   u32    rank, then rank x u32 extents
//!   f32    values, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"PSQCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_params(manifest: String, params: &ParamStore) -> Self {
        let tensors = params
            .ids()
            .map(|id| {
                let t = params.get(id);
                NamedTensor {
                    name: params.name(id).to_string(),
                    shape: t.shape().to_vec(),
                    values: t.data().iter().map(|&v| v as f32).collect(),
                }
            })
            .collect();
        Self { manifest, tensors }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u32(&mut w, self.manifest.len())?;
        w.write_all(self.manifest.as_bytes())?;
        write_u32(&mut w, self.tensors.len())?;
        for t in &self.tensors {
            write_u32(&mut w, t.name.len())?;
            w.write_all(t.name.as_bytes())?;
            write_u32(&mut w, t.shape.len())?;
            for &d in &t.shape {
                write_u32(&mut w, d)?;
            }
            for v in &t.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint { name: String::new(), reason: "bad magic".into() });
        }
        let manifest = read_string(&mut r)?;
        let count = read_u32(&mut r)?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_string(&mut r)?;
            let rank = read_u32(&mut r)?;
            let shape = (0..rank).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes)?;
            let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push(NamedTensor { name, shape, values });
        }
        Ok(Self { manifest, tensors })
    }

    /// Copies tensor values into `params`, which must have exactly the
    /// same names and shapes.
    pub fn load_into(&self, params: &mut ParamStore) -> Result<()> {
        for t in &self.tensors {
            let id = params.id(&t.name).ok_or_else(|| Error::Checkpoint {
                name: t.name.clone(),
                reason: "not part of the configured model".into(),
            })?;
            if params.get(id).shape() != t.shape.as_slice() {
                return Err(Error::Checkpoint {
                    name: t.name.clone(),
                    reason: format!("shape {:?} in checkpoint, {:?} in model", t.shape, params.get(id).shape()),
                });
            }
            let values = t.values.iter().map(|&v| f64::from(v)).collect();
            *params.get_mut(id) = Tensor::new(t.shape.clone(), values)?;
        }
        if let Some(id) = params.ids().find(|&id| !self.tensors.iter().any(|t| t.name == params.name(id))) {
            return Err(Error::Checkpoint { name: params.name(id).into(), reason: "missing from checkpoint".into() });
        }
        Ok(())
    }
}

/// Writes `bytes` to a temporary sibling file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)?;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::Checkpoint { name: String::new(), reason: e.to_string() })
}
