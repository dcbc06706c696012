//! Checkpoint container: named parameter tensors plus run metadata.
//!
//! Binary layout (all integers little-endian):
//!   magic "DHZCKPT\0" | version u32 | meta_len u32 | meta JSON bytes |
//!   tensor_count u32 | repeated { name_len u32 | name | 4 x u32 shape |
//!   f32-LE values }
//!
//! Tensors are written in sorted-name order and values as raw 32-bit floats,
//! so save -> load -> save is byte-identical. Network parameters are kept
//! f32-representable at runtime, which makes load lossless too.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ParamVisit;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DHZCKPT\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub config_hash: String,
    pub stage: String,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Self {
        Checkpoint {
            meta,
            tensors: BTreeMap::new(),
        }
    }

    /// Snapshots every persistent tensor of `net` under `prefix`.
    pub fn capture(&mut self, prefix: &str, net: &mut (impl ParamVisit + ?Sized)) {
        net.visit_params(prefix, &mut |e| {
            // store values only; gradient buffers are transient
            let t = Tensor::from_vec(e.tensor.shape(), e.tensor.data().to_vec())
                .expect("shape/data agree");
            self.tensors.insert(e.name, t);
        });
    }

    /// Stores a raw vector (optimizer moments and the like) as a flat tensor.
    pub fn insert_vec(&mut self, name: String, values: Vec<f64>) {
        let t = Tensor::from_vec([1, 1, 1, values.len()], values).expect("flat tensor");
        self.tensors.insert(name, t);
    }

    /// Copies checkpoint values into `net`'s tensors. Every visited
    /// parameter must be present with a matching shape.
    pub fn apply(&self, prefix: &str, net: &mut (impl ParamVisit + ?Sized)) -> Result<()> {
        let mut err = None;
        net.visit_params(prefix, &mut |e| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(&e.name) {
                None => {
                    err = Some(Error::CheckpointMissingParam { name: e.name });
                }
                Some(stored) if stored.shape() != e.tensor.shape() => {
                    err = Some(Error::CheckpointShape {
                        name: e.name,
                        expected: format!("{:?}", e.tensor.shape()),
                        got: format!("{:?}", stored.shape()),
                    });
                }
                Some(stored) => {
                    e.tensor.data_mut().copy_from_slice(stored.data());
                    e.tensor.ensure_grad();
                    e.tensor.zero_grad();
                }
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// True when a tensor with this prefix exists (used to sniff which
    /// networks a checkpoint carries).
    pub fn has_prefix(&self, prefix: &str) -> bool {
        let probe = format!("{prefix}/");
        self.tensors.keys().any(|k| k.starts_with(&probe))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)
            .map_err(|e| Error::CheckpointMetadata(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::CheckpointBadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                supported: VERSION,
            });
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::CheckpointMetadata(e.to_string()))?;
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::CheckpointTruncated("parameter name is not UTF-8"))?
                .to_string();
            let shape = [
                r.u32()? as usize,
                r.u32()? as usize,
                r.u32()? as usize,
                r.u32()? as usize,
            ];
            let len: usize = shape.iter().product();
            let raw = r.take(len * 4)?;
            let values: Vec<f64> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            tensors.insert(name, Tensor::from_vec(shape, values)?);
        }
        if r.pos != data.len() {
            return Err(Error::CheckpointTruncated("trailing bytes after tensors"));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::CheckpointTruncated("unexpected end of file"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
