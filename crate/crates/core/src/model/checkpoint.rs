//! Checkpoint container.
//!
//! ```text
//! magic    8 bytes  "DACKPT01"
//! hlen     u64 LE   length of the JSON header
//! header   JSON     {"spec": ModelSpec, "meta": any, "tensors": [{"name", "offset", "len"}]}
//! blob     f32 LE   tensor values; offsets and lengths count elements
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelSpec, Net, Real};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DACKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Named `f32` tensors plus the model spec and free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Vec<f32>)>,
}

impl Checkpoint {
    pub fn from_net<T: Real>(net: &Net<T>, meta: serde_json::Value) -> Self {
        Self {
            spec: *net.spec(),
            meta,
            tensors: net
                .named_params()
                .into_iter()
                .map(|(n, v)| (n, v.iter().map(|x| x.f64() as f32).collect()))
                .collect(),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    /// Rebuilds the network; every parameter tensor must be present with
    /// the size the spec implies.
    pub fn to_net<T: Real>(&self) -> Result<Net<T>> {
        let mut net = Net::<T>::new(self.spec, 0)?;
        let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, dst) in names.iter().zip(net.param_slices_mut()) {
            let src = self
                .tensor(name)
                .ok_or_else(|| Error::arg(format!("checkpoint lacks tensor {name}")))?;
            if src.len() != dst.len() {
                return Err(Error::arg(format!(
                    "tensor {name} has {} values, spec implies {}",
                    src.len(),
                    dst.len()
                )));
            }
            for (d, s) in dst.iter_mut().zip(src) {
                *d = T::of(*s as f64);
            }
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, v)| {
                let e = TensorEntry {
                    name: name.clone(),
                    offset,
                    len: v.len(),
                };
                offset += v.len();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            spec: self.spec,
            meta: self.meta.clone(),
            tensors,
        })
        .expect("header serialises");
        let mut out = Vec::with_capacity(16 + header.len() + 4 * offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, v) in &self.tensors {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |r: &str| Error::format(path, r);
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
        let blob = &bytes[16 + hlen..];
        if blob.len() % 4 != 0 {
            return Err(bad("blob length is not a multiple of 4"));
        }
        let values: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensors = header
            .tensors
            .into_iter()
            .map(|e| {
                values
                    .get(e.offset..e.offset.saturating_add(e.len))
                    .map(|v| (e.name.clone(), v.to_vec()))
                    .ok_or_else(|| bad(&format!("tensor {} out of range", e.name)))
            })
            .collect::<Result<_>>()?;
        header.spec.validate()?;
        Ok(Self {
            spec: header.spec,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and checks the stored spec against `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelSpec) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.spec != *expected {
            return Err(Error::config(format!(
                "checkpoint spec {:?} differs from configured {:?}",
                ck.spec, expected
            )));
        }
        Ok(ck)
    }
}
