//! Self-describing checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0      8 bytes   magic  b"IBLABCK\0"
//! 8      u32       format version (1)
//! 12     u64       header length H
//! 20     H bytes   UTF-8 JSON header (key-value, see `Header`)
//! 20+H   8·n bytes f64 payload, tensors back to back in header order
//! end-32 32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! The header records the RNG seed, free-form metadata (layer widths,
//! objective, ...), and for each tensor its `store/param[#m|#v]` name, shape
//! and element offset into the payload. Adam moments and step counters are
//! saved so a resumed run is bit-identical.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamStore;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"IBLABCK\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    seed: u64,
    metadata: BTreeMap<String, serde_json::Value>,
    stores: Vec<StoreEntry>,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoreEntry {
    name: String,
    step: u64,
    params: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub stores: Vec<(String, ParamStore)>,
}

impl Checkpoint {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            metadata: BTreeMap::new(),
            stores: Vec::new(),
        }
    }

    pub fn store(&self, name: &str) -> Option<&ParamStore> {
        self.stores.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut stores = Vec::new();
        let mut payload: Vec<f64> = Vec::new();
        for (store_name, store) in &self.stores {
            stores.push(StoreEntry {
                name: store_name.clone(),
                step: store.step_count(),
                params: store.params().iter().map(|p| p.name.clone()).collect(),
            });
            for (slot, p) in store.params().iter().enumerate() {
                let (m, v) = store.moments(slot);
                for (suffix, arr) in [("", &p.value), ("#m", m), ("#v", v)] {
                    tensors.push(TensorEntry {
                        name: format!("{store_name}/{}{suffix}", p.name),
                        rows: arr.nrows(),
                        cols: arr.ncols(),
                        offset: payload.len(),
                    });
                    payload.extend(arr.iter());
                }
            }
        }
        let header = Header {
            seed: self.seed,
            metadata: self.metadata.clone(),
            stores,
            tensors,
        };
        let header_json = serde_json::to_vec(&header).expect("header serializes");

        let mut out = Vec::with_capacity(20 + header_json.len() + payload.len() * 8 + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 + 32 {
            return Err(Error::Integrity(format!(
                "checkpoint truncated: {} bytes",
                bytes.len()
            )));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(Error::Integrity("checkpoint digest mismatch".into()));
        }
        if &body[..8] != MAGIC {
            return Err(Error::Integrity("bad checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Integrity(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| Error::Integrity("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&body[20..header_end])?;
        let payload = &body[header_end..];
        if payload.len() % 8 != 0 {
            return Err(Error::Integrity("payload not a whole number of f64".into()));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let lookup: BTreeMap<&str, &TensorEntry> =
            header.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let fetch = |name: &str| -> Result<Array2<f64>> {
            let t = lookup
                .get(name)
                .ok_or_else(|| Error::Integrity(format!("missing tensor {name}")))?;
            let end = t.offset + t.rows * t.cols;
            if end > values.len() {
                return Err(Error::Integrity(format!("tensor {name} overruns payload")));
            }
            Array2::from_shape_vec((t.rows, t.cols), values[t.offset..end].to_vec())
                .map_err(|e| Error::Integrity(e.to_string()))
        };

        let mut stores = Vec::new();
        for entry in &header.stores {
            let mut store = ParamStore::new();
            for pname in &entry.params {
                let base = format!("{}/{pname}", entry.name);
                let slot = store.insert(pname.clone(), fetch(&base)?);
                let m = fetch(&format!("{base}#m"))?;
                let v = fetch(&format!("{base}#v"))?;
                store.restore_moments(slot, m, v, entry.step);
            }
            stores.push((entry.name.clone(), store));
        }
        Ok(Self {
            seed: header.seed,
            metadata: header.metadata,
            stores,
        })
    }

    /// Writes atomically via a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::init_params;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new(42);
        ck.metadata
            .insert("widths".into(), serde_json::json!([4, 3, 2]));
        let mut store = init_params(&[4, 3, 2], 9).unwrap();
        for p in store.params_mut() {
            p.grad = Some(p.value.mapv(|v| v * 0.5 + 0.1));
        }
        store.adam_step(1e-3).unwrap();
        ck.stores.push(("model".into(), store));
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let bytes = sample().to_bytes();
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::Integrity(_))
            ));
        }
    }

    #[test]
    fn flipped_byte_is_rejected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() - 40;
        bytes[mid] ^= 0x01;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Integrity(_))
        ));
    }
}
