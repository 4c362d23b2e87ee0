//! Versioned parameter container shared by every trained model.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "GSCCKPT\0"
//! version u32
//! hlen    u32      length of the JSON header
//! header  hlen     {"kind", "config", "config_hash", "tensors": [{name, shape, offset, len}]}
//! payload          f32 values, tensors back to back
//! crc     u32      CRC-32 of everything before it
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 8] = b"GSCCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    config_hash: String,
    tensors: Vec<TensorEntry>,
}

/// Hash of a configuration's canonical JSON form.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let value = serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?;
    // serde_json::Value keeps object keys sorted, so this is canonical.
    let text = serde_json::to_string(&value).map_err(|e| Error::Config(e.to_string()))?;
    Ok(format!("{:x}", Sha256::digest(text.as_bytes())))
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub arrays: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn from_params<C: Serialize>(kind: &str, config: &C, params: &[&ParamStore]) -> Result<Self> {
        let mut arrays = BTreeMap::new();
        for store in params {
            for (name, shape, data) in store.export()? {
                arrays.insert(name, (shape, data));
            }
        }
        Ok(Self {
            kind: kind.to_string(),
            config: serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?,
            config_hash: config_hash(config)?,
            arrays,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.arrays.len());
        let mut offset = 0;
        for (name, (shape, data)) in &self.arrays {
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
                len: data.len(),
            });
            offset += data.len();
        }
        let header = Header {
            kind: self.kind.clone(),
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len() + offset * 4 + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, data) in self.arrays.values() {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptCheckpoint {
            path: origin.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing magic header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(corrupt("checksum mismatch (truncated or damaged file)"));
        }
        let hlen = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt("header length out of range"))?;
        let header: Header = serde_json::from_slice(&body[16..header_end])
            .map_err(|e| corrupt(&format!("header: {e}")))?;
        let payload = &body[header_end..];
        let mut arrays = BTreeMap::new();
        for t in header.tensors {
            let start = t.offset * 4;
            let end = start + t.len * 4;
            if end > payload.len() || t.shape.iter().product::<usize>() != t.len {
                return Err(corrupt(&format!("tensor {} out of bounds", t.name)));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.insert(t.name, (t.shape, data));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            config_hash: header.config_hash,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, path)
    }

    /// Rejects the checkpoint unless it was written for `kind` with a
    /// configuration hashing to the same value as `config`.
    pub fn expect<C: Serialize>(&self, kind: &str, config: &C) -> Result<()> {
        if self.kind != kind {
            return Err(Error::ConfigHashMismatch {
                kind: kind.to_string(),
                found: format!("kind {}", self.kind),
                expected: format!("kind {kind}"),
            });
        }
        let expected = config_hash(config)?;
        if self.config_hash != expected {
            return Err(Error::ConfigHashMismatch {
                kind: kind.to_string(),
                found: self.config_hash.clone(),
                expected,
            });
        }
        Ok(())
    }

    pub fn config_as<C: for<'de> Deserialize<'de>>(&self) -> Result<C> {
        serde_json::from_value(self.config.clone()).map_err(|e| Error::Config(e.to_string()))
    }

    /// Copies the arrays whose names start with `prefix` into `store`.
    pub fn restore(&self, store: &ParamStore, prefix: &str) -> Result<()> {
        let subset: BTreeMap<_, _> = self
            .arrays
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        store.import(&subset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    #[derive(Serialize)]
    struct Cfg {
        width: usize,
    }

    fn store() -> ParamStore {
        let mut s = ParamStore::new(4);
        Linear::new(&mut s.root().pp("net"), 3, 5, true).unwrap();
        s
    }

    #[test]
    fn roundtrip_and_integrity() {
        let s = store();
        let ck = Checkpoint::from_params("toy", &Cfg { width: 3 }, &[&s]).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.arrays, ck.arrays);
        back.expect("toy", &Cfg { width: 3 }).unwrap();
        assert!(matches!(
            back.expect("toy", &Cfg { width: 4 }),
            Err(Error::ConfigHashMismatch { .. })
        ));

        let truncated = &bytes[..bytes.len() - 9];
        assert!(matches!(
            Checkpoint::from_bytes(truncated, Path::new("mem")),
            Err(Error::CorruptCheckpoint { .. })
        ));

        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&wrong_version, Path::new("mem")),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }
}
