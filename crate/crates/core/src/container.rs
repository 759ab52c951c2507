//! Versioned binary container shared by data, ground-truth and checkpoint
//! files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic: "CTAE" followed by a 4-byte kind tag ("DATA", "TRUE", "CKPT")
//! 8       2     major version
//! 10      2     minor version
//! 12      8     header length H in bytes
//! 20      H     UTF-8 JSON header: {"meta": {...}, "arrays": [{"name", "shape"}, ...]}
//! 20+H    8·N   f64 payload, arrays concatenated in header order, row-major
//! end-32  32    SHA-256 of every preceding byte
//! ```
//!
//! Readers reject a different kind tag, an unknown major version, a length
//! that disagrees with the header, and a digest mismatch.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CtaeError, Result};

pub const MAJOR_VERSION: u16 = 1;
pub const MINOR_VERSION: u16 = 0;
const PREFIX: usize = 20;
const DIGEST: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

/// Named f64 arrays plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub meta: serde_json::Value,
    arrays: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Container {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(CtaeError::Format(format!(
                "array {name}: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        if self.arrays.iter().any(|(n, _, _)| *n == name) {
            return Err(CtaeError::Format(format!("array {name} stored twice")));
        }
        self.arrays.push((name, shape, data));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.arrays
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
            .ok_or_else(|| CtaeError::Format(format!("missing array {name}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.arrays.iter().any(|(n, _, _)| n == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn to_bytes(&self, kind: &[u8; 4]) -> Result<Vec<u8>> {
        let header = Header {
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(n, s, _)| ArrayEntry {
                    name: n.clone(),
                    shape: s.clone(),
                })
                .collect(),
        };
        let hjson = serde_json::to_vec(&header).map_err(|e| CtaeError::Format(e.to_string()))?;
        let n: usize = self.arrays.iter().map(|(_, _, d)| d.len()).sum();
        let mut out = Vec::with_capacity(PREFIX + hjson.len() + 8 * n + DIGEST);
        out.extend_from_slice(b"CTAE");
        out.extend_from_slice(kind);
        out.extend_from_slice(&MAJOR_VERSION.to_le_bytes());
        out.extend_from_slice(&MINOR_VERSION.to_le_bytes());
        out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&hjson);
        for (_, _, d) in &self.arrays {
            for v in d {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], kind: &[u8; 4]) -> Result<Self> {
        let fmt = |m: String| CtaeError::Format(m);
        if bytes.len() < PREFIX + DIGEST {
            return Err(fmt(format!("truncated file: {} bytes", bytes.len())));
        }
        if &bytes[..4] != b"CTAE" {
            return Err(fmt("not a CTAE container (bad magic)".into()));
        }
        if &bytes[4..8] != kind {
            return Err(fmt(format!(
                "expected a {} container, found {}",
                String::from_utf8_lossy(kind),
                String::from_utf8_lossy(&bytes[4..8])
            )));
        }
        let major = u16::from_le_bytes([bytes[8], bytes[9]]);
        if major != MAJOR_VERSION {
            return Err(fmt(format!(
                "unsupported major version {major} (this build reads {MAJOR_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if bytes.len() < PREFIX + hlen + DIGEST {
            return Err(fmt("truncated file: header runs past end".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[PREFIX..PREFIX + hlen])
            .map_err(|e| fmt(format!("corrupt header: {e}")))?;
        let n: usize = header.arrays.iter().map(|a| a.shape.iter().product::<usize>()).sum();
        let expected = PREFIX + hlen + 8 * n + DIGEST;
        if bytes.len() != expected {
            return Err(fmt(format!(
                "length {} does not match header ({expected} bytes expected); file truncated or padded",
                bytes.len()
            )));
        }
        let body = &bytes[..expected - DIGEST];
        if Sha256::digest(body).as_slice() != &bytes[expected - DIGEST..] {
            return Err(fmt("checksum mismatch: file is corrupted".into()));
        }
        let mut pos = PREFIX + hlen;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for a in header.arrays {
            let len: usize = a.shape.iter().product();
            let data = bytes[pos..pos + 8 * len]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            pos += 8 * len;
            arrays.push((a.name, a.shape, data));
        }
        Ok(Self {
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path, kind: &[u8; 4]) -> Result<()> {
        let bytes = self.to_bytes(kind)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CtaeError::io(dir, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| CtaeError::io(path, e))
    }

    pub fn load(path: &Path, kind: &[u8; 4]) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CtaeError::io(path, e))?;
        Self::from_bytes(&bytes, kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new(serde_json::json!({"k": 3}));
        c.push("a", vec![2, 2], vec![1.0, -2.5, f64::MIN_POSITIVE, 1e300]).unwrap();
        c.push("b", vec![1], vec![0.1]).unwrap();
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes(b"TEST").unwrap();
        assert_eq!(Container::from_bytes(&bytes, b"TEST").unwrap(), c);
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample().to_bytes(b"TEST").unwrap();
        assert!(Container::from_bytes(&bytes, b"DATA").is_err());
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1], b"TEST").is_err());
        let mut flipped = bytes.clone();
        let at = flipped.len() - 40;
        flipped[at] ^= 1;
        let err = Container::from_bytes(&flipped, b"TEST").unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
        let mut future = bytes;
        future[8] = 2;
        assert!(Container::from_bytes(&future, b"TEST").unwrap_err().to_string().contains("major"));
    }
}
