//! Binary checkpoint: magic, format version, JSON header, then named tensors
//! stored as little-endian `f32`.
//!
//! ```text
//! b"HTDSCKPT" | u32 version | u32 header_len | header JSON
//! u32 n_tensors | { u32 name_len | name | u32 rows | u32 cols | rows*cols f32 }*
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::mat::Mat;
use super::params::ModelParams;
use crate::error::{HtdsError, Result};

const MAGIC: &[u8; 8] = b"HTDSCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    /// Decision threshold chosen on the dev split.
    pub threshold: f64,
    pub labels: Vec<String>,
    pub categories: Vec<String>,
    pub notes_mode: String,
    pub strategy: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(HtdsError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| HtdsError::Checkpoint(e.to_string()))?;
        let mut buf = Vec::with_capacity(header.len() + self.params.num_params() * 4 + 64);
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, FORMAT_VERSION);
        put_u32(&mut buf, header.len() as u32);
        buf.extend_from_slice(&header);
        let tensors = self.params.tensors();
        put_u32(&mut buf, tensors.len() as u32);
        for (name, m) in tensors {
            put_u32(&mut buf, name.len() as u32);
            buf.extend_from_slice(name.as_bytes());
            put_u32(&mut buf, m.rows as u32);
            put_u32(&mut buf, m.cols as u32);
            for &x in &m.data {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(HtdsError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(HtdsError::Checkpoint(format!("unsupported format version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?).map_err(|e| HtdsError::Checkpoint(e.to_string()))?;
        header.config.validate()?;
        let mut params = ModelParams::zeros(&header.config);
        let n_tensors = r.u32()? as usize;
        let mut slots = params.tensors_mut();
        if n_tensors != slots.len() {
            return Err(HtdsError::Checkpoint(format!("expected {} tensors, found {n_tensors}", slots.len())));
        }
        for (expected_name, slot) in slots.iter_mut() {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|e| HtdsError::Checkpoint(e.to_string()))?;
            if name != expected_name {
                return Err(HtdsError::Checkpoint(format!("expected tensor {expected_name}, found {name}")));
            }
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            if (rows, cols) != slot.shape() {
                return Err(HtdsError::Checkpoint(format!("{name}: shape {rows}x{cols} does not match config {:?}", slot.shape())));
            }
            let raw = r.take(rows * cols * 4)?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64).collect();
            **slot = Mat::from_vec(rows, cols, data);
        }
        drop(slots);
        if r.pos != bytes.len() {
            return Err(HtdsError::Checkpoint("trailing bytes after tensors".into()));
        }
        Ok(Checkpoint { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| HtdsError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| HtdsError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Loads and rejects a checkpoint whose config differs from `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if &ck.header.config != expected {
            return Err(HtdsError::Checkpoint(format!(
                "config mismatch: checkpoint has {:?}, expected {:?}",
                ck.header.config, expected
            )));
        }
        Ok(ck)
    }
}

/// Rounds every parameter to the nearest `f32`, the precision checkpoints keep.
pub fn round_to_f32(params: &mut ModelParams) {
    params.visit_mut(|_, m| m.data.iter_mut().for_each(|x| *x = *x as f32 as f64));
}
