//! Binary checkpoint: magic, header length, JSON header, raw tensor payloads.
//!
//! ```text
//! b"OCKPT\0\0\0" | u64 LE header length | header JSON | f64 LE payloads
//! ```
//!
//! The header holds the format version, model config, epoch, generator
//! state and a manifest of `(name, shape, offset, dtype)` entries. Offsets are
//! relative to the start of the payload section and follow manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::{RngState, Tensor};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"OCKPT\0\0\0";
const MOMENT_M: &str = "adam.m.";
const MOMENT_V: &str = "adam.v.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub epoch: usize,
    pub rng: RngState,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    epoch: usize,
    optimizer_step: u64,
    rng: RngState,
    tensors: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    dtype: String,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |name: String, shape: &[usize], data: &[f64]| {
        entries.push(ManifestEntry {
            name,
            shape: shape.to_vec(),
            offset: payload.len() as u64,
            dtype: "f64".into(),
        });
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, t) in ckpt.params.iter() {
        push(name.clone(), t.shape(), t.data());
    }
    for (prefix, moments) in [(MOMENT_M, &ckpt.optimizer.m), (MOMENT_V, &ckpt.optimizer.v)] {
        for (name, data) in moments {
            push(format!("{prefix}{name}"), &[data.len()], data);
        }
    }
    let header = serde_json::to_vec(&Header {
        format_version: FORMAT_VERSION,
        config: ckpt.config.clone(),
        epoch: ckpt.epoch,
        optimizer_step: ckpt.optimizer.step,
        rng: ckpt.rng,
        tensors: entries,
    })?;
    let mut bytes = Vec::with_capacity(16 + header.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&payload);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Truncated(format!("{} is not a checkpoint or lacks a header", path.display())));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Truncated(format!("{}: header runs past end of file", path.display())))?;
    let header: Header = serde_json::from_slice(&bytes[16..body])?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let payload = &bytes[body..];
    let mut expected_offset = 0u64;
    let mut params = BTreeMap::new();
    let mut optimizer = AdamState {
        step: header.optimizer_step,
        ..Default::default()
    };
    for e in header.tensors {
        if e.dtype != "f64" {
            return Err(Error::Manifest(format!("tensor '{}' has unsupported dtype {}", e.name, e.dtype)));
        }
        if e.offset != expected_offset {
            return Err(Error::Manifest(format!(
                "tensor '{}' at offset {} but the previous tensor ends at {expected_offset}",
                e.name, e.offset
            )));
        }
        let len: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 8 * len;
        if end > payload.len() {
            return Err(Error::Truncated(format!(
                "tensor '{}' needs bytes {start}..{end} of a {}-byte payload",
                e.name,
                payload.len()
            )));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        expected_offset = end as u64;
        if let Some(name) = e.name.strip_prefix(MOMENT_M) {
            optimizer.m.insert(name.to_string(), data);
        } else if let Some(name) = e.name.strip_prefix(MOMENT_V) {
            optimizer.v.insert(name.to_string(), data);
        } else {
            params.insert(e.name, Tensor::new(&e.shape, data)?);
        }
    }
    if expected_offset as usize != payload.len() {
        return Err(Error::Manifest(format!(
            "manifest covers {expected_offset} bytes but the payload holds {}",
            payload.len()
        )));
    }
    Ok(Checkpoint {
        config: header.config,
        params: ModelParams::from_map(params),
        optimizer,
        epoch: header.epoch,
        rng: header.rng,
    })
}
