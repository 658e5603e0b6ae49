//! NFCK checkpoint format.
//!
//! Layout (all integers little-endian):
//!   magic "NFCK" | version u32 | descriptor_len u32 | descriptor JSON |
//!   payload_count u32 | payload_fnv1a u64 | payload (f32 × count)
//!
//! The descriptor carries the model kind, build config and seed, enough to
//! rebuild the topology without external config; the payload is the flat
//! parameter vector in export order. The FNV-1a digest catches payload
//! corruption that a pure length check would miss.

use crate::classifier::model::{ClassifierConfig, ClassifierModel};
use crate::error::{Error, Result};
use crate::flow::model::{FlowConfig, FlowModel};
use crate::harness::fsutil::atomic_write;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Descriptor {
    Flow {
        config: FlowConfig,
        seed: u64,
        param_count: usize,
    },
    Classifier {
        config: ClassifierConfig,
        param_count: usize,
    },
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn corrupt(offset: usize, message: impl Into<String>) -> Error {
    Error::Checkpoint(format!("offset {offset}: {}", message.into()))
}

pub fn checkpoint_bytes(descriptor: &Descriptor, params: &[f32]) -> Result<Vec<u8>> {
    let desc = serde_json::to_vec(descriptor)
        .map_err(|e| Error::Checkpoint(format!("descriptor encoding failed: {e}")))?;
    let payload: Vec<u8> = params.iter().flat_map(|p| p.to_le_bytes()).collect();
    let mut out = Vec::with_capacity(4 + 4 + 4 + desc.len() + 4 + 8 + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(&desc);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    out.extend_from_slice(&fnv1a(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<(Descriptor, Vec<f32>)> {
    if buf.len() < 4 || &buf[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt(0, "bad magic, expected NFCK"));
    }
    let le_u32 = |off: usize, what: &str| -> Result<u32> {
        buf.get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| corrupt(buf.len(), format!("truncated while reading {what}")))
    };
    let version = le_u32(4, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(4, format!("unsupported version {version}")));
    }
    let desc_len = le_u32(8, "descriptor length")? as usize;
    let desc_end = 12 + desc_len;
    let desc_bytes = buf
        .get(12..desc_end)
        .ok_or_else(|| corrupt(buf.len(), "truncated descriptor"))?;
    let descriptor: Descriptor = serde_json::from_slice(desc_bytes)
        .map_err(|e| corrupt(12, format!("descriptor JSON invalid: {e}")))?;
    let count = le_u32(desc_end, "payload count")? as usize;
    let declared = match &descriptor {
        Descriptor::Flow { param_count, .. } => *param_count,
        Descriptor::Classifier { param_count, .. } => *param_count,
    };
    if count != declared {
        return Err(corrupt(
            desc_end,
            format!("payload count {count} does not match descriptor {declared}"),
        ));
    }
    let sum_off = desc_end + 4;
    let checksum = buf
        .get(sum_off..sum_off + 8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| corrupt(buf.len(), "truncated checksum"))?;
    let pay_off = sum_off + 8;
    let pay_end = pay_off + count * 4;
    let payload = buf
        .get(pay_off..pay_end)
        .ok_or_else(|| corrupt(buf.len(), format!("payload truncated, expected {pay_end} bytes")))?;
    if buf.len() != pay_end {
        return Err(corrupt(pay_end, "trailing bytes after payload"));
    }
    if fnv1a(payload) != checksum {
        return Err(corrupt(pay_off, "payload checksum mismatch"));
    }
    let params = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((descriptor, params))
}

pub fn save_flow(model: &FlowModel, cfg: &FlowConfig, path: &Path) -> Result<()> {
    let desc = Descriptor::Flow {
        config: cfg.clone(),
        seed: model.seed,
        param_count: model.param_count(),
    };
    atomic_write(path, &checkpoint_bytes(&desc, &model.export_params())?)
}

pub fn save_classifier(model: &ClassifierModel, cfg: &ClassifierConfig, path: &Path) -> Result<()> {
    let desc = Descriptor::Classifier {
        config: cfg.clone(),
        param_count: model.param_count(),
    };
    atomic_write(path, &checkpoint_bytes(&desc, &model.export_params())?)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_flow(path: &Path) -> Result<(FlowModel, FlowConfig)> {
    let (desc, params) = checkpoint_from_bytes(&read(path)?)?;
    match desc {
        Descriptor::Flow { config, seed, .. } => {
            let mut model = FlowModel::build(&config, seed)?;
            model.import_params(&params)?;
            Ok((model, config))
        }
        Descriptor::Classifier { .. } => Err(Error::Checkpoint(
            "expected a flow checkpoint, found a classifier".into(),
        )),
    }
}

pub fn load_classifier(path: &Path) -> Result<(ClassifierModel, ClassifierConfig)> {
    let (desc, params) = checkpoint_from_bytes(&read(path)?)?;
    match desc {
        Descriptor::Classifier { config, .. } => {
            let mut model = ClassifierModel::new(&config);
            model.import_params(&params)?;
            Ok((model, config))
        }
        Descriptor::Flow { .. } => Err(Error::Checkpoint(
            "expected a classifier checkpoint, found a flow".into(),
        )),
    }
}
