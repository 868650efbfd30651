//! Checkpoint directories: `manifest.json` plus `tensors.bin`, a flat blob of
//! little-endian f64 values addressed by the manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sta_core::model::{ModelShape, StaModel};
use sta_core::optim::{AdamConfig, AdamState};
use sta_core::Tensor;

use crate::error::{io, Error, Result};
use crate::fsutil::{read_to_string, write_atomic};

pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const BLOB: &str = "tensors.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeRecord {
    pub joints: usize,
    pub persons: usize,
    pub classes: usize,
    pub hidden: usize,
    pub main_layers: usize,
    pub spatial_hidden: usize,
    pub temporal_hidden: usize,
    pub attn_width: usize,
}

impl From<ModelShape> for ShapeRecord {
    fn from(s: ModelShape) -> Self {
        Self {
            joints: s.joints,
            persons: s.persons,
            classes: s.classes,
            hidden: s.hidden,
            main_layers: s.main_layers,
            spatial_hidden: s.spatial_hidden,
            temporal_hidden: s.temporal_hidden,
            attn_width: s.attn_width,
        }
    }
}

impl From<ShapeRecord> for ModelShape {
    fn from(s: ShapeRecord) -> Self {
        Self {
            joints: s.joints,
            persons: s.persons,
            classes: s.classes,
            hidden: s.hidden,
            main_layers: s.main_layers,
            spatial_hidden: s.spatial_hidden,
            temporal_hidden: s.temporal_hidden,
            attn_width: s.attn_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Number of f64 values.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamRecord {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    /// First and second moments, in parameter order.
    pub moments: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub shape: ShapeRecord,
    pub spatial_bypass: bool,
    pub temporal_bypass: bool,
    pub tensors: Vec<TensorEntry>,
    pub adam: Option<AdamRecord>,
    pub blob_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: StaModel,
    pub adam: Option<AdamState>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct BlobWriter(Vec<u8>);

impl BlobWriter {
    fn push(&mut self, name: String, t: &Tensor) -> TensorEntry {
        let offset = self.0.len();
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
            len: t.numel(),
        }
    }
}

pub fn save(dir: &Path, model: &StaModel, adam: Option<&AdamState>) -> Result<Manifest> {
    let mut blob = BlobWriter(Vec::new());
    let tensors = model
        .params()
        .into_iter()
        .map(|p| blob.push(p.name, p.tensor))
        .collect();
    let adam = adam.map(|a| {
        let names = model.params().into_iter().map(|p| p.name);
        let mut moments = Vec::with_capacity(2 * a.m.len());
        for (name, (m, v)) in names.zip(a.m.iter().zip(&a.v)) {
            moments.push(blob.push(format!("adam.m.{name}"), m));
            moments.push(blob.push(format!("adam.v.{name}"), v));
        }
        AdamRecord {
            lr: a.cfg.lr,
            beta1: a.cfg.beta1,
            beta2: a.cfg.beta2,
            eps: a.cfg.eps,
            step_count: a.step_count,
            moments,
        }
    });
    let manifest = Manifest {
        version: VERSION,
        shape: model.shape.into(),
        spatial_bypass: model.spatial_bypass,
        temporal_bypass: model.temporal_bypass,
        tensors,
        adam,
        blob_sha256: hex(&Sha256::digest(&blob.0)),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(BLOB), &blob.0)?;
    write_atomic(&dir.join(MANIFEST), json.as_bytes())?;
    Ok(manifest)
}

fn read_tensor(blob: &[u8], e: &TensorEntry) -> Result<Tensor> {
    let end = e.len.checked_mul(8).and_then(|n| n.checked_add(e.offset));
    let bytes = end
        .and_then(|end| blob.get(e.offset..end))
        .ok_or_else(|| Error::Corrupt(format!("{} lies outside the blob", e.name)))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(&e.shape, data).map_err(|err| Error::Corrupt(format!("{}: {err}", e.name)))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = read_to_string(&path)?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
    let version = raw.get("version").and_then(serde_json::Value::as_u64);
    if version != Some(u64::from(VERSION)) {
        return Err(Error::Version(version.map_or(0, |v| v as u32)));
    }
    serde_json::from_value(raw).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let blob_path = dir.join(BLOB);
    let blob = std::fs::read(&blob_path).map_err(io(&blob_path))?;
    if hex(&Sha256::digest(&blob)) != manifest.blob_sha256 {
        return Err(Error::Corrupt("blob digest mismatch".into()));
    }
    let mut model = StaModel::zeros(manifest.shape.into())?;
    model.spatial_bypass = manifest.spatial_bypass;
    model.temporal_bypass = manifest.temporal_bypass;
    let names: Vec<String> = model.params().into_iter().map(|p| p.name).collect();
    if names.len() != manifest.tensors.len() {
        return Err(Error::Corrupt(format!(
            "model has {} tensors, manifest lists {}",
            names.len(),
            manifest.tensors.len()
        )));
    }
    for ((slot, name), entry) in model.params_mut().into_iter().zip(&names).zip(&manifest.tensors) {
        if &entry.name != name || entry.shape != slot.shape() {
            return Err(Error::Corrupt(format!(
                "expected {name} {:?}, found {} {:?}",
                slot.shape(),
                entry.name,
                entry.shape
            )));
        }
        *slot = read_tensor(&blob, entry)?;
    }
    let adam = match &manifest.adam {
        None => None,
        Some(rec) => {
            if rec.moments.len() != 2 * names.len() {
                return Err(Error::Corrupt("optimizer moment count".into()));
            }
            let cfg = AdamConfig {
                lr: rec.lr,
                beta1: rec.beta1,
                beta2: rec.beta2,
                eps: rec.eps,
            };
            let mut state = AdamState::new(cfg, model.params().iter().map(|p| p.tensor));
            for (i, pair) in rec.moments.chunks(2).enumerate() {
                state.m[i] = read_tensor(&blob, &pair[0])?;
                state.v[i] = read_tensor(&blob, &pair[1])?;
            }
            state.step_count = rec.step_count;
            Some(state)
        }
    };
    Ok(Checkpoint { model, adam })
}
