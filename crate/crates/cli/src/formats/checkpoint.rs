//! AVCT checkpoint container, shared by backbone and adapter weights.
//!
//! Layout: magic `AVCT`, little-endian u32 version (1), little-endian
//! u64 header length, a UTF-8 JSON header
//! `{tensors: [{name, shape, offset}], metadata: {...}}`, then raw
//! little-endian f32 tensor data. Offsets are relative to the start of
//! the data section (the first 64-byte boundary after the header) and
//! every tensor starts 64-byte aligned, in header order. Padding is
//! zeroed, so identical contents serialize to identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use avcanvas_core::lora::{LoraLayer, LoraSpec, LoraWeights};
use avcanvas_core::model::{Backbone, ModelConfig};
use avcanvas_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::{AppError, Result};

const MAGIC: &[u8; 4] = b"AVCT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

/// Checkpoint-kind specific metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckpointMeta {
    Backbone {
        config: ModelConfig,
        step: u64,
        seed: u64,
    },
    Lora {
        rank: usize,
        alpha: f32,
        patterns: Vec<String>,
        step: u64,
        seed: u64,
        lora_strength: f32,
        modality: String,
        layout_mode: String,
        /// Content hash of the backbone this adapter was trained on.
        backbone_hash: String,
        config: ModelConfig,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    metadata: CheckpointMeta,
}

fn align64(n: u64) -> u64 {
    n.div_ceil(64) * 64
}

fn encode(tensors: &[(String, &Tensor)], metadata: CheckpointMeta) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset = align64(offset + (t.numel() * 4) as u64);
    }
    let header = Header {
        tensors: entries,
        metadata,
    };
    let json = serde_json::to_string(&header)
        .map_err(|e| AppError::Config(format!("header serialization: {e}")))?;
    let header_bytes = json.as_bytes();
    let data_start = align64(16 + header_bytes.len() as u64);

    let total = data_start
        + header
            .tensors
            .last()
            .map(|e| align64(e.offset + (shape_numel(&e.shape) * 4) as u64))
            .unwrap_or(0);
    let mut out = vec![0u8; total as usize];
    out[0..4].copy_from_slice(MAGIC);
    out[4..8].copy_from_slice(&VERSION.to_le_bytes());
    out[8..16].copy_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out[16..16 + header_bytes.len()].copy_from_slice(header_bytes);
    for (entry, (_, t)) in header.tensors.iter().zip(tensors) {
        let start = (data_start + entry.offset) as usize;
        for (i, &v) in t.data().iter().enumerate() {
            out[start + 4 * i..start + 4 * i + 4].copy_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn shape_numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn decode(bytes: &[u8], path: &Path) -> Result<(Vec<(String, Tensor)>, CheckpointMeta)> {
    let bad = |msg: String| AppError::io(path, msg);
    if bytes.len() < 16 {
        return Err(bad("truncated file (no header)".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad(format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(bad("truncated file (header)".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| bad(format!("bad header json: {e}")))?;
    let data_start = align64(16 + header_len as u64) as usize;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let numel = shape_numel(&entry.shape);
        let start = data_start + entry.offset as usize;
        let end = start + numel * 4;
        if bytes.len() < end {
            return Err(bad(format!("truncated file (tensor {})", entry.name)));
        }
        let data: Vec<f32> = bytes[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| bad(format!("tensor {}: {e}", entry.name)))?;
        tensors.push((entry.name.clone(), t));
    }
    Ok((tensors, header.metadata))
}

pub fn save_backbone(path: &Path, model: &Backbone, step: u64, seed: u64) -> Result<()> {
    let tensors: Vec<(String, &Tensor)> = model
        .params
        .iter()
        .map(|(n, t)| (n.clone(), t))
        .collect();
    let bytes = encode(
        &tensors,
        CheckpointMeta::Backbone {
            config: model.cfg.clone(),
            step,
            seed,
        },
    )?;
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn load_backbone(path: &Path) -> Result<(Backbone, u64, u64)> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    let (tensors, meta) = decode(&bytes, path)?;
    match meta {
        CheckpointMeta::Backbone { config, step, seed } => {
            let params: BTreeMap<String, Tensor> = tensors.into_iter().collect();
            let model = Backbone::from_params(config, params)
                .map_err(|e| AppError::io(path, format!("tensor set mismatch: {e}")))?;
            Ok((model, step, seed))
        }
        CheckpointMeta::Lora { .. } => Err(AppError::config(format!(
            "{} is an adapter checkpoint, expected a backbone",
            path.display()
        ))),
    }
}

/// Adapter metadata needed to reproduce and validate a training run.
#[derive(Debug, Clone)]
pub struct LoraCkptInfo {
    pub step: u64,
    pub seed: u64,
    pub modality: String,
    pub layout_mode: String,
    pub backbone_hash: String,
    pub config: ModelConfig,
}

pub fn save_lora(path: &Path, lora: &LoraWeights, info: &LoraCkptInfo) -> Result<()> {
    let mut tensors: Vec<(String, &Tensor)> = Vec::with_capacity(lora.layers.len() * 2);
    for (name, layer) in &lora.layers {
        tensors.push((format!("{name}.lora_a"), &layer.down));
        tensors.push((format!("{name}.lora_b"), &layer.up));
    }
    let bytes = encode(
        &tensors,
        CheckpointMeta::Lora {
            rank: lora.spec.rank,
            alpha: lora.spec.alpha,
            patterns: lora.spec.targets.clone(),
            step: info.step,
            seed: info.seed,
            lora_strength: lora.spec.lora_strength,
            modality: info.modality.clone(),
            layout_mode: info.layout_mode.clone(),
            backbone_hash: info.backbone_hash.clone(),
            config: info.config.clone(),
        },
    )?;
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn load_lora(path: &Path) -> Result<(LoraWeights, LoraCkptInfo)> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    let (tensors, meta) = decode(&bytes, path)?;
    match meta {
        CheckpointMeta::Lora {
            rank,
            alpha,
            patterns,
            step,
            seed,
            lora_strength,
            modality,
            layout_mode,
            backbone_hash,
            config,
        } => {
            let mut downs: BTreeMap<String, Tensor> = BTreeMap::new();
            let mut ups: BTreeMap<String, Tensor> = BTreeMap::new();
            for (name, t) in tensors {
                if let Some(module) = name.strip_suffix(".lora_a") {
                    downs.insert(module.to_string(), t);
                } else if let Some(module) = name.strip_suffix(".lora_b") {
                    ups.insert(module.to_string(), t);
                } else {
                    return Err(AppError::io(path, format!("unexpected tensor {name}")));
                }
            }
            if downs.len() != ups.len() {
                return Err(AppError::io(path, "tensor count mismatch (unpaired factors)"));
            }
            let mut layers = BTreeMap::new();
            for (module, down) in downs {
                let up = ups.remove(&module).ok_or_else(|| {
                    AppError::io(path, format!("tensor count mismatch: {module} has no up factor"))
                })?;
                layers.insert(module, LoraLayer { down, up });
            }
            let spec = LoraSpec {
                rank,
                alpha,
                targets: patterns,
                lora_strength,
            };
            Ok((
                LoraWeights { spec, layers },
                LoraCkptInfo {
                    step,
                    seed,
                    modality,
                    layout_mode,
                    backbone_hash,
                    config,
                },
            ))
        }
        CheckpointMeta::Backbone { .. } => Err(AppError::config(format!(
            "{} is a backbone checkpoint, expected an adapter",
            path.display()
        ))),
    }
}

/// Peek at the metadata without materializing tensors.
pub fn peek_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    let (_, meta) = decode(&bytes, path)?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use avcanvas_core::codec::PatchSize;
    use avcanvas_core::lora::attach;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            depth: 1,
            width: 12,
            heads: 2,
            patch: PatchSize::new(1, 2, 2),
            audio_feat_dim: 2,
            audio_group: 2,
            audio_frames_per_video_frame: 2,
            cond_vocab: 4,
            ff_mult: 2,
            rope_base: 100.0,
        }
    }

    #[test]
    fn backbone_roundtrip_is_byte_identical() {
        let model = Backbone::init(tiny_cfg(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.avct");
        let p2 = dir.path().join("b.avct");
        save_backbone(&p1, &model, 7, 5).unwrap();
        let (loaded, step, seed) = load_backbone(&p1).unwrap();
        assert_eq!(step, 7);
        assert_eq!(seed, 5);
        for (name, t) in &model.params {
            assert_eq!(t.data(), loaded.params[name].data(), "{name}");
        }
        save_backbone(&p2, &loaded, 7, 5).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn lora_roundtrip_preserves_spec_and_weights() {
        let model = Backbone::init(tiny_cfg(), 5).unwrap();
        let lora = attach(&model, &LoraSpec::new(4, &["V.SA"]), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lora.avct");
        let info = LoraCkptInfo {
            step: 100,
            seed: 9,
            modality: "edges".into(),
            layout_mode: "parallel_canvas".into(),
            backbone_hash: "abc".into(),
            config: tiny_cfg(),
        };
        save_lora(&p, &lora, &info).unwrap();
        let (loaded, linfo) = load_lora(&p).unwrap();
        assert_eq!(loaded.spec, lora.spec);
        assert_eq!(linfo.backbone_hash, "abc");
        assert_eq!(loaded.layers.len(), lora.layers.len());
        for (name, layer) in &lora.layers {
            assert_eq!(layer.down.data(), loaded.layers[name].down.data());
        }
        // Rank gate: requesting a different rank must fail loudly.
        assert!(loaded.expect_rank(8).is_err());
        assert!(loaded.expect_rank(4).is_ok());
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let model = Backbone::init(tiny_cfg(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.avct");
        save_backbone(&p, &model, 0, 5).unwrap();
        let bytes = fs::read(&p).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        fs::write(&p, &bad_magic).unwrap();
        assert!(load_backbone(&p).is_err());

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        fs::write(&p, &bad_version).unwrap();
        assert!(load_backbone(&p).is_err());

        let truncated = &bytes[..bytes.len() - 32];
        fs::write(&p, truncated).unwrap();
        assert!(load_backbone(&p).is_err());
    }

    #[test]
    fn tensor_offsets_are_64_byte_aligned() {
        let model = Backbone::init(tiny_cfg(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.avct");
        save_backbone(&p, &model, 0, 5).unwrap();
        let bytes = fs::read(&p).unwrap();
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(&bytes[16..16 + header_len]).unwrap();
        let data_start = align64(16 + header_len as u64);
        assert_eq!(data_start % 64, 0);
        for e in &header.tensors {
            assert_eq!(e.offset % 64, 0, "{}", e.name);
        }
    }
}
