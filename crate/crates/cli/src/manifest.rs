//! Content hashing and run manifests. Manifests carry the fully
//! resolved configuration plus content hashes of every input, and never
//! any wall-clock data, so identical runs write identical bytes.

use std::fs;
use std::path::Path;

use avcanvas_core::model::Backbone;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{AppError, Result};

pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    Ok(hash_bytes(&bytes))
}

/// Hash of a directory tree: sorted relative paths and their contents.
pub fn hash_dir(dir: &Path) -> Result<String> {
    let mut paths = Vec::new();
    collect_files(dir, dir, &mut paths)?;
    paths.sort();
    let mut hasher = Sha256::new();
    for rel in &paths {
        hasher.update(rel.as_bytes());
        hasher.update([0]);
        let bytes = fs::read(dir.join(rel)).map_err(|e| AppError::io(dir.join(rel), e))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| AppError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| AppError::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("entry under root")
                .to_string_lossy()
                .replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

/// Deterministic hash over every backbone parameter (name, shape,
/// little-endian data), used for the frozen-backbone guarantee.
pub fn backbone_hash(model: &Backbone) -> String {
    let mut hasher = Sha256::new();
    for (name, t) in &model.params {
        hasher.update(name.as_bytes());
        hasher.update([0]);
        for &d in t.shape() {
            hasher.update((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

/// Serialize a manifest as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| AppError::Config(format!("manifest serialization: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// Hash of a serializable config (canonical JSON bytes).
pub fn hash_config<T: Serialize>(value: &T) -> Result<String> {
    let text = serde_json::to_string(value)
        .map_err(|e| AppError::Config(format!("config serialization: {e}")))?;
    Ok(hash_bytes(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_stable_and_content_sensitive() {
        assert_eq!(hash_bytes(b"abc"), hash_bytes(b"abc"));
        assert_ne!(hash_bytes(b"abc"), hash_bytes(b"abd"));
    }

    #[test]
    fn backbone_hash_detects_single_element_change() {
        use avcanvas_core::codec::PatchSize;
        use avcanvas_core::model::ModelConfig;
        let cfg = ModelConfig {
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
        };
        let mut model = Backbone::init(cfg, 3).unwrap();
        let h1 = backbone_hash(&model);
        assert_eq!(h1, backbone_hash(&model));
        model
            .params
            .get_mut("video_in.w")
            .unwrap()
            .data_mut()[0] += 1e-6;
        assert_ne!(h1, backbone_hash(&model));
    }
}
