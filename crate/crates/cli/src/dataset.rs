//! Dataset directory layout: a JSON manifest listing samples, with
//! per-sample PPM frames and CSV audio under `target/` and `canvas/`.

use std::fs;
use std::path::{Path, PathBuf};

use avcanvas_core::canvas::{Canvas, ControlKind};
use avcanvas_core::synth::{make_sample_at, Sample, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::formats::{audio_csv, ppm};
use crate::manifest::write_json;
use crate::{AppError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplePaths {
    pub target_video: String,
    pub target_audio: String,
    #[serde(default)]
    pub canvas_video: Option<String>,
    #[serde(default)]
    pub canvas_audio: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: usize,
    pub seed: u64,
    pub modality: String,
    /// Video-canvas downscale factor.
    pub d: usize,
    pub cond_id: usize,
    pub paths: SamplePaths,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub modality: String,
    pub seed: u64,
    pub count: usize,
    pub dims: [usize; 3],
    pub audio_ratio: usize,
    pub audio_feat_dim: usize,
    /// Downscale override applied at generation time, if any.
    #[serde(default)]
    pub downscale: Option<usize>,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            dims: (self.dims[0], self.dims[1], self.dims[2]),
            audio_ratio: self.audio_ratio,
            audio_feat_dim: self.audio_feat_dim,
        }
    }
}

fn sample_dir(root: &Path, id: usize) -> PathBuf {
    root.join("samples").join(format!("{id:05}"))
}

/// Generate `count` paired samples deterministically from `seed`.
pub fn generate(
    root: &Path,
    kind: ControlKind,
    count: usize,
    seed: u64,
    synth: &SynthConfig,
    downscale: Option<usize>,
) -> Result<DatasetManifest> {
    fs::create_dir_all(root).map_err(|e| AppError::io(root, e))?;
    let mut entries = Vec::with_capacity(count);
    for id in 0..count {
        let sample_seed = seed + id as u64;
        let sample = make_sample_at(kind, sample_seed, synth, downscale)?;
        let dir = sample_dir(root, id);
        let entry = write_sample(&dir, id, &sample)?;
        entries.push(entry);
    }
    let manifest = DatasetManifest {
        modality: kind.name().to_string(),
        seed,
        count,
        dims: [synth.dims.0, synth.dims.1, synth.dims.2],
        audio_ratio: synth.audio_ratio,
        audio_feat_dim: synth.audio_feat_dim,
        downscale,
        samples: entries,
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn write_sample(dir: &Path, id: usize, sample: &Sample) -> Result<SampleEntry> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    ppm::write_clip(&dir.join("target"), &sample.target_video)?;
    audio_csv::write(&dir.join("target").join("audio.csv"), &sample.target_audio)?;
    let mut paths = SamplePaths {
        target_video: "target".into(),
        target_audio: "target/audio.csv".into(),
        canvas_video: None,
        canvas_audio: None,
    };
    let mut d = 1;
    if let Some(canvas) = &sample.video_canvas {
        let clip = canvas.as_video().expect("video canvas holds video");
        ppm::write_clip(&dir.join("canvas"), clip)?;
        paths.canvas_video = Some("canvas".into());
        d = canvas.downscale;
    }
    if let Some(canvas) = &sample.audio_canvas {
        let frames = canvas.as_audio().expect("audio canvas holds audio");
        fs::create_dir_all(dir.join("canvas")).map_err(|e| AppError::io(dir, e))?;
        audio_csv::write(&dir.join("canvas").join("audio.csv"), frames)?;
        paths.canvas_audio = Some("canvas/audio.csv".into());
    }
    let entry = SampleEntry {
        id,
        seed: sample.seed,
        modality: sample.kind.name().to_string(),
        d,
        cond_id: sample.cond_id,
        paths,
    };
    // Per-sample metadata so a sample directory is self-contained
    // (consumed by `sample --canvas`).
    let meta = SampleMeta {
        entry: entry.clone(),
        dims: [sample.dims.0, sample.dims.1, sample.dims.2],
        audio_frames: sample.target_audio.frames,
        audio_feat_dim: sample.target_audio.feat_dim,
    };
    write_json(&dir.join("sample.json"), &meta)?;
    Ok(entry)
}

/// Self-contained per-sample metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMeta {
    #[serde(flatten)]
    pub entry: SampleEntry,
    pub dims: [usize; 3],
    pub audio_frames: usize,
    pub audio_feat_dim: usize,
}

pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| AppError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::io(&path, e))
}

/// Load one sample's media back from disk.
pub fn load_sample(root: &Path, entry: &SampleEntry) -> Result<Sample> {
    let dir = sample_dir(root, entry.id);
    let kind = ControlKind::parse(&entry.modality).map_err(AppError::from)?;
    let target_video = ppm::read_clip(&dir.join(&entry.paths.target_video))?;
    let target_audio = audio_csv::read(&dir.join(&entry.paths.target_audio))?;
    let video_canvas = match &entry.paths.canvas_video {
        Some(rel) => Some(Canvas::video(ppm::read_clip(&dir.join(rel))?, kind, entry.d)),
        None => None,
    };
    let audio_canvas = match &entry.paths.canvas_audio {
        Some(rel) => Some(Canvas::audio(audio_csv::read(&dir.join(rel))?, kind)),
        None => None,
    };
    let dims = (target_video.frames, target_video.height, target_video.width);
    Ok(Sample {
        target_video,
        target_audio,
        video_canvas,
        audio_canvas,
        kind,
        cond_id: entry.cond_id,
        seed: entry.seed,
        dims,
    })
}

/// Directory of one sample, for canvas-path consumers.
pub fn sample_path(root: &Path, id: usize) -> PathBuf {
    sample_dir(root, id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_dataset_reloads_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig {
            dims: (2, 16, 16),
            audio_ratio: 2,
            audio_feat_dim: 4,
        };
        let manifest =
            generate(dir.path(), ControlKind::Edges, 3, 7, &synth, None).unwrap();
        assert_eq!(manifest.samples.len(), 3);
        for entry in &manifest.samples {
            let loaded = load_sample(dir.path(), entry).unwrap();
            let fresh = make_sample_at(ControlKind::Edges, entry.seed, &synth, None).unwrap();
            assert_eq!(loaded.target_video.data(), fresh.target_video.data());
            assert_eq!(loaded.target_audio.data(), fresh.target_audio.data());
            assert_eq!(
                loaded.video_canvas.as_ref().unwrap().as_video().unwrap().data(),
                fresh.video_canvas.as_ref().unwrap().as_video().unwrap().data()
            );
        }
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let synth = SynthConfig {
            dims: (2, 16, 16),
            audio_ratio: 2,
            audio_feat_dim: 4,
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate(d1.path(), ControlKind::Inpainting, 2, 42, &synth, None).unwrap();
        generate(d2.path(), ControlKind::Inpainting, 2, 42, &synth, None).unwrap();
        let h1 = crate::manifest::hash_dir(d1.path()).unwrap();
        let h2 = crate::manifest::hash_dir(d2.path()).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn audio_intensity_samples_carry_audio_canvas_only() {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig {
            dims: (2, 16, 16),
            audio_ratio: 2,
            audio_feat_dim: 4,
        };
        let manifest =
            generate(dir.path(), ControlKind::AudioIntensity, 1, 3, &synth, None).unwrap();
        let entry = &manifest.samples[0];
        assert!(entry.paths.canvas_video.is_none());
        assert!(entry.paths.canvas_audio.is_some());
        let loaded = load_sample(dir.path(), entry).unwrap();
        assert!(loaded.audio_canvas.is_some());
    }
}
