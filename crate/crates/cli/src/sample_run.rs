//! Checkpoint loading/composition and the `sample` command: one
//! deterministic generation from noise to PPM frames + audio CSV.

use std::fs;
use std::path::{Path, PathBuf};

use avcanvas_core::canvas::{Canvas, ControlKind, LayoutMode};
use avcanvas_core::diffusion::{euler_sample, GuidanceConfig, NoiseSchedule, SampleJob};
use avcanvas_core::lora::{apply_pair, LoraWeights};
use avcanvas_core::model::{AdapterMap, Backbone};
use avcanvas_core::sequence::StrengthField;
use serde::Serialize;

use crate::dataset::SampleMeta;
use crate::formats::checkpoint::{load_backbone, load_lora, LoraCkptInfo};
use crate::formats::{audio_csv, ppm};
use crate::manifest::{backbone_hash, hash_file, write_json};
use crate::{AppError, Result};

/// A backbone with zero or more composed adapters.
pub struct LoadedModel {
    pub backbone: Backbone,
    pub adapters: AdapterMap,
    pub infos: Vec<LoraCkptInfo>,
}

impl LoadedModel {
    /// Layout mode the (first) adapter was trained with.
    pub fn layout(&self) -> LayoutMode {
        self.infos
            .first()
            .and_then(|i| LayoutMode::parse(&i.layout_mode).ok())
            .unwrap_or(LayoutMode::ParallelCanvas)
    }
}

/// Load a backbone and compose adapters onto it. Adapters must have
/// been trained on exactly these backbone weights (hash check) and on
/// disjoint module sets.
pub fn load_model(
    backbone_path: &Path,
    lora_paths: &[PathBuf],
    lora_strength: Option<f32>,
) -> Result<LoadedModel> {
    let (backbone, _, _) = load_backbone(backbone_path)?;
    let bb_hash = backbone_hash(&backbone);
    let mut loras: Vec<(LoraWeights, LoraCkptInfo)> = Vec::new();
    for path in lora_paths {
        let (lora, info) = load_lora(path)?;
        if info.backbone_hash != bb_hash {
            return Err(AppError::config(format!(
                "adapter {} was trained on a different backbone (hash {} vs {})",
                path.display(),
                info.backbone_hash,
                bb_hash
            )));
        }
        lora.validate_against(&backbone).map_err(AppError::from)?;
        loras.push((lora, info));
    }
    let adapters = match loras.len() {
        0 => AdapterMap::new(),
        1 => match lora_strength {
            Some(s) => loras[0].0.adapter_map_at(s),
            None => loras[0].0.adapter_map(),
        },
        2 => apply_pair(&backbone, &loras[0].0, &loras[1].0).map_err(AppError::from)?,
        n => return Err(AppError::config(format!("cannot compose {n} adapters"))),
    };
    Ok(LoadedModel {
        backbone,
        adapters,
        infos: loras.into_iter().map(|(_, i)| i).collect(),
    })
}

/// Canvas inputs read back from one dataset sample directory.
pub struct CanvasInputs {
    pub meta: SampleMeta,
    pub video: Option<Canvas>,
    pub audio: Option<Canvas>,
}

pub fn load_canvas_dir(dir: &Path) -> Result<CanvasInputs> {
    let meta_path = dir.join("sample.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| AppError::io(&meta_path, e))?;
    let meta: SampleMeta =
        serde_json::from_str(&text).map_err(|e| AppError::io(&meta_path, e))?;
    let kind = ControlKind::parse(&meta.entry.modality).map_err(AppError::from)?;
    let video = match &meta.entry.paths.canvas_video {
        Some(rel) => Some(Canvas::video(
            ppm::read_clip(&dir.join(rel))?,
            kind,
            meta.entry.d,
        )),
        None => None,
    };
    let audio = match &meta.entry.paths.canvas_audio {
        Some(rel) => Some(Canvas::audio(audio_csv::read(&dir.join(rel))?, kind)),
        None => None,
    };
    Ok(CanvasInputs { meta, video, audio })
}

/// Arguments of one `sample` invocation.
pub struct SampleSpec {
    pub backbone: PathBuf,
    pub loras: Vec<PathBuf>,
    pub canvas: Option<PathBuf>,
    /// Target dims when sampling without a canvas.
    pub dims: Option<(usize, usize, usize)>,
    pub strength: f32,
    pub lora_strength: Option<f32>,
    pub seed: u64,
    pub steps: usize,
    pub cfg_scale: f32,
    pub out: PathBuf,
    pub layout_override: Option<LayoutMode>,
}

#[derive(Serialize)]
struct SampleManifest {
    seed: u64,
    steps: usize,
    strength: f32,
    cfg_scale: f32,
    cond_id: usize,
    layout_mode: String,
    backbone_hash: String,
    checkpoint_hashes: Vec<String>,
    canvas_modality: Option<String>,
    dims: [usize; 3],
}

/// Run one sampling job and write frames, audio, and the run manifest.
pub fn run_sample(spec: &SampleSpec) -> Result<PathBuf> {
    let model = load_model(&spec.backbone, &spec.loras, spec.lora_strength)?;
    let canvas = match &spec.canvas {
        Some(dir) => Some(load_canvas_dir(dir)?),
        None => None,
    };
    let (dims, cond_id, kind_name) = match &canvas {
        Some(c) => (
            (c.meta.dims[0], c.meta.dims[1], c.meta.dims[2]),
            c.meta.entry.cond_id,
            Some(c.meta.entry.modality.clone()),
        ),
        None => {
            let dims = spec.dims.ok_or_else(|| {
                AppError::config("sampling without a canvas requires explicit dims")
            })?;
            (dims, 0, None)
        }
    };
    let layout = spec.layout_override.unwrap_or_else(|| model.layout());
    let job = SampleJob {
        model: &model.backbone,
        adapters: &model.adapters,
        dims,
        video_canvas: canvas.as_ref().and_then(|c| c.video.as_ref()),
        audio_canvas: canvas.as_ref().and_then(|c| c.audio.as_ref()),
        layout_mode: layout,
        video_strength: StrengthField::uniform(spec.strength),
        audio_strength: StrengthField::uniform(spec.strength),
        guidance: GuidanceConfig {
            cfg_scale: spec.cfg_scale,
            uncond_id: 0,
        },
        cond_id,
        seed: spec.seed,
        schedule: NoiseSchedule { steps: spec.steps },
    };
    let result = euler_sample(&job).map_err(AppError::from)?;

    fs::create_dir_all(&spec.out).map_err(|e| AppError::io(&spec.out, e))?;
    ppm::write_clip(&spec.out.join("frames"), &result.video)?;
    audio_csv::write(&spec.out.join("audio.csv"), &result.audio)?;
    let mut checkpoint_hashes = vec![hash_file(&spec.backbone)?];
    for p in &spec.loras {
        checkpoint_hashes.push(hash_file(p)?);
    }
    let manifest = SampleManifest {
        seed: spec.seed,
        steps: spec.steps,
        strength: spec.strength,
        cfg_scale: spec.cfg_scale,
        cond_id,
        layout_mode: layout.name().to_string(),
        backbone_hash: backbone_hash(&model.backbone),
        checkpoint_hashes,
        canvas_modality: kind_name,
        dims: [dims.0, dims.1, dims.2],
    };
    write_json(&spec.out.join("manifest.json"), &manifest)?;
    Ok(spec.out.clone())
}
