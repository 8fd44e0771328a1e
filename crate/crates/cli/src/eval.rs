//! Held-out evaluation: generate with fixed defaults and score against
//! analytic ground truth, one row per sample plus aggregate means.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use avcanvas_core::canvas::{ControlKind, LayoutMode};
use avcanvas_core::diffusion::{euler_sample, GuidanceConfig, NoiseSchedule, SampleJob};
use avcanvas_core::metrics::{
    depth_rank_correlation, detect_edges, edge_f1, envelope_correlation, iou, psnr_unmasked,
    scene_truth, silhouette_mask, track_error, COLOR_THRESHOLD,
};
use avcanvas_core::sequence::StrengthField;
use avcanvas_core::synth::{random_rect_mask, render_scene, sample_scene};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{load_manifest, load_sample};
use crate::manifest::write_json;
use crate::sample_run::load_model;
use crate::{AppError, Result};

/// One evaluation invocation.
pub struct EvalSpec {
    pub backbone: PathBuf,
    pub loras: Vec<PathBuf>,
    pub dataset: PathBuf,
    pub strength: f32,
    pub lora_strength: Option<f32>,
    pub seed: u64,
    pub steps: usize,
    pub cfg_scale: f32,
    pub layout_override: Option<LayoutMode>,
    pub out: Option<PathBuf>,
}

impl EvalSpec {
    pub fn new(backbone: PathBuf, loras: Vec<PathBuf>, dataset: PathBuf) -> Self {
        EvalSpec {
            backbone,
            loras,
            dataset,
            strength: 1.0,
            lora_strength: None,
            seed: 42,
            steps: 16,
            cfg_scale: 1.0,
            layout_override: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleScores {
    pub id: usize,
    pub seed: u64,
    pub iou: Option<f32>,
    pub edge_f1: Option<f32>,
    pub depth_corr: Option<f32>,
    pub psnr: Option<f32>,
    pub track_err: Option<f32>,
    pub envelope_corr: Option<f32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean_iou: Option<f32>,
    pub mean_edge_f1: Option<f32>,
    pub mean_depth_corr: Option<f32>,
    pub mean_psnr: Option<f32>,
    pub mean_track_err: Option<f32>,
    pub mean_envelope_corr: Option<f32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FidelityReport {
    pub modality: String,
    pub strength: f32,
    pub steps: usize,
    pub seed: u64,
    pub rows: Vec<SampleScores>,
    pub summary: Aggregate,
}

fn mean_of(values: impl Iterator<Item = Option<f32>>) -> Option<f32> {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for v in values.flatten() {
        sum += v as f64;
        n += 1;
    }
    if n == 0 {
        None
    } else {
        Some((sum / n as f64) as f32)
    }
}

/// Evaluate a checkpoint on a held-out dataset at one strength value.
pub fn evaluate(spec: &EvalSpec) -> Result<FidelityReport> {
    let model = load_model(&spec.backbone, &spec.loras, spec.lora_strength)?;
    let manifest = load_manifest(&spec.dataset)?;
    // A single adapter must match the dataset's modality; pairs are a
    // joint audio-visual evaluation and skip the check.
    if model.infos.len() == 1 && model.infos[0].modality != manifest.modality {
        return Err(AppError::config(format!(
            "adapter modality {:?} does not match dataset {:?}",
            model.infos[0].modality, manifest.modality
        )));
    }
    let synth_cfg = manifest.synth_config();
    let layout = spec.layout_override.unwrap_or_else(|| model.layout());

    let rows: Vec<Result<SampleScores>> = manifest
        .samples
        .par_iter()
        .map(|entry| -> Result<SampleScores> {
            let sample = load_sample(&spec.dataset, entry)?;
            let kind = sample.kind;
            let scene = sample_scene(kind, entry.seed, &synth_cfg);
            let render = render_scene(&scene).map_err(AppError::from)?;
            let truth = scene_truth(&scene, &render);

            let job = SampleJob {
                model: &model.backbone,
                adapters: &model.adapters,
                dims: sample.dims,
                video_canvas: sample.video_canvas.as_ref(),
                audio_canvas: sample.audio_canvas.as_ref(),
                layout_mode: layout,
                video_strength: StrengthField::uniform(spec.strength),
                audio_strength: StrengthField::uniform(spec.strength),
                guidance: GuidanceConfig {
                    cfg_scale: spec.cfg_scale,
                    uncond_id: 0,
                },
                cond_id: sample.cond_id,
                seed: spec.seed,
                schedule: NoiseSchedule { steps: spec.steps },
            };
            let gen = euler_sample(&job).map_err(AppError::from)?;

            let gen_mask = silhouette_mask(&gen.video, scene.background);
            let iou_v = Some(iou(&gen_mask, &truth.shape_mask));
            let mut scores = SampleScores {
                id: entry.id,
                seed: entry.seed,
                iou: iou_v,
                edge_f1: None,
                depth_corr: None,
                psnr: None,
                track_err: None,
                envelope_corr: None,
            };
            match kind {
                ControlKind::Edges | ControlKind::ShiftedView => {
                    let detected = detect_edges(&gen.video, COLOR_THRESHOLD);
                    scores.edge_f1 = Some(edge_f1(&detected, &truth.edges, sample.dims));
                }
                ControlKind::Depth => {
                    scores.depth_corr = Some(depth_rank_correlation(
                        &gen.video,
                        &truth.regions,
                        &truth.region_ranks,
                    ));
                }
                ControlKind::Composite => {
                    let detected = detect_edges(&gen.video, COLOR_THRESHOLD);
                    scores.edge_f1 = Some(edge_f1(&detected, &truth.edges, sample.dims));
                    scores.depth_corr = Some(depth_rank_correlation(
                        &gen.video,
                        &truth.regions,
                        &truth.region_ranks,
                    ));
                }
                ControlKind::Inpainting => {
                    let mask = random_rect_mask(
                        entry.seed,
                        sample.dims.0,
                        sample.dims.1,
                        sample.dims.2,
                    );
                    scores.psnr =
                        Some(psnr_unmasked(&gen.video, &sample.target_video, Some(&mask)));
                }
                ControlKind::Tracks => {
                    scores.track_err =
                        Some(track_error(&gen.video, &truth.tracks, &truth.shape_colors));
                }
                ControlKind::AudioIntensity | ControlKind::TalkingBoxes => {
                    let control = sample
                        .audio_canvas
                        .as_ref()
                        .and_then(|c| c.as_audio())
                        .ok_or_else(|| AppError::config("sample has no audio canvas"))?;
                    scores.envelope_corr = Some(envelope_correlation(&gen.audio, control));
                }
            }
            Ok(scores)
        })
        .collect();
    let rows: Vec<SampleScores> = rows.into_iter().collect::<Result<_>>()?;

    let summary = Aggregate {
        count: rows.len(),
        mean_iou: mean_of(rows.iter().map(|r| r.iou)),
        mean_edge_f1: mean_of(rows.iter().map(|r| r.edge_f1)),
        mean_depth_corr: mean_of(rows.iter().map(|r| r.depth_corr)),
        mean_psnr: mean_of(rows.iter().map(|r| r.psnr)),
        mean_track_err: mean_of(rows.iter().map(|r| r.track_err)),
        mean_envelope_corr: mean_of(rows.iter().map(|r| r.envelope_corr)),
    };
    let report = FidelityReport {
        modality: manifest.modality.clone(),
        strength: spec.strength,
        steps: spec.steps,
        seed: spec.seed,
        rows,
        summary,
    };
    if let Some(out) = &spec.out {
        fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
        fs::write(out.join("report.csv"), report.to_csv())
            .map_err(|e| AppError::io(out.join("report.csv"), e))?;
        write_json(&out.join("report.json"), &report)?;
    }
    Ok(report)
}

impl FidelityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,seed,iou,edge_f1,depth_corr,psnr,track_err,envelope_corr\n");
        let cell = |v: Option<f32>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.id,
                r.seed,
                cell(r.iou),
                cell(r.edge_f1),
                cell(r.depth_corr),
                cell(r.psnr),
                cell(r.track_err),
                cell(r.envelope_corr),
            );
        }
        out
    }

    /// The headline metric for a modality (higher is better except for
    /// track error, which is negated).
    pub fn primary_metric(&self) -> Option<f32> {
        match self.modality.as_str() {
            "edges" | "shifted_view" => self.summary.mean_edge_f1,
            "depth" | "composite" => self.summary.mean_depth_corr,
            "inpainting" => self.summary.mean_psnr,
            "tracks" => self.summary.mean_track_err.map(|v| -v),
            "audio_intensity" | "talking_boxes" => self.summary.mean_envelope_corr,
            _ => self.summary.mean_iou,
        }
    }
}
