//! Ablation harness: sweep one axis (rank, steps, layout mode, or
//! canvas downscale) with shared seeds and emit one comparison row per
//! value.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use avcanvas_core::canvas::ControlKind;
use serde::Serialize;

use crate::configs::TrainConfig;
use crate::dataset::{generate, load_manifest};
use crate::eval::{evaluate, EvalSpec};
use crate::train::train;
use crate::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rank,
    Steps,
    LayoutMode,
    Downscale,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "rank" => Axis::Rank,
            "steps" => Axis::Steps,
            "layout_mode" => Axis::LayoutMode,
            "downscale" => Axis::Downscale,
            other => return Err(AppError::config(format!("unknown ablation axis {other:?}"))),
        })
    }
}

pub const RANK_VALUES: &[usize] = &[32, 64, 128];
pub const STEP_VALUES: &[u64] = &[500, 1000, 2000, 3000];
pub const LAYOUT_VALUES: &[&str] = &["parallel_canvas", "spatial_concat"];
pub const DOWNSCALE_VALUES: &[usize] = &[1, 2, 4];

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub value: String,
    pub steps: u64,
    pub primary_metric: Option<f32>,
    pub mean_iou: Option<f32>,
    pub final_loss: f32,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub axis: String,
    pub modality: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,value,steps,primary_metric,mean_iou,final_loss\n");
        let cell = |v: Option<f32>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6e}",
                self.axis,
                r.value,
                r.steps,
                cell(r.primary_metric),
                cell(r.mean_iou),
                r.final_loss,
            );
        }
        out
    }
}

fn eval_checkpoint(
    base: &TrainConfig,
    heldout: &Path,
    checkpoint: PathBuf,
) -> Result<(Option<f32>, Option<f32>)> {
    let report = evaluate(&EvalSpec::new(
        base.backbone.clone(),
        vec![checkpoint],
        heldout.to_path_buf(),
    ))?;
    Ok((report.primary_metric(), report.summary.mean_iou))
}

/// Train + evaluate one arm per axis value; all arms share the base
/// config's seed, so data order and noise draws are identical.
pub fn ablate(axis: Axis, base: &TrainConfig, out_dir: &Path) -> Result<AblationTable> {
    let heldout = base
        .heldout
        .clone()
        .ok_or_else(|| AppError::config("ablation requires a heldout dataset in the config"))?;
    fs::create_dir_all(out_dir).map_err(|e| AppError::io(out_dir, e))?;
    let mut rows = Vec::new();

    match axis {
        Axis::Rank => {
            for &rank in RANK_VALUES {
                let mut cfg = base.clone();
                cfg.rank = rank;
                cfg.alpha = -1.0;
                cfg.out_dir = out_dir.join(format!("rank_{rank}"));
                let outcome = train(&cfg)?;
                let (primary, iou) = eval_checkpoint(&cfg, &heldout, outcome.final_checkpoint)?;
                rows.push(AblationRow {
                    value: rank.to_string(),
                    steps: cfg.steps,
                    primary_metric: primary,
                    mean_iou: iou,
                    final_loss: outcome.final_loss,
                });
            }
        }
        Axis::Steps => {
            // One training run to the largest step count, evaluating
            // every intermediate checkpoint.
            let mut cfg = base.clone();
            cfg.steps = *STEP_VALUES.last().unwrap();
            cfg.checkpoint_steps = STEP_VALUES.to_vec();
            cfg.out_dir = out_dir.join("steps");
            let outcome = train(&cfg)?;
            for (step, path) in &outcome.checkpoints {
                let (primary, iou) = eval_checkpoint(&cfg, &heldout, path.clone())?;
                rows.push(AblationRow {
                    value: step.to_string(),
                    steps: *step,
                    primary_metric: primary,
                    mean_iou: iou,
                    final_loss: outcome.final_loss,
                });
            }
        }
        Axis::LayoutMode => {
            for &mode in LAYOUT_VALUES {
                let mut cfg = base.clone();
                cfg.layout_mode = mode.to_string();
                cfg.out_dir = out_dir.join(mode);
                let outcome = train(&cfg)?;
                let (primary, iou) = eval_checkpoint(&cfg, &heldout, outcome.final_checkpoint)?;
                rows.push(AblationRow {
                    value: mode.to_string(),
                    steps: cfg.steps,
                    primary_metric: primary,
                    mean_iou: iou,
                    final_loss: outcome.final_loss,
                });
            }
        }
        Axis::Downscale => {
            // Regenerate train/heldout canvases per factor with the
            // same scene seeds.
            let train_manifest = load_manifest(&base.dataset)?;
            let held_manifest = load_manifest(&heldout)?;
            let kind = ControlKind::parse(&train_manifest.modality).map_err(AppError::from)?;
            for &d in DOWNSCALE_VALUES {
                let arm = out_dir.join(format!("d{d}"));
                let train_data = arm.join("train");
                let held_data = arm.join("heldout");
                generate(
                    &train_data,
                    kind,
                    train_manifest.count,
                    train_manifest.seed,
                    &train_manifest.synth_config(),
                    Some(d),
                )?;
                generate(
                    &held_data,
                    kind,
                    held_manifest.count,
                    held_manifest.seed,
                    &held_manifest.synth_config(),
                    Some(d),
                )?;
                let mut cfg = base.clone();
                cfg.dataset = train_data;
                cfg.out_dir = arm.join("run");
                let outcome = train(&cfg)?;
                let (primary, iou) = eval_checkpoint(&cfg, &held_data, outcome.final_checkpoint)?;
                rows.push(AblationRow {
                    value: d.to_string(),
                    steps: cfg.steps,
                    primary_metric: primary,
                    mean_iou: iou,
                    final_loss: outcome.final_loss,
                });
            }
        }
    }

    let table = AblationTable {
        axis: match axis {
            Axis::Rank => "rank",
            Axis::Steps => "steps",
            Axis::LayoutMode => "layout_mode",
            Axis::Downscale => "downscale",
        }
        .to_string(),
        modality: base.modality.clone(),
        rows,
    };
    fs::write(out_dir.join("ablation.csv"), table.to_csv())
        .map_err(|e| AppError::io(out_dir.join("ablation.csv"), e))?;
    crate::manifest::write_json(&out_dir.join("ablation.json"), &table)?;
    Ok(table)
}
