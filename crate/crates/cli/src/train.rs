//! Backbone pretraining and LoRA training loops: deterministic batch
//! sampling, linear learning-rate decay, CSV loss logs, checkpointing,
//! and the frozen-backbone guarantee for adapter runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use avcanvas_core::canvas::{Canvas, ControlKind, LayoutMode};
use avcanvas_core::diffusion::{batch_gradients, prepare_item, training_loss, TrainItem};
use avcanvas_core::lora::{attach, LoraLayer, LoraSpec, LoraWeights};
use avcanvas_core::model::{AdapterMap, Backbone, TrainScope};
use avcanvas_core::optim::{AdamW, AdamWConfig, LinearLr};
use avcanvas_core::rng::SeedRng;
use avcanvas_core::tape::Tape;
use avcanvas_core::Tensor;
use rayon::prelude::*;
use serde::Serialize;

use crate::configs::{PretrainConfig, TrainConfig};
use crate::dataset::{load_manifest, load_sample};
use crate::formats::checkpoint::{save_backbone, save_lora, LoraCkptInfo};
use crate::manifest::{backbone_hash, hash_config, hash_file, write_json};
use crate::{AppError, Result};

/// Clean latents and canvases for one dataset sample, ready to noise.
struct PreparedSample {
    video_x0: Tensor,
    audio_x0: Tensor,
    video_canvas: Option<Canvas>,
    audio_canvas: Option<Canvas>,
    cond_id: usize,
    dims: (usize, usize, usize),
}

fn prepare_dataset(
    root: &Path,
    model: &Backbone,
    expected_modality: Option<&str>,
) -> Result<(Vec<PreparedSample>, ControlKind)> {
    let manifest = load_manifest(root)?;
    if let Some(expect) = expected_modality {
        if manifest.modality != expect {
            return Err(AppError::config(format!(
                "dataset at {} holds modality {:?}, config wants {:?}",
                root.display(),
                manifest.modality,
                expect
            )));
        }
    }
    let cfg = &model.cfg;
    if manifest.audio_feat_dim != cfg.audio_feat_dim {
        return Err(AppError::config(format!(
            "dataset audio feature dim {} does not match model {}",
            manifest.audio_feat_dim, cfg.audio_feat_dim
        )));
    }
    if manifest.audio_ratio != cfg.audio_frames_per_video_frame {
        return Err(AppError::config(format!(
            "dataset audio ratio {} does not match model {}",
            manifest.audio_ratio, cfg.audio_frames_per_video_frame
        )));
    }
    let kind = ControlKind::parse(&manifest.modality).map_err(AppError::from)?;
    let mut prepared = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let sample = load_sample(root, entry)?;
        let video_x0 = avcanvas_core::diffusion::video_latents(&sample.target_video, cfg.patch)
            .map_err(AppError::from)?;
        let audio_x0 = avcanvas_core::diffusion::audio_latents(&sample.target_audio, cfg.audio_group)
            .map_err(AppError::from)?;
        prepared.push(PreparedSample {
            video_x0,
            audio_x0,
            video_canvas: sample.video_canvas,
            audio_canvas: sample.audio_canvas,
            cond_id: sample.cond_id,
            dims: sample.dims,
        });
    }
    if prepared.is_empty() {
        return Err(AppError::config(format!("dataset at {} is empty", root.display())));
    }
    Ok((prepared, kind))
}

/// Which streams a modality trains (video-only adapters skip the audio
/// loss and vice versa).
fn trained_streams(kind: ControlKind) -> (bool, bool) {
    match kind {
        ControlKind::AudioIntensity => (false, true),
        ControlKind::TalkingBoxes => (true, true),
        _ => (true, false),
    }
}

/// Batch items for one step, drawn from the per-step substream.
fn draw_batch(
    samples: &[PreparedSample],
    model: &Backbone,
    layout: LayoutMode,
    use_canvas: bool,
    (train_video, train_audio): (bool, bool),
    cond_override: Option<usize>,
    batch_size: usize,
    seed: u64,
    step: u64,
) -> Result<Vec<TrainItem>> {
    let mut rng = SeedRng::substream(seed, step + 1);
    let mut items = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let s = &samples[rng.below(samples.len())];
        let t = rng.uniform(0.0, 1.0);
        let item = prepare_item(
            &model.cfg,
            s.dims,
            &s.video_x0,
            &s.audio_x0,
            if use_canvas { s.video_canvas.as_ref() } else { None },
            if use_canvas { s.audio_canvas.as_ref() } else { None },
            layout,
            cond_override.unwrap_or(s.cond_id),
            train_video,
            train_audio,
            t,
            &mut rng,
        )
        .map_err(AppError::from)?;
        items.push(item);
    }
    Ok(items)
}

/// Mean loss/gradients over a batch, items evaluated in parallel and
/// reduced in index order (bit-deterministic).
fn parallel_batch_gradients(
    model: &Backbone,
    adapters: &AdapterMap,
    items: &[TrainItem],
    scope: TrainScope,
) -> avcanvas_core::error::Result<(f32, BTreeMap<String, Tensor>)> {
    if items.len() == 1 {
        return batch_gradients(model, adapters, items, scope);
    }
    let per_item: Vec<avcanvas_core::error::Result<(f32, BTreeMap<String, Tensor>)>> = items
        .par_iter()
        .map(|item| {
            let mut tape = Tape::new();
            let (loss, vars) = training_loss(&mut tape, model, adapters, item, scope)?;
            let loss_val = tape.value(loss).data()[0];
            if !loss_val.is_finite() {
                return Err(avcanvas_core::Error::NonFinite { op: "training_loss" });
            }
            let mut grads = tape.backward(loss)?;
            let named: BTreeMap<String, Tensor> = vars
                .into_iter()
                .map(|(name, var)| {
                    let g = grads.take(var).expect("trainable leaf has gradient");
                    (name, g)
                })
                .collect();
            Ok((loss_val, named))
        })
        .collect();

    let mut loss_sum = 0.0f64;
    let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
    for res in per_item {
        let (loss, grads) = res?;
        loss_sum += loss as f64;
        for (name, g) in grads {
            match acc.get_mut(&name) {
                Some(a) => {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
                None => {
                    acc.insert(name, g);
                }
            }
        }
    }
    let inv = 1.0 / items.len() as f32;
    for g in acc.values_mut() {
        for v in g.data_mut() {
            *v *= inv;
        }
    }
    Ok(((loss_sum / items.len() as f64) as f32, acc))
}

fn lora_params_map(lora: &LoraWeights) -> BTreeMap<String, Tensor> {
    let mut map = BTreeMap::new();
    for (name, layer) in &lora.layers {
        map.insert(format!("{name}.lora_a"), layer.down.clone());
        map.insert(format!("{name}.lora_b"), layer.up.clone());
    }
    map
}

fn lora_from_params(
    spec: &LoraSpec,
    module_names: &[String],
    params: &BTreeMap<String, Tensor>,
) -> LoraWeights {
    let mut layers = BTreeMap::new();
    for name in module_names {
        layers.insert(
            name.clone(),
            LoraLayer {
                down: params[&format!("{name}.lora_a")].clone(),
                up: params[&format!("{name}.lora_b")].clone(),
            },
        );
    }
    LoraWeights {
        spec: spec.clone(),
        layers,
    }
}

fn write_loss_log(path: &Path, rows: &[(u64, f32, f32)]) -> Result<()> {
    let mut out = String::from("step,loss,lr\n");
    for (step, loss, lr) in rows {
        let _ = writeln!(out, "{step},{loss:.8e},{lr:.8e}");
    }
    fs::write(path, out).map_err(|e| AppError::io(path, e))
}

#[derive(Debug, Serialize)]
struct TrainManifest<'a> {
    config: &'a TrainConfig,
    config_hash: String,
    backbone_file_hash: String,
    dataset_hash: String,
    backbone_params_before: String,
    backbone_params_after: String,
    checkpoints: Vec<String>,
    final_loss: f32,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoints: Vec<(u64, PathBuf)>,
    pub final_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub final_loss: f32,
}

/// LoRA training: adapter-only updates on a frozen backbone.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (model, _, _) = crate::formats::checkpoint::load_backbone(&cfg.backbone)?;
    let (samples, kind) = prepare_dataset(&cfg.dataset, &model, Some(&cfg.modality))?;
    let layout = cfg.layout();
    let streams = trained_streams(kind);

    let spec = LoraSpec {
        rank: cfg.rank,
        alpha: cfg.resolved_alpha(),
        targets: cfg.targets.clone(),
        lora_strength: cfg.lora_strength,
    };
    spec.validate().map_err(AppError::from)?;
    let lora0 = attach(&model, &spec, cfg.seed).map_err(AppError::from)?;
    let module_names: Vec<String> = lora0.layers.keys().cloned().collect();
    let mut params = lora_params_map(&lora0);

    fs::create_dir_all(&cfg.out_dir).map_err(|e| AppError::io(&cfg.out_dir, e))?;
    let hash_before = backbone_hash(&model);
    let schedule = LinearLr {
        start: cfg.lr_start,
        end: cfg.lr_end,
        steps: cfg.steps,
    };
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr_start,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    });
    let ckpt_steps = cfg.checkpoint_schedule();
    let mut checkpoints = Vec::new();
    let mut log_rows = Vec::with_capacity(cfg.steps as usize);
    let info = |step: u64| LoraCkptInfo {
        step,
        seed: cfg.seed,
        modality: cfg.modality.clone(),
        layout_mode: cfg.layout_mode.clone(),
        backbone_hash: hash_before.clone(),
        config: model.cfg.clone(),
    };

    for step in 0..cfg.steps {
        let items = draw_batch(
            &samples,
            &model,
            layout,
            true,
            streams,
            None,
            cfg.batch_size,
            cfg.seed,
            step,
        )?;
        let lora = lora_from_params(&spec, &module_names, &params);
        let (loss, grads) =
            parallel_batch_gradients(&model, &lora.adapter_map(), &items, TrainScope::Adapters)
                .map_err(|e| match e {
                    avcanvas_core::Error::NonFinite { .. } => {
                        AppError::Numeric(format!("non-finite loss at step {step}"))
                    }
                    other => AppError::from(other),
                })?;
        let lr = schedule.at(step);
        opt.step(&mut params, &grads, lr).map_err(AppError::from)?;
        log_rows.push((step, loss, lr));

        let done = step + 1;
        if ckpt_steps.contains(&done) {
            let lora = lora_from_params(&spec, &module_names, &params);
            let path = cfg.out_dir.join(format!("ckpt_step_{done:06}.avct"));
            save_lora(&path, &lora, &info(done))?;
            checkpoints.push((done, path));
        }
    }

    let hash_after = backbone_hash(&model);
    if hash_after != hash_before {
        return Err(AppError::Numeric(
            "backbone parameters changed during adapter training".into(),
        ));
    }

    let loss_log = cfg.out_dir.join("loss_log.csv");
    write_loss_log(&loss_log, &log_rows)?;
    let manifest = TrainManifest {
        config: cfg,
        config_hash: hash_config(cfg)?,
        backbone_file_hash: hash_file(&cfg.backbone)?,
        dataset_hash: hash_file(&cfg.dataset.join("manifest.json"))?,
        backbone_params_before: hash_before,
        backbone_params_after: hash_after,
        checkpoints: checkpoints
            .iter()
            .map(|(_, p)| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
        final_loss: log_rows.last().map(|r| r.1).unwrap_or(f32::NAN),
    };
    write_json(&cfg.out_dir.join("manifest.json"), &manifest)?;

    let final_checkpoint = checkpoints
        .last()
        .map(|(_, p)| p.clone())
        .expect("schedule always includes the final step");
    Ok(TrainOutcome {
        final_loss: log_rows.last().map(|r| r.1).unwrap_or(f32::NAN),
        checkpoints,
        final_checkpoint,
        loss_log,
    })
}

#[derive(Debug, Serialize)]
struct PretrainManifest<'a> {
    config: &'a PretrainConfig,
    config_hash: String,
    dataset_hash: String,
    backbone_params: String,
    final_loss: f32,
}

/// Unconditional joint denoising of the backbone itself: every
/// parameter trains, no canvases, null condition id.
pub fn pretrain(cfg: &PretrainConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let mut model =
        Backbone::init(cfg.model_config(), cfg.seed).map_err(AppError::from)?;
    let (samples, _) = prepare_dataset(&cfg.dataset, &model, None)?;
    let schedule = LinearLr {
        start: cfg.lr_start,
        end: cfg.lr_end,
        steps: cfg.steps,
    };
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr_start,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    });
    let mut log_rows = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let items = draw_batch(
            &samples,
            &model,
            LayoutMode::ParallelCanvas,
            false,
            (true, true),
            Some(0),
            cfg.batch_size,
            cfg.seed,
            step,
        )?;
        let (loss, grads) =
            parallel_batch_gradients(&model, &AdapterMap::new(), &items, TrainScope::Backbone)
                .map_err(|e| match e {
                    avcanvas_core::Error::NonFinite { .. } => {
                        AppError::Numeric(format!("non-finite loss at step {step}"))
                    }
                    other => AppError::from(other),
                })?;
        let lr = schedule.at(step);
        opt.step(&mut model.params, &grads, lr).map_err(AppError::from)?;
        log_rows.push((step, loss, lr));
    }

    if let Some(parent) = cfg.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| AppError::io(parent, e))?;
        }
    }
    save_backbone(&cfg.out, &model, cfg.steps, cfg.seed)?;
    let log_path = cfg.out.with_extension("loss.csv");
    write_loss_log(&log_path, &log_rows)?;
    let manifest = PretrainManifest {
        config: cfg,
        config_hash: hash_config(cfg)?,
        dataset_hash: hash_file(&cfg.dataset.join("manifest.json"))?,
        backbone_params: backbone_hash(&model),
        final_loss: log_rows.last().map(|r| r.1).unwrap_or(f32::NAN),
    };
    write_json(&cfg.out.with_extension("manifest.json"), &manifest)?;
    Ok(cfg.out.clone())
}
