//! TOML configuration files for training runs. Keys are flat; every
//! omitted key takes the documented default.

use std::fs;
use std::path::{Path, PathBuf};

use avcanvas_core::canvas::LayoutMode;
use avcanvas_core::codec::PatchSize;
use avcanvas_core::model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::{AppError, Result};

fn default_lr_start() -> f32 {
    1e-4
}
fn default_lr_end() -> f32 {
    1e-5
}
fn default_batch() -> usize {
    2
}
fn default_alpha() -> f32 {
    -1.0 // resolved to rank
}
fn default_lora_strength() -> f32 {
    1.0
}
fn default_layout() -> String {
    "parallel_canvas".into()
}
fn default_targets() -> Vec<String> {
    vec!["V.SA".into()]
}
fn default_checkpoint_every() -> u64 {
    500
}

/// LoRA training run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub modality: String,
    pub dataset: PathBuf,
    /// Backbone checkpoint the adapter trains on.
    pub backbone: PathBuf,
    pub steps: u64,
    pub rank: usize,
    /// Defaults to `rank` when omitted or negative.
    #[serde(default = "default_alpha")]
    pub alpha: f32,
    #[serde(default = "default_targets")]
    pub targets: Vec<String>,
    #[serde(default = "default_lora_strength")]
    pub lora_strength: f32,
    #[serde(default = "default_lr_start")]
    pub lr_start: f32,
    #[serde(default = "default_lr_end")]
    pub lr_end: f32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub weight_decay: f32,
    pub seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    /// Explicit checkpoint steps; overrides `checkpoint_every`.
    #[serde(default)]
    pub checkpoint_steps: Vec<u64>,
    #[serde(default = "default_layout")]
    pub layout_mode: String,
    pub out_dir: PathBuf,
    /// Held-out dataset for post-training evaluation (ablations).
    #[serde(default)]
    pub heldout: Option<PathBuf>,
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let cfg: TrainConfig =
            toml::from_str(&text).map_err(|e| AppError::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(AppError::config("steps must be at least 1"));
        }
        if self.lr_end > self.lr_start {
            return Err(AppError::config("lr_end must not exceed lr_start"));
        }
        if self.batch_size == 0 {
            return Err(AppError::config("batch_size must be at least 1"));
        }
        if self.rank == 0 {
            return Err(AppError::config("rank must be at least 1"));
        }
        LayoutMode::parse(&self.layout_mode).map_err(AppError::from)?;
        Ok(())
    }

    pub fn resolved_alpha(&self) -> f32 {
        if self.alpha < 0.0 {
            self.rank as f32
        } else {
            self.alpha
        }
    }

    pub fn layout(&self) -> LayoutMode {
        LayoutMode::parse(&self.layout_mode).expect("validated")
    }

    /// Steps after which a checkpoint is written (always includes the
    /// final step).
    pub fn checkpoint_schedule(&self) -> Vec<u64> {
        let mut steps: Vec<u64> = if self.checkpoint_steps.is_empty() {
            (1..=self.steps)
                .filter(|s| s % self.checkpoint_every == 0)
                .collect()
        } else {
            self.checkpoint_steps
                .iter()
                .copied()
                .filter(|&s| s >= 1 && s <= self.steps)
                .collect()
        };
        if !steps.contains(&self.steps) {
            steps.push(self.steps);
        }
        steps.sort_unstable();
        steps.dedup();
        steps
    }
}

fn default_depth() -> usize {
    2
}
fn default_width() -> usize {
    48
}
fn default_heads() -> usize {
    4
}
fn default_patch() -> [usize; 3] {
    [1, 4, 4]
}
fn default_audio_feat_dim() -> usize {
    8
}
fn default_audio_group() -> usize {
    4
}
fn default_audio_ratio() -> usize {
    4
}
fn default_cond_vocab() -> usize {
    16
}
fn default_ff_mult() -> usize {
    4
}
fn default_rope_base() -> f32 {
    10_000.0
}

/// Backbone pretraining configuration (architecture + schedule).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub dataset: PathBuf,
    pub steps: u64,
    pub seed: u64,
    /// Output checkpoint path.
    pub out: PathBuf,
    #[serde(default = "default_lr_start")]
    pub lr_start: f32,
    #[serde(default = "default_lr_end")]
    pub lr_end: f32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub weight_decay: f32,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_patch")]
    pub patch: [usize; 3],
    #[serde(default = "default_audio_feat_dim")]
    pub audio_feat_dim: usize,
    #[serde(default = "default_audio_group")]
    pub audio_group: usize,
    #[serde(default = "default_audio_ratio")]
    pub audio_ratio: usize,
    #[serde(default = "default_cond_vocab")]
    pub cond_vocab: usize,
    #[serde(default = "default_ff_mult")]
    pub ff_mult: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f32,
}

impl PretrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let cfg: PretrainConfig =
            toml::from_str(&text).map_err(|e| AppError::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(AppError::config("steps must be at least 1"));
        }
        if self.lr_end > self.lr_start {
            return Err(AppError::config("lr_end must not exceed lr_start"));
        }
        self.model_config().validate().map_err(AppError::from)?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            depth: self.depth,
            width: self.width,
            heads: self.heads,
            patch: PatchSize::new(self.patch[0], self.patch[1], self.patch[2]),
            audio_feat_dim: self.audio_feat_dim,
            audio_group: self.audio_group,
            audio_frames_per_video_frame: self.audio_ratio,
            cond_vocab: self.cond_vocab,
            ff_mult: self.ff_mult,
            rope_base: self.rope_base,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_config_defaults_and_schedule() {
        let toml_text = r#"
modality = "edges"
dataset = "data/train"
backbone = "runs/backbone.avct"
steps = 2000
rank = 32
seed = 7
out_dir = "runs/edges"
checkpoint_steps = [200, 1000, 2000]
"#;
        let cfg: TrainConfig = toml::from_str(toml_text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.resolved_alpha(), 32.0);
        assert_eq!(cfg.lr_start, 1e-4);
        assert_eq!(cfg.lr_end, 1e-5);
        assert_eq!(cfg.checkpoint_schedule(), vec![200, 1000, 2000]);
        assert_eq!(cfg.layout(), LayoutMode::ParallelCanvas);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let toml_text = r#"
modality = "edges"
dataset = "d"
backbone = "b"
steps = 10
rank = 4
seed = 1
out_dir = "o"
misspelled_key = 3
"#;
        assert!(toml::from_str::<TrainConfig>(toml_text).is_err());
    }

    #[test]
    fn increasing_lr_schedule_rejected() {
        let toml_text = r#"
modality = "edges"
dataset = "d"
backbone = "b"
steps = 10
rank = 4
seed = 1
out_dir = "o"
lr_start = 1e-5
lr_end = 1e-4
"#;
        let cfg: TrainConfig = toml::from_str(toml_text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn pretrain_defaults_build_a_valid_model() {
        let cfg: PretrainConfig = toml::from_str(
            r#"
dataset = "data/train"
steps = 100
seed = 1
out = "runs/backbone.avct"
"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        let mc = cfg.model_config();
        assert_eq!(mc.width, 48);
        assert_eq!(mc.head_dim() % 6, 0);
    }
}
