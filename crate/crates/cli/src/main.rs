//! Command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure,
//! 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use avcanvas_cli::ablate::{ablate, Axis};
use avcanvas_cli::bench::bench_grid;
use avcanvas_cli::configs::{PretrainConfig, TrainConfig};
use avcanvas_cli::dataset::generate;
use avcanvas_cli::eval::{evaluate, EvalSpec};
use avcanvas_cli::sample_run::{run_sample, SampleSpec};
use avcanvas_cli::train::{pretrain, train};
use avcanvas_cli::{AppError, Result};
use avcanvas_core::canvas::{ControlKind, LayoutMode};
use avcanvas_core::codec::PatchSize;
use avcanvas_core::synth::SynthConfig;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "avcanvas",
    about = "Parallel-canvas control adapters for a miniature joint audio-visual diffusion transformer",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic dataset.
    GenData(GenDataArgs),
    /// Train the backbone itself (unconditional joint denoising).
    Pretrain(ConfigArg),
    /// Train a control adapter on a frozen backbone.
    Train(ConfigArg),
    /// Generate one sample from a canvas directory.
    Sample(SampleArgs),
    /// Evaluate a checkpoint on a held-out dataset.
    Eval(EvalArgs),
    /// Sweep one training axis and emit a comparison table.
    Ablate(AblateArgs),
    /// Benchmark joint attention across canvas downscale factors.
    BenchGrid(BenchArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Control modality: depth, edges, inpainting, tracks,
    /// shifted_view, composite, audio_intensity, talking_boxes.
    #[arg(long)]
    modality: String,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Target dims as TxHxW.
    #[arg(long, default_value = "8x32x32")]
    dims: String,
    /// Audio frames per video frame.
    #[arg(long, default_value_t = 4)]
    audio_ratio: usize,
    #[arg(long, default_value_t = 8)]
    audio_feat_dim: usize,
    /// Override the modality's canvas downscale factor.
    #[arg(long)]
    downscale: Option<usize>,
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    /// Adapter checkpoint (or a backbone checkpoint for base sampling).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Backbone checkpoint; required when --checkpoint is an adapter.
    #[arg(long)]
    backbone: Option<PathBuf>,
    /// Second adapter composed with the first (disjoint modules).
    #[arg(long)]
    extra_checkpoint: Option<PathBuf>,
    /// Sample directory holding sample.json and canvas media.
    #[arg(long)]
    canvas: Option<PathBuf>,
    /// Target dims TxHxW when sampling without a canvas.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    strength: f32,
    #[arg(long)]
    lora_strength: Option<f32>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    cfg_scale: f32,
    #[arg(long)]
    layout_mode: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Adapter checkpoint (or a backbone checkpoint for base eval).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    backbone: Option<PathBuf>,
    #[arg(long)]
    extra_checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    strength: f32,
    #[arg(long)]
    lora_strength: Option<f32>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    cfg_scale: f32,
    #[arg(long)]
    layout_mode: Option<String>,
    /// Directory for report.csv / report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// One of: rank, steps, layout_mode, downscale.
    #[arg(long)]
    axis: String,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to <out_dir>/ablate_<axis>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "8x32x32")]
    dims: String,
    #[arg(long, default_value = "1x4x4")]
    patch: String,
    /// Comma-separated downscale factors.
    #[arg(long, default_value = "1,2,4")]
    d: String,
    #[arg(long, default_value_t = 48)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Optional CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_triple(s: &str, what: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(AppError::config(format!("{what} must look like AxBxC, got {s:?}")));
    }
    let p: Vec<usize> = parts
        .iter()
        .map(|t| t.parse().map_err(|e| AppError::config(format!("{what}: {e}"))))
        .collect::<Result<_>>()?;
    Ok((p[0], p[1], p[2]))
}

fn resolve_model_paths(
    checkpoint: &PathBuf,
    backbone: &Option<PathBuf>,
    extra: &Option<PathBuf>,
) -> Result<(PathBuf, Vec<PathBuf>)> {
    use avcanvas_cli::formats::checkpoint::{peek_meta, CheckpointMeta};
    match peek_meta(checkpoint)? {
        CheckpointMeta::Backbone { .. } => {
            if extra.is_some() {
                return Err(AppError::config(
                    "--extra-checkpoint requires an adapter as --checkpoint",
                ));
            }
            Ok((checkpoint.clone(), vec![]))
        }
        CheckpointMeta::Lora { .. } => {
            let bb = backbone.clone().ok_or_else(|| {
                AppError::config("--backbone is required when --checkpoint is an adapter")
            })?;
            let mut loras = vec![checkpoint.clone()];
            if let Some(e) = extra {
                loras.push(e.clone());
            }
            Ok((bb, loras))
        }
    }
}

fn parse_layout(s: &Option<String>) -> Result<Option<LayoutMode>> {
    match s {
        None => Ok(None),
        Some(text) => Ok(Some(LayoutMode::parse(text).map_err(AppError::from)?)),
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(args) => {
            let dims = parse_triple(&args.dims, "dims")?;
            let kind = ControlKind::parse(&args.modality).map_err(AppError::from)?;
            let synth = SynthConfig {
                dims,
                audio_ratio: args.audio_ratio,
                audio_feat_dim: args.audio_feat_dim,
            };
            let manifest = generate(&args.out, kind, args.count, args.seed, &synth, args.downscale)?;
            println!(
                "wrote {} {} samples to {}",
                manifest.count,
                manifest.modality,
                args.out.display()
            );
            Ok(())
        }
        Command::Pretrain(args) => {
            let cfg = PretrainConfig::load(&args.config)?;
            let out = pretrain(&cfg)?;
            println!("wrote backbone checkpoint to {}", out.display());
            Ok(())
        }
        Command::Train(args) => {
            let cfg = TrainConfig::load(&args.config)?;
            let outcome = train(&cfg)?;
            println!(
                "trained {} steps (final loss {:.6}); checkpoints: {}",
                cfg.steps,
                outcome.final_loss,
                outcome
                    .checkpoints
                    .iter()
                    .map(|(s, _)| s.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            Ok(())
        }
        Command::Sample(args) => {
            let (backbone, loras) =
                resolve_model_paths(&args.checkpoint, &args.backbone, &args.extra_checkpoint)?;
            let dims = match &args.dims {
                Some(s) => Some(parse_triple(s, "dims")?),
                None => None,
            };
            let spec = SampleSpec {
                backbone,
                loras,
                canvas: args.canvas,
                dims,
                strength: args.strength,
                lora_strength: args.lora_strength,
                seed: args.seed,
                steps: args.steps,
                cfg_scale: args.cfg_scale,
                out: args.out,
                layout_override: parse_layout(&args.layout_mode)?,
            };
            let out = run_sample(&spec)?;
            println!("wrote sample to {}", out.display());
            Ok(())
        }
        Command::Eval(args) => {
            let (backbone, loras) =
                resolve_model_paths(&args.checkpoint, &args.backbone, &args.extra_checkpoint)?;
            let spec = EvalSpec {
                backbone,
                loras,
                dataset: args.dataset,
                strength: args.strength,
                lora_strength: args.lora_strength,
                seed: args.seed,
                steps: args.steps,
                cfg_scale: args.cfg_scale,
                layout_override: parse_layout(&args.layout_mode)?,
                out: args.out,
            };
            let report = evaluate(&spec)?;
            print!("{}", report.to_csv());
            println!(
                "# modality={} strength={} n={} primary={}",
                report.modality,
                report.strength,
                report.summary.count,
                report
                    .primary_metric()
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_else(|| "n/a".into())
            );
            Ok(())
        }
        Command::Ablate(args) => {
            let axis = Axis::parse(&args.axis)?;
            let cfg = TrainConfig::load(&args.config)?;
            let out = args
                .out
                .unwrap_or_else(|| cfg.out_dir.join(format!("ablate_{}", args.axis)));
            let table = ablate(axis, &cfg, &out)?;
            print!("{}", table.to_csv());
            Ok(())
        }
        Command::BenchGrid(args) => {
            let dims = parse_triple(&args.dims, "dims")?;
            let patch = parse_triple(&args.patch, "patch")?;
            let d_values: Vec<usize> = args
                .d
                .split(',')
                .map(|t| t.trim().parse().map_err(|e| AppError::config(format!("d: {e}"))))
                .collect::<Result<_>>()?;
            let table = bench_grid(
                dims,
                PatchSize::new(patch.0, patch.1, patch.2),
                &d_values,
                args.width,
                args.heads,
                args.reps,
            )?;
            print!("{}", table.to_csv());
            println!("# {}", table.reference_speedup_note);
            if let Some(out) = args.out {
                std::fs::write(&out, table.to_csv()).map_err(|e| AppError::io(&out, e))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
