//! Rectified-flow noising, the masked training objective, and the
//! Euler sampler with per-token timesteps and clean reference tokens.
//!
//! The flow is the linear path `x_t = (1 - t) x0 + t eps` with velocity
//! target `v = eps - x0`; sampling integrates `x <- x + (t' - t) v`
//! down a strictly decreasing grid from 1 to 0, so a model that outputs
//! the exact target recovers `x0`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::canvas::{assemble_audio, assemble_video, Canvas, LayoutMode};
use crate::codec::{audio_untokenize, unpatchify, AudioTokens, PatchSize, VideoTokens};
use crate::error::{invalid, Error, Result};
use crate::media::{AudioFrames, VideoClip};
use crate::model::{AdapterMap, Backbone, ForwardSpec, TrainScope};
use crate::rng::SeedRng;
use crate::sequence::{StrengthField, TokenSequence};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Sampling grid: `steps` Euler steps over `steps + 1` strictly
/// decreasing timesteps from 1 to 0.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSchedule {
    pub steps: usize,
}

pub const DEFAULT_SAMPLE_STEPS: usize = 16;

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            steps: DEFAULT_SAMPLE_STEPS,
        }
    }
}

impl NoiseSchedule {
    pub fn grid(&self) -> Vec<f32> {
        let s = self.steps;
        (0..=s).map(|i| 1.0 - i as f32 / s as f32).collect()
    }
}

/// Classifier-free guidance configuration; scale 1 disables the
/// unconditional pass entirely.
#[derive(Debug, Clone, Copy)]
pub struct GuidanceConfig {
    pub cfg_scale: f32,
    pub uncond_id: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            cfg_scale: 1.0,
            uncond_id: 0,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfg_scale.is_finite() && self.cfg_scale >= 0.0) {
            return Err(invalid("GuidanceConfig", "cfg scale must be >= 0"));
        }
        Ok(())
    }
}

/// Linear interpolation toward noise: `(1 - t) x0 + t eps`.
pub fn noise(x0: &Tensor, t: f32, eps: &Tensor) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid("noise", alloc::format!("t = {t} outside [0, 1]")));
    }
    if x0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch {
            op: "noise",
            lhs: x0.shape().to_vec(),
            rhs: eps.shape().to_vec(),
        });
    }
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| (1.0 - t) * x + t * e)
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// Velocity target of the linear path: `eps - x0`.
pub fn velocity_target(x0: &Tensor, eps: &Tensor) -> Result<Tensor> {
    if x0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch {
            op: "velocity_target",
            lhs: x0.shape().to_vec(),
            rhs: eps.shape().to_vec(),
        });
    }
    let data = x0.data().iter().zip(eps.data()).map(|(&x, &e)| e - x).collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// `v_uncond + scale * (v_cond - v_uncond)`; exactly `v_cond` at scale 1.
pub fn cfg_combine(v_cond: &Tensor, v_uncond: &Tensor, scale: f32) -> Result<Tensor> {
    if v_cond.shape() != v_uncond.shape() {
        return Err(Error::ShapeMismatch {
            op: "cfg_combine",
            lhs: v_cond.shape().to_vec(),
            rhs: v_uncond.shape().to_vec(),
        });
    }
    if scale == 1.0 {
        return Ok(v_cond.clone());
    }
    let data = v_cond
        .data()
        .iter()
        .zip(v_uncond.data())
        .map(|(&c, &u)| u + scale * (c - u))
        .collect();
    Tensor::new(v_cond.shape().to_vec(), data)
}

/// Which tokens of each assembled sequence contribute to the loss.
/// Entries must be true only at generation positions.
#[derive(Debug, Clone)]
pub struct LossMask {
    pub video: Vec<bool>,
    pub audio: Vec<bool>,
}

impl LossMask {
    /// Mask covering the generation tokens of the selected streams.
    pub fn for_streams(
        video: &TokenSequence,
        audio: &TokenSequence,
        train_video: bool,
        train_audio: bool,
    ) -> Self {
        LossMask {
            video: video
                .segments
                .iter()
                .map(|s| train_video && s.is_gen())
                .collect(),
            audio: audio
                .segments
                .iter()
                .map(|s| train_audio && s.is_gen())
                .collect(),
        }
    }

    /// Reject masks that touch reference positions or nothing at all.
    pub fn validate(&self, video: &TokenSequence, audio: &TokenSequence) -> Result<()> {
        if self.video.len() != video.len() || self.audio.len() != audio.len() {
            return Err(invalid("LossMask", "mask length does not match sequence"));
        }
        for (i, &m) in self.video.iter().enumerate() {
            if m && video.segments[i].is_ref() {
                return Err(invalid("LossMask", "mask entry on a reference position"));
            }
        }
        for (i, &m) in self.audio.iter().enumerate() {
            if m && audio.segments[i].is_ref() {
                return Err(invalid("LossMask", "mask entry on a reference position"));
            }
        }
        if !self.video.iter().any(|&m| m) && !self.audio.iter().any(|&m| m) {
            return Err(invalid("LossMask", "empty mask"));
        }
        Ok(())
    }
}

/// One prepared training example: assembled sequences with noised
/// generation features, velocity targets at generation rows, and the
/// stream loss mask.
pub struct TrainItem {
    pub video_seq: TokenSequence,
    pub audio_seq: TokenSequence,
    pub cond_id: usize,
    pub target_video: Tensor,
    pub target_audio: Tensor,
    pub mask: LossMask,
}

/// Masked mean-squared velocity error on the tape. Returns the scalar
/// loss var and the trainable vars of the forward pass.
pub fn training_loss(
    tape: &mut Tape,
    model: &Backbone,
    adapters: &AdapterMap,
    item: &TrainItem,
    scope: TrainScope,
) -> Result<(Var, BTreeMap<String, Var>)> {
    item.mask.validate(&item.video_seq, &item.audio_seq)?;
    let strength = StrengthField::uniform(1.0);
    let out = model.forward(
        tape,
        adapters,
        ForwardSpec {
            video: &item.video_seq,
            audio: &item.audio_seq,
            cond_id: item.cond_id,
            video_strength: &strength,
            audio_strength: &strength,
            video_feats_var: None,
            audio_feats_var: None,
            scope,
        },
    )?;

    // Per-generation-row masks, aligned with the forward outputs.
    let gen_mask = |mask: &[bool], seq: &TokenSequence| -> Vec<f32> {
        seq.gen_indices()
            .iter()
            .map(|&i| if mask[i] { 1.0 } else { 0.0 })
            .collect()
    };
    let mv = gen_mask(&item.mask.video, &item.video_seq);
    let ma = gen_mask(&item.mask.audio, &item.audio_seq);
    let dv = model.cfg.video_token_dim();
    let da = model.cfg.audio_token_dim();
    let denom = (mv.iter().filter(|&&m| m > 0.0).count() * dv
        + ma.iter().filter(|&&m| m > 0.0).count() * da) as f32;
    if denom == 0.0 {
        return Err(invalid("training_loss", "empty mask"));
    }

    let mut stream_sum = |tape: &mut Tape, pred: Var, target: &Tensor, mask: Vec<f32>| -> Result<Option<Var>> {
        if mask.is_empty() || mask.iter().all(|&m| m == 0.0) {
            return Ok(None);
        }
        let n = mask.len();
        let tgt = tape.constant(target.clone());
        let diff = tape.sub(pred, tgt)?;
        let sq = tape.mul(diff, diff)?;
        let m = tape.constant(Tensor::new(vec![n, 1], mask)?);
        let masked = tape.mul(sq, m)?;
        Ok(Some(tape.sum_all(masked)?))
    };
    let sv = stream_sum(tape, out.video_gen, &item.target_video, mv)?;
    let sa = stream_sum(tape, out.audio_gen, &item.target_audio, ma)?;
    let total = match (sv, sa) {
        (Some(a), Some(b)) => tape.add(a, b)?,
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => unreachable!("denom > 0 guarantees a stream"),
    };
    let loss = tape.scale(total, 1.0 / denom)?;
    Ok((loss, out.trainable_vars))
}

/// Mean loss and mean gradients over a batch of prepared items.
/// Gradients are keyed by parameter name; items are processed in order
/// on fresh tapes, so results are deterministic.
pub fn batch_gradients(
    model: &Backbone,
    adapters: &AdapterMap,
    items: &[TrainItem],
    scope: TrainScope,
) -> Result<(f32, BTreeMap<String, Tensor>)> {
    if items.is_empty() {
        return Err(invalid("batch_gradients", "empty batch"));
    }
    let mut loss_sum = 0.0f64;
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    for item in items {
        let mut tape = Tape::new();
        let (loss, vars) = training_loss(&mut tape, model, adapters, item, scope)?;
        let loss_val = tape.value(loss).data()[0];
        if !loss_val.is_finite() {
            return Err(Error::NonFinite { op: "training_loss" });
        }
        loss_sum += loss_val as f64;
        let mut g = tape.backward(loss)?;
        for (name, var) in vars {
            let grad = g.take(var).expect("trainable leaf has gradient");
            match grads.get_mut(&name) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(grad.data()) {
                        *a += b;
                    }
                }
                None => {
                    grads.insert(name, grad);
                }
            }
        }
    }
    let inv = 1.0 / items.len() as f32;
    for g in grads.values_mut() {
        for v in g.data_mut() {
            *v *= inv;
        }
    }
    Ok(((loss_sum / items.len() as f64) as f32, grads))
}

/// Euler integration of a velocity field down the schedule grid.
pub fn euler_integrate<F>(x_init: Tensor, schedule: &NoiseSchedule, mut velocity: F) -> Result<Tensor>
where
    F: FnMut(&Tensor, f32) -> Result<Tensor>,
{
    if schedule.steps == 0 {
        return Err(invalid("euler_integrate", "need at least one step"));
    }
    let grid = schedule.grid();
    let mut x = x_init;
    for w in grid.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let v = velocity(&x, t)?;
        if v.shape() != x.shape() {
            return Err(Error::ShapeMismatch {
                op: "euler_integrate",
                lhs: x.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let dt = t_next - t;
        for (xi, vi) in x.data_mut().iter_mut().zip(v.data()) {
            *xi += dt * vi;
        }
    }
    Ok(x)
}

/// Everything one sampling run needs.
pub struct SampleJob<'a> {
    pub model: &'a Backbone,
    pub adapters: &'a AdapterMap,
    /// Target video dims `(T, H, W)` in pixels/frames.
    pub dims: (usize, usize, usize),
    pub video_canvas: Option<&'a Canvas>,
    pub audio_canvas: Option<&'a Canvas>,
    pub layout_mode: LayoutMode,
    pub video_strength: StrengthField,
    pub audio_strength: StrengthField,
    pub guidance: GuidanceConfig,
    pub cond_id: usize,
    pub seed: u64,
    pub schedule: NoiseSchedule,
}

/// Generated media plus the final latent token tensors.
pub struct SampleResult {
    pub video: VideoClip,
    pub audio: AudioFrames,
}

/// Deterministic Euler sampling: generation tokens start from seeded
/// standard normal noise, reference tokens stay pinned to the canvas at
/// timestep 0 for every step, and only generation tokens integrate.
pub fn euler_sample(job: &SampleJob<'_>) -> Result<SampleResult> {
    euler_sample_observed(job, |_, _, _| {})
}

/// As [`euler_sample`], invoking `observe(step, video_seq, audio_seq)`
/// with the assembled sequences of every step.
pub fn euler_sample_observed(
    job: &SampleJob<'_>,
    mut observe: impl FnMut(usize, &TokenSequence, &TokenSequence),
) -> Result<SampleResult> {
    job.guidance.validate()?;
    if job.schedule.steps == 0 {
        return Err(invalid("euler_sample", "need at least one step"));
    }
    let cfg = &job.model.cfg;
    let (t_dim, h_dim, w_dim) = job.dims;
    let patch = cfg.patch;
    let n_gen_v = crate::codec::video_token_count(job.dims, patch);
    let dv = cfg.video_token_dim();
    let ta = t_dim * cfg.audio_frames_per_video_frame;
    if ta % cfg.audio_group != 0 {
        return Err(invalid("euler_sample", "audio frames not divisible by group"));
    }
    let n_gen_a = ta / cfg.audio_group;
    let da = cfg.audio_token_dim();

    let mut rng = SeedRng::new(job.seed);
    let mut xv = rng.normal_tensor(&[n_gen_v, dv]);
    let mut xa = rng.normal_tensor(&[n_gen_a, da]);

    let grid = job.schedule.grid();
    for (step, w) in grid.windows(2).enumerate() {
        let (t, t_next) = (w[0], w[1]);
        let (video_seq, _) = assemble_video(
            &xv,
            t,
            job.dims,
            patch,
            job.video_canvas,
            job.layout_mode,
            &job.video_strength,
        )?;
        let (audio_seq, _) = assemble_audio(&xa, t, cfg, job.audio_canvas, &job.audio_strength)?;
        observe(step, &video_seq, &audio_seq);

        let run = |cond_id: usize| -> Result<(Tensor, Tensor)> {
            let mut tape = Tape::new();
            let out = job.model.forward(
                &mut tape,
                job.adapters,
                ForwardSpec {
                    video: &video_seq,
                    audio: &audio_seq,
                    cond_id,
                    video_strength: &job.video_strength,
                    audio_strength: &job.audio_strength,
                    video_feats_var: None,
                    audio_feats_var: None,
                    scope: TrainScope::Inference,
                },
            )?;
            Ok((
                tape.value(out.video_gen).clone(),
                tape.value(out.audio_gen).clone(),
            ))
        };
        let (vv, va) = run(job.cond_id)?;
        let (vv, va) = if job.guidance.cfg_scale == 1.0 {
            (vv, va)
        } else {
            let (uv, ua) = run(job.guidance.uncond_id)?;
            (
                cfg_combine(&vv, &uv, job.guidance.cfg_scale)?,
                cfg_combine(&va, &ua, job.guidance.cfg_scale)?,
            )
        };
        let dt = t_next - t;
        for (xi, vi) in xv.data_mut().iter_mut().zip(vv.data()) {
            *xi += dt * vi;
        }
        for (xi, vi) in xa.data_mut().iter_mut().zip(va.data()) {
            *xi += dt * vi;
        }
    }

    // Back to media.
    let grid_dims = [t_dim / patch.t, h_dim / patch.h, w_dim / patch.w];
    let mut coords = Vec::with_capacity(n_gen_v);
    for ti in 0..grid_dims[0] {
        for hi in 0..grid_dims[1] {
            for wi in 0..grid_dims[2] {
                coords.push([ti, hi, wi]);
            }
        }
    }
    let video = unpatchify(
        &VideoTokens {
            feats: xv,
            coords,
            grid: grid_dims,
        },
        job.dims,
        patch,
    )?;
    let audio = audio_untokenize(&AudioTokens {
        feats: xa,
        group: cfg.audio_group,
        feat_dim: cfg.audio_feat_dim,
    })?;
    Ok(SampleResult { video, audio })
}

/// Convenience: patchify a clip and return its flat token features.
pub fn video_latents(clip: &VideoClip, patch: PatchSize) -> Result<Tensor> {
    Ok(crate::codec::patchify(clip, patch)?.feats)
}

/// Convenience: tokenize audio frames into flat token features.
pub fn audio_latents(frames: &AudioFrames, group: usize) -> Result<Tensor> {
    Ok(crate::codec::audio_tokenize(frames, group)?.feats)
}

/// Prepare one training item from clean latents: noise the generation
/// tokens at `t`, assemble, and compute the velocity targets.
#[allow(clippy::too_many_arguments)]
pub fn prepare_item(
    model_cfg: &crate::model::ModelConfig,
    dims: (usize, usize, usize),
    video_x0: &Tensor,
    audio_x0: &Tensor,
    video_canvas: Option<&Canvas>,
    audio_canvas: Option<&Canvas>,
    layout_mode: LayoutMode,
    cond_id: usize,
    train_video: bool,
    train_audio: bool,
    t: f32,
    rng: &mut SeedRng,
) -> Result<TrainItem> {
    let eps_v = rng.normal_tensor(video_x0.shape());
    let eps_a = rng.normal_tensor(audio_x0.shape());
    let xv = noise(video_x0, t, &eps_v)?;
    let xa = noise(audio_x0, t, &eps_a)?;
    let strength = StrengthField::uniform(1.0);
    let (video_seq, _) = assemble_video(
        &xv,
        t,
        dims,
        model_cfg.patch,
        video_canvas,
        layout_mode,
        &strength,
    )?;
    let (audio_seq, _) = assemble_audio(&xa, t, model_cfg, audio_canvas, &strength)?;
    let mask = LossMask::for_streams(&video_seq, &audio_seq, train_video, train_audio);
    Ok(TrainItem {
        video_seq,
        audio_seq,
        cond_id,
        target_video: velocity_target(video_x0, &eps_v)?,
        target_audio: velocity_target(audio_x0, &eps_a)?,
        mask,
    })
}
