//! The frozen miniature diffusion transformer: per-token timestep
//! conditioning via AdaLN (zero-initialized gates), three-axis rotary
//! positions, joint self-attention over generation + reference tokens
//! with strength-modulated reference edges, and an audio stream with
//! video-to-audio cross-attention.
//!
//! Parameters live in a flat name -> tensor map; the names double as
//! the module registry that LoRA target patterns match against.

pub mod attention;
pub mod timestep;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::codec::PatchSize;
use crate::error::{invalid, Result};
use crate::rng::SeedRng;
use crate::rope;
use crate::sequence::{StrengthField, TokenSequence};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use attention::{multi_head_attention, strength_bias, LinearRef, MhaRefs};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    /// Number of (video block, audio block) layers.
    pub depth: usize,
    /// Token feature width D.
    pub width: usize,
    pub heads: usize,
    pub patch: PatchSize,
    /// Audio feature dim F per raw audio frame.
    pub audio_feat_dim: usize,
    /// Audio frames grouped into one audio token.
    pub audio_group: usize,
    /// Fixed ratio Ta/T between audio and video frames.
    pub audio_frames_per_video_frame: usize,
    /// Condition-id vocabulary (id 0 is the unconditional null id).
    pub cond_vocab: usize,
    /// Feed-forward hidden multiple.
    pub ff_mult: usize,
    pub rope_base: f32,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(invalid("ModelConfig", "depth must be at least 1"));
        }
        if self.width == 0 || self.width % self.heads != 0 {
            return Err(invalid(
                "ModelConfig",
                format!("width {} not divisible by {} heads", self.width, self.heads),
            ));
        }
        if (self.width / self.heads) % 6 != 0 {
            return Err(invalid(
                "ModelConfig",
                format!(
                    "head dim {} must be divisible by 6 (three rotary axes)",
                    self.width / self.heads
                ),
            ));
        }
        if self.patch.t == 0 || self.patch.h == 0 || self.patch.w == 0 {
            return Err(invalid("ModelConfig", "patch sizes must be positive"));
        }
        if self.audio_feat_dim == 0 || self.audio_group == 0 {
            return Err(invalid("ModelConfig", "audio dims must be positive"));
        }
        if self.audio_frames_per_video_frame == 0 {
            return Err(invalid("ModelConfig", "audio/video frame ratio must be positive"));
        }
        if self.cond_vocab < 2 {
            return Err(invalid("ModelConfig", "cond vocab needs the null id plus one"));
        }
        if self.ff_mult == 0 {
            return Err(invalid("ModelConfig", "ff_mult must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    /// Flattened video token feature length.
    pub fn video_token_dim(&self) -> usize {
        self.patch.video_dim()
    }

    /// Flattened audio token feature length.
    pub fn audio_token_dim(&self) -> usize {
        self.audio_group * self.audio_feat_dim
    }

    /// Time coordinate of audio token `i` in video-token units.
    pub fn audio_token_time(&self, i: usize) -> f32 {
        (i * self.audio_group) as f32
            / (self.audio_frames_per_video_frame * self.patch.t) as f32
    }
}

/// A LoRA-targetable linear module.
#[derive(Debug, Clone)]
pub struct ModuleInfo {
    pub name: String,
    /// Family key matched by target patterns: one of
    /// `v.sa`, `v.ff`, `a.sa`, `a.ca_v2a`, `a.ff`.
    pub family: &'static str,
    pub out_dim: usize,
    pub in_dim: usize,
}

/// Every linear module adapters may attach to, in registry order.
pub fn adaptable_modules(cfg: &ModelConfig) -> Vec<ModuleInfo> {
    let d = cfg.width;
    let h = cfg.ff_mult * d;
    let mut out = Vec::new();
    for i in 0..cfg.depth {
        for proj in ["q", "k", "v", "out"] {
            out.push(ModuleInfo {
                name: format!("blocks.{i}.v.sa.{proj}"),
                family: "v.sa",
                out_dim: d,
                in_dim: d,
            });
        }
        out.push(ModuleInfo {
            name: format!("blocks.{i}.v.ff.fc1"),
            family: "v.ff",
            out_dim: h,
            in_dim: d,
        });
        out.push(ModuleInfo {
            name: format!("blocks.{i}.v.ff.fc2"),
            family: "v.ff",
            out_dim: d,
            in_dim: h,
        });
        for proj in ["q", "k", "v", "out"] {
            out.push(ModuleInfo {
                name: format!("blocks.{i}.a.sa.{proj}"),
                family: "a.sa",
                out_dim: d,
                in_dim: d,
            });
        }
        for proj in ["q", "k", "v", "out"] {
            out.push(ModuleInfo {
                name: format!("blocks.{i}.a.ca_v2a.{proj}"),
                family: "a.ca_v2a",
                out_dim: d,
                in_dim: d,
            });
        }
        out.push(ModuleInfo {
            name: format!("blocks.{i}.a.ff.fc1"),
            family: "a.ff",
            out_dim: h,
            in_dim: d,
        });
        out.push(ModuleInfo {
            name: format!("blocks.{i}.a.ff.fc2"),
            family: "a.ff",
            out_dim: d,
            in_dim: h,
        });
    }
    out
}

enum Init {
    /// N(0, 1/sqrt(fan_in)) weights.
    Gaussian(usize),
    Zero,
    /// Small-sigma embedding rows.
    Embedding,
}

fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.width;
    let h = cfg.ff_mult * d;
    let vd = cfg.video_token_dim();
    let ad = cfg.audio_token_dim();
    let mut specs: Vec<(String, Vec<usize>, Init)> = Vec::new();
    fn linear(
        specs: &mut Vec<(String, Vec<usize>, Init)>,
        name: &str,
        out_dim: usize,
        in_dim: usize,
        init: Init,
    ) {
        specs.push((format!("{name}.w"), vec![out_dim, in_dim], init));
        specs.push((format!("{name}.b"), vec![out_dim], Init::Zero));
    }
    linear(&mut specs, "video_in", d, vd, Init::Gaussian(vd));
    linear(&mut specs, "audio_in", d, ad, Init::Gaussian(ad));
    linear(&mut specs, "time_mlp.fc1", d, d, Init::Gaussian(d));
    linear(&mut specs, "time_mlp.fc2", d, d, Init::Gaussian(d));
    specs.push(("cond_embed".into(), vec![cfg.cond_vocab, d], Init::Embedding));
    for i in 0..cfg.depth {
        linear(&mut specs, &format!("blocks.{i}.v.mod"), 6 * d, d, Init::Zero);
        for proj in ["q", "k", "v", "out"] {
            linear(&mut specs, &format!("blocks.{i}.v.sa.{proj}"), d, d, Init::Gaussian(d));
        }
        linear(&mut specs, &format!("blocks.{i}.v.ff.fc1"), h, d, Init::Gaussian(d));
        linear(&mut specs, &format!("blocks.{i}.v.ff.fc2"), d, h, Init::Gaussian(h));
        linear(&mut specs, &format!("blocks.{i}.a.mod"), 9 * d, d, Init::Zero);
        for proj in ["q", "k", "v", "out"] {
            linear(&mut specs, &format!("blocks.{i}.a.sa.{proj}"), d, d, Init::Gaussian(d));
            linear(&mut specs, &format!("blocks.{i}.a.ca_v2a.{proj}"), d, d, Init::Gaussian(d));
        }
        linear(&mut specs, &format!("blocks.{i}.a.ff.fc1"), h, d, Init::Gaussian(d));
        linear(&mut specs, &format!("blocks.{i}.a.ff.fc2"), d, h, Init::Gaussian(h));
    }
    linear(&mut specs, "video_out.mod", 2 * d, d, Init::Zero);
    linear(&mut specs, "video_out.proj", vd, d, Init::Zero);
    linear(&mut specs, "audio_out.mod", 2 * d, d, Init::Zero);
    linear(&mut specs, "audio_out.proj", ad, d, Init::Zero);
    specs
}

/// Low-rank adapter for one linear module: `down: [r, in]`,
/// `up: [out, r]`, and the folded multiplier `lora_strength * alpha / r`.
#[derive(Debug, Clone)]
pub struct ModuleAdapter {
    pub down: Tensor,
    pub up: Tensor,
    pub scale: f32,
}

/// Module name -> adapter, as consumed by the forward pass.
pub type AdapterMap = BTreeMap<String, ModuleAdapter>;

/// Which leaves receive gradients in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainScope {
    Inference,
    /// All backbone parameters are trainable (adapters, if any, frozen).
    Backbone,
    /// Only adapter parameters are trainable; the backbone is frozen.
    Adapters,
}

/// The backbone: immutable config plus the named parameter store.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
}

impl Backbone {
    /// Deterministic random initialization.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeedRng::new(seed);
        let mut params = BTreeMap::new();
        for (name, shape, init) in param_specs(&cfg) {
            let t = match init {
                Init::Gaussian(fan_in) => {
                    rng.normal_tensor_scaled(&shape, 1.0 / crate::mathf::sqrt(fan_in as f32))
                }
                Init::Zero => Tensor::zeros(shape),
                Init::Embedding => rng.normal_tensor_scaled(&shape, 0.02),
            };
            params.insert(name, t);
        }
        Ok(Backbone { cfg, params })
    }

    /// Rebuild from a parameter map (e.g. a loaded checkpoint),
    /// verifying the shapes against the config.
    pub fn from_params(cfg: ModelConfig, params: BTreeMap<String, Tensor>) -> Result<Self> {
        cfg.validate()?;
        let specs = param_specs(&cfg);
        if specs.len() != params.len() {
            return Err(invalid(
                "Backbone::from_params",
                format!("expected {} tensors, got {}", specs.len(), params.len()),
            ));
        }
        for (name, shape, _) in &specs {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(invalid(
                        "Backbone::from_params",
                        format!("{name}: shape {:?}, expected {shape:?}", t.shape()),
                    ))
                }
                None => {
                    return Err(invalid(
                        "Backbone::from_params",
                        format!("missing parameter {name}"),
                    ))
                }
            }
        }
        Ok(Backbone { cfg, params })
    }

    /// Per-token conditioning vector: timestep sinusoid through the
    /// 2-layer MLP, plus the condition-id embedding.
    pub fn modulation_base(
        &self,
        tape: &mut Tape,
        timesteps: &[f32],
        cond_id: usize,
    ) -> Result<Var> {
        let vars = self.register_params(tape, TrainScope::Inference);
        self.modulation_base_inner(tape, &vars, timesteps, cond_id)
    }

    fn modulation_base_inner(
        &self,
        tape: &mut Tape,
        vars: &BTreeMap<String, Var>,
        timesteps: &[f32],
        cond_id: usize,
    ) -> Result<Var> {
        if cond_id >= self.cfg.cond_vocab {
            return Err(invalid(
                "forward",
                format!("cond id {cond_id} outside vocab {}", self.cfg.cond_vocab),
            ));
        }
        for &t in timesteps {
            if !(0.0..=1.0).contains(&t) {
                return Err(invalid("forward", format!("timestep {t} outside [0, 1]")));
            }
        }
        let emb = timestep::timestep_embedding(timesteps, self.cfg.width);
        let emb = tape.constant(emb);
        let l = |vars: &BTreeMap<String, Var>, name: &str| LinearRef {
            w: vars[&format!("{name}.w")],
            b: vars[&format!("{name}.b")],
            adapter: None,
        };
        let h = attention::apply_linear(tape, emb, &l(vars, "time_mlp.fc1"))?;
        let h = tape.silu(h)?;
        let mut c = attention::apply_linear(tape, h, &l(vars, "time_mlp.fc2"))?;
        let row = tape.index_select_rows(vars["cond_embed"], &[cond_id])?;
        c = tape.add(c, row)?;
        Ok(c)
    }

    fn register_params(&self, tape: &mut Tape, scope: TrainScope) -> BTreeMap<String, Var> {
        let requires = matches!(scope, TrainScope::Backbone);
        self.params
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t.clone(), requires)))
            .collect()
    }

    /// Run the joint forward pass, returning per-token velocity
    /// predictions at the generation positions of each stream.
    pub fn forward(
        &self,
        tape: &mut Tape,
        adapters: &AdapterMap,
        spec: ForwardSpec<'_>,
    ) -> Result<ForwardOutput> {
        spec.video.validate()?;
        spec.audio.validate()?;
        let cfg = &self.cfg;
        if spec.video.is_empty() {
            return Err(invalid("forward", "video sequence is empty"));
        }
        if spec.video.feats.shape()[1] != cfg.video_token_dim() {
            return Err(invalid(
                "forward",
                format!(
                    "video token dim {} does not match config {}",
                    spec.video.feats.shape()[1],
                    cfg.video_token_dim()
                ),
            ));
        }
        if spec.audio.feats.shape()[1] != cfg.audio_token_dim() && !spec.audio.is_empty() {
            return Err(invalid("forward", "audio token dim does not match config"));
        }

        let vars = self.register_params(tape, spec.scope);
        let mut trainable_vars: BTreeMap<String, Var> = BTreeMap::new();
        if matches!(spec.scope, TrainScope::Backbone) {
            trainable_vars.extend(vars.iter().map(|(k, v)| (k.clone(), *v)));
        }

        // Adapter leaves.
        let adapter_requires = matches!(spec.scope, TrainScope::Adapters);
        let mut adapter_vars: BTreeMap<String, (Var, Var, f32)> = BTreeMap::new();
        for (name, ad) in adapters {
            let down = tape.leaf(ad.down.clone(), adapter_requires);
            let up = tape.leaf(ad.up.clone(), adapter_requires);
            adapter_vars.insert(name.clone(), (down, up, ad.scale));
            if adapter_requires {
                trainable_vars.insert(format!("{name}.lora_a"), down);
                trainable_vars.insert(format!("{name}.lora_b"), up);
            }
        }

        let lin = |vars: &BTreeMap<String, Var>,
                   adapter_vars: &BTreeMap<String, (Var, Var, f32)>,
                   name: &str| LinearRef {
            w: vars[&format!("{name}.w")],
            b: vars[&format!("{name}.b")],
            adapter: adapter_vars.get(name).copied(),
        };
        let mha_refs = |vars: &BTreeMap<String, Var>,
                        adapter_vars: &BTreeMap<String, (Var, Var, f32)>,
                        prefix: &str| MhaRefs {
            q: lin(vars, adapter_vars, &format!("{prefix}.q")),
            k: lin(vars, adapter_vars, &format!("{prefix}.k")),
            v: lin(vars, adapter_vars, &format!("{prefix}.v")),
            out: lin(vars, adapter_vars, &format!("{prefix}.out")),
        };

        // Conditioning and rotary phases.
        let c_video = self.modulation_base_inner(tape, &vars, &spec.video.timesteps, spec.cond_id)?;
        let dh = cfg.head_dim();
        let (cos_v, sin_v) = rope::phase_tables(&spec.video.coords, dh, cfg.rope_base)?;
        let strengths_v = spec
            .video_strength
            .resolve(spec.video.gen_indices().len())?;
        let (bias_v, mask_v) =
            strength_bias(&spec.video.segments, &spec.video.segments, &strengths_v);

        let has_audio = !spec.audio.is_empty();
        let (c_audio, cos_a, sin_a, strengths_a) = if has_audio {
            let c = self.modulation_base_inner(tape, &vars, &spec.audio.timesteps, spec.cond_id)?;
            let (cos_a, sin_a) = rope::phase_tables(&spec.audio.coords, dh, cfg.rope_base)?;
            let s = spec.audio_strength.resolve(spec.audio.gen_indices().len())?;
            (Some(c), cos_a, sin_a, s)
        } else {
            (None, Vec::new(), Vec::new(), Vec::new())
        };

        // Input projections.
        let video_feats = match spec.video_feats_var {
            Some(v) => v,
            None => tape.constant(spec.video.feats.clone()),
        };
        let mut xv =
            attention::apply_linear(tape, video_feats, &lin(&vars, &adapter_vars, "video_in"))?;
        let mut xa = if has_audio {
            let audio_feats = match spec.audio_feats_var {
                Some(v) => v,
                None => tape.constant(spec.audio.feats.clone()),
            };
            Some(attention::apply_linear(
                tape,
                audio_feats,
                &lin(&vars, &adapter_vars, "audio_in"),
            )?)
        } else {
            None
        };

        for i in 0..cfg.depth {
            // Video block: modulated self-attention + feed-forward.
            let m6 = attention::apply_linear(
                tape,
                c_video,
                &lin(&vars, &adapter_vars, &format!("blocks.{i}.v.mod")),
            )?;
            let ch = chunk(tape, m6, 6, cfg.width)?;
            let sa_in = modulated_norm(tape, xv, ch[0], ch[1])?;
            let refs = mha_refs(&vars, &adapter_vars, &format!("blocks.{i}.v.sa"));
            let attn = multi_head_attention(
                tape,
                sa_in,
                sa_in,
                &refs,
                cfg.heads,
                (&cos_v, &sin_v),
                (&cos_v, &sin_v),
                bias_v.as_ref(),
                mask_v.as_deref(),
            )?;
            let gated = tape.mul(ch[2], attn)?;
            xv = tape.add(xv, gated)?;

            let ff_in = modulated_norm(tape, xv, ch[3], ch[4])?;
            let h = attention::apply_linear(
                tape,
                ff_in,
                &lin(&vars, &adapter_vars, &format!("blocks.{i}.v.ff.fc1")),
            )?;
            let h = tape.silu(h)?;
            let h = attention::apply_linear(
                tape,
                h,
                &lin(&vars, &adapter_vars, &format!("blocks.{i}.v.ff.fc2")),
            )?;
            let gated = tape.mul(ch[5], h)?;
            xv = tape.add(xv, gated)?;

            // Audio block: self-attention, video->audio cross-attention,
            // feed-forward.
            if let Some(xa_cur) = xa {
                let c_a = c_audio.expect("audio conditioning present");
                let m9 = attention::apply_linear(
                    tape,
                    c_a,
                    &lin(&vars, &adapter_vars, &format!("blocks.{i}.a.mod")),
                )?;
                let ch = chunk(tape, m9, 9, cfg.width)?;

                let (bias_a, mask_a) =
                    strength_bias(&spec.audio.segments, &spec.audio.segments, &strengths_a);
                let sa_in = modulated_norm(tape, xa_cur, ch[0], ch[1])?;
                let refs = mha_refs(&vars, &adapter_vars, &format!("blocks.{i}.a.sa"));
                let attn = multi_head_attention(
                    tape,
                    sa_in,
                    sa_in,
                    &refs,
                    cfg.heads,
                    (&cos_a, &sin_a),
                    (&cos_a, &sin_a),
                    bias_a.as_ref(),
                    mask_a.as_deref(),
                )?;
                let gated = tape.mul(ch[2], attn)?;
                let mut xa_new = tape.add(xa_cur, gated)?;

                let (bias_ca, mask_ca) =
                    strength_bias(&spec.audio.segments, &spec.video.segments, &strengths_a);
                let ca_in = modulated_norm(tape, xa_new, ch[3], ch[4])?;
                let kv = tape.layer_norm_lastdim(xv, 1e-5)?;
                let refs = mha_refs(&vars, &adapter_vars, &format!("blocks.{i}.a.ca_v2a"));
                let attn = multi_head_attention(
                    tape,
                    ca_in,
                    kv,
                    &refs,
                    cfg.heads,
                    (&cos_a, &sin_a),
                    (&cos_v, &sin_v),
                    bias_ca.as_ref(),
                    mask_ca.as_deref(),
                )?;
                let gated = tape.mul(ch[5], attn)?;
                xa_new = tape.add(xa_new, gated)?;

                let ff_in = modulated_norm(tape, xa_new, ch[6], ch[7])?;
                let h = attention::apply_linear(
                    tape,
                    ff_in,
                    &lin(&vars, &adapter_vars, &format!("blocks.{i}.a.ff.fc1")),
                )?;
                let h = tape.silu(h)?;
                let h = attention::apply_linear(
                    tape,
                    h,
                    &lin(&vars, &adapter_vars, &format!("blocks.{i}.a.ff.fc2")),
                )?;
                let gated = tape.mul(ch[8], h)?;
                xa = Some(tape.add(xa_new, gated)?);
            }
        }

        // Output heads; only generation rows are returned.
        let m2 =
            attention::apply_linear(tape, c_video, &lin(&vars, &adapter_vars, "video_out.mod"))?;
        let ch = chunk(tape, m2, 2, cfg.width)?;
        let h = modulated_norm(tape, xv, ch[0], ch[1])?;
        let out_v = attention::apply_linear(tape, h, &lin(&vars, &adapter_vars, "video_out.proj"))?;
        let video_gen = tape.index_select_rows(out_v, &spec.video.gen_indices())?;

        let audio_gen = if let Some(xa_cur) = xa {
            let c_a = c_audio.expect("audio conditioning present");
            let m2 =
                attention::apply_linear(tape, c_a, &lin(&vars, &adapter_vars, "audio_out.mod"))?;
            let ch = chunk(tape, m2, 2, cfg.width)?;
            let h = modulated_norm(tape, xa_cur, ch[0], ch[1])?;
            let out_a =
                attention::apply_linear(tape, h, &lin(&vars, &adapter_vars, "audio_out.proj"))?;
            tape.index_select_rows(out_a, &spec.audio.gen_indices())?
        } else {
            tape.constant(Tensor::zeros(vec![0, cfg.audio_token_dim()]))
        };

        Ok(ForwardOutput {
            video_gen,
            audio_gen,
            trainable_vars,
        })
    }
}

/// Inputs to one forward pass.
pub struct ForwardSpec<'a> {
    pub video: &'a TokenSequence,
    pub audio: &'a TokenSequence,
    pub cond_id: usize,
    pub video_strength: &'a StrengthField,
    pub audio_strength: &'a StrengthField,
    /// Optional pre-registered feature vars (for gradient checks
    /// against inputs); when absent, features come from the sequences.
    pub video_feats_var: Option<Var>,
    pub audio_feats_var: Option<Var>,
    pub scope: TrainScope,
}

impl<'a> ForwardSpec<'a> {
    pub fn inference(
        video: &'a TokenSequence,
        audio: &'a TokenSequence,
        cond_id: usize,
        strength: &'a StrengthField,
    ) -> Self {
        ForwardSpec {
            video,
            audio,
            cond_id,
            video_strength: strength,
            audio_strength: strength,
            video_feats_var: None,
            audio_feats_var: None,
            scope: TrainScope::Inference,
        }
    }
}

/// Velocity predictions at generation positions plus the vars of every
/// trainable leaf (for gradient extraction).
pub struct ForwardOutput {
    pub video_gen: Var,
    /// `[0, audio_dim]` when the audio sequence is empty.
    pub audio_gen: Var,
    pub trainable_vars: BTreeMap<String, Var>,
}

/// `LN(x) * (1 + scale) + shift`, all per-token.
fn modulated_norm(tape: &mut Tape, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let ln = tape.layer_norm_lastdim(x, 1e-5)?;
    let one_plus = tape.add_scalar(scale, 1.0)?;
    let h = tape.mul(ln, one_plus)?;
    tape.add(h, shift)
}

/// Split `[n, k*d]` into `k` chunks of `[n, d]`.
fn chunk(tape: &mut Tape, x: Var, k: usize, d: usize) -> Result<Vec<Var>> {
    let n = tape.shape(x)[0];
    let r = tape.reshape(x, vec![n, k, d])?;
    let p = tape.permute(r, &[1, 0, 2])?;
    (0..k)
        .map(|i| {
            let row = tape.index_select_rows(p, &[i])?;
            tape.reshape(row, vec![n, d])
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::sequence::Segment;

    pub fn tiny_config() -> ModelConfig {
        ModelConfig {
            depth: 2,
            width: 24,
            heads: 2,
            patch: PatchSize::new(1, 2, 2),
            audio_feat_dim: 4,
            audio_group: 2,
            audio_frames_per_video_frame: 2,
            cond_vocab: 4,
            ff_mult: 2,
            rope_base: 100.0,
        }
    }

    pub fn video_seq(
        cfg: &ModelConfig,
        n_gen: usize,
        n_ref: usize,
        t: f32,
        seed: u64,
    ) -> TokenSequence {
        let mut rng = SeedRng::new(seed);
        let n = n_gen + n_ref;
        let dim = cfg.video_token_dim();
        let mut segments = vec![Segment::GenVideo; n_gen];
        segments.extend(vec![Segment::RefVideo; n_ref]);
        let mut timesteps = vec![t; n_gen];
        timesteps.extend(vec![0.0; n_ref]);
        let coords = (0..n)
            .map(|i| [0.0, (i % 4) as f32, (i / 4) as f32])
            .collect();
        TokenSequence {
            feats: rng.normal_tensor(&[n, dim]),
            coords,
            timesteps,
            segments,
        }
    }

    pub fn audio_seq(
        cfg: &ModelConfig,
        n_gen: usize,
        n_ref: usize,
        t: f32,
        seed: u64,
    ) -> TokenSequence {
        let mut rng = SeedRng::new(seed);
        let n = n_gen + n_ref;
        let dim = cfg.audio_token_dim();
        let mut segments = vec![Segment::GenAudio; n_gen];
        segments.extend(vec![Segment::RefAudio; n_ref]);
        let mut timesteps = vec![t; n_gen];
        timesteps.extend(vec![0.0; n_ref]);
        let coords = (0..n)
            .map(|i| [(i % n_gen.max(1)) as f32, 0.0, 0.0])
            .collect();
        TokenSequence {
            feats: rng.normal_tensor(&[n, dim]),
            coords,
            timesteps,
            segments,
        }
    }

    pub fn empty_audio(cfg: &ModelConfig) -> TokenSequence {
        TokenSequence {
            feats: Tensor::zeros(vec![0, cfg.audio_token_dim()]),
            coords: Vec::new(),
            timesteps: Vec::new(),
            segments: Vec::new(),
        }
    }

    /// Backbone with the zero-initialized modulation/output layers
    /// replaced by small random values, so forward outputs are
    /// non-trivial without a training run.
    pub fn warmed_backbone(cfg: ModelConfig, seed: u64) -> Backbone {
        let mut model = Backbone::init(cfg, seed).unwrap();
        let mut rng = SeedRng::new(seed.wrapping_add(0x5EED));
        for t in model.params.values_mut() {
            if t.data().iter().all(|&v| v == 0.0) {
                let shape = t.shape().to_vec();
                *t = rng.normal_tensor_scaled(&shape, 0.2);
            }
        }
        model
    }
}
