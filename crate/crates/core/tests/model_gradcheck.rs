//! End-to-end gradient verification: the full joint forward pass with
//! an attached rank-4 LoRA and a 2x-downscaled reference canvas,
//! checked against central finite differences.

use avcanvas_core::canvas::{Canvas, ControlKind, LayoutMode};
use avcanvas_core::codec::PatchSize;
use avcanvas_core::diffusion::{prepare_item, training_loss, TrainItem};
use avcanvas_core::gradcheck::finite_diff_check;
use avcanvas_core::lora::{attach, LoraSpec, LoraWeights};
use avcanvas_core::media::{AudioFrames, VideoClip};
use avcanvas_core::model::{Backbone, ForwardSpec, ModelConfig, TrainScope};
use avcanvas_core::rng::SeedRng;
use avcanvas_core::sequence::StrengthField;
use avcanvas_core::tape::Tape;
use avcanvas_core::Tensor;

fn small_config() -> ModelConfig {
    ModelConfig {
        depth: 2,
        width: 24,
        heads: 4,
        patch: PatchSize::new(1, 2, 2),
        audio_feat_dim: 4,
        audio_group: 2,
        audio_frames_per_video_frame: 2,
        cond_vocab: 4,
        ff_mult: 2,
        rope_base: 100.0,
    }
}

/// Zero-initialized layers replaced with small random values so the
/// forward pass is non-trivial without training.
fn warmed(cfg: ModelConfig, seed: u64) -> Backbone {
    let mut model = Backbone::init(cfg, seed).unwrap();
    let mut rng = SeedRng::new(seed + 999);
    for t in model.params.values_mut() {
        if t.data().iter().all(|&v| v == 0.0) {
            let shape = t.shape().to_vec();
            *t = rng.normal_tensor_scaled(&shape, 0.2);
        }
    }
    model
}

fn test_item(cfg: &ModelConfig, seed: u64) -> TrainItem {
    let dims = (2usize, 4usize, 4usize);
    let mut rng = SeedRng::new(seed);
    let x0v = rng.uniform_tensor(&[8, cfg.video_token_dim()], 0.0, 1.0);
    let x0a = rng.uniform_tensor(&[2, cfg.audio_token_dim()], -1.0, 1.0);
    let canvas_clip = VideoClip::new(
        2,
        2,
        2,
        (0..2 * 2 * 2 * 3).map(|_| rng.uniform(0.0, 1.0)).collect(),
    )
    .unwrap();
    let video_canvas = Canvas::video(canvas_clip, ControlKind::Edges, 2);
    let audio_ctrl = AudioFrames::new(4, 4, (0..16).map(|_| rng.uniform(-0.5, 0.5)).collect()).unwrap();
    let audio_canvas = Canvas::audio(audio_ctrl, ControlKind::AudioIntensity);
    let mut noise_rng = SeedRng::new(seed + 1);
    prepare_item(
        cfg,
        dims,
        &x0v,
        &x0a,
        Some(&video_canvas),
        Some(&audio_canvas),
        LayoutMode::ParallelCanvas,
        2,
        true,
        true,
        0.5,
        &mut noise_rng,
    )
    .unwrap()
}

fn randomize_up_factors(lora: &mut LoraWeights, seed: u64) {
    let mut rng = SeedRng::new(seed);
    for layer in lora.layers.values_mut() {
        let shape = layer.up.shape().to_vec();
        layer.up = rng.normal_tensor_scaled(&shape, 0.05);
    }
}

fn loss_value(model: &Backbone, lora: &LoraWeights, item: &TrainItem) -> f64 {
    let mut tape = Tape::new();
    let (loss, _) = training_loss(
        &mut tape,
        model,
        &lora.adapter_map(),
        item,
        TrainScope::Inference,
    )
    .unwrap();
    tape.value(loss).data()[0] as f64
}

#[test]
fn adapter_gradients_match_finite_differences() {
    let cfg = small_config();
    let model = warmed(cfg.clone(), 71);
    let mut lora = attach(&model, &LoraSpec::new(4, &["ALL"]), 5).unwrap();
    randomize_up_factors(&mut lora, 6);
    let item = test_item(&cfg, 80);

    // Autodiff gradients for every adapter parameter.
    let mut tape = Tape::new();
    let (loss, vars) = training_loss(
        &mut tape,
        &model,
        &lora.adapter_map(),
        &item,
        TrainScope::Adapters,
    )
    .unwrap();
    let grads = tape.backward(loss).unwrap();

    let step = 1e-3f32;
    let mut max_rel = 0.0f32;
    let names: Vec<String> = lora.layers.keys().cloned().collect();
    for name in names {
        for (suffix, is_down) in [(".lora_a", true), (".lora_b", false)] {
            let var = vars[&format!("{name}{suffix}")];
            let g_ad = grads.get(var).unwrap().clone();
            let n = g_ad.numel();
            for i in 0..n {
                let orig = {
                    let layer = &mut lora.layers.get_mut(&name).unwrap();
                    let t = if is_down { &mut layer.down } else { &mut layer.up };
                    let orig = t.data()[i];
                    t.data_mut()[i] = orig + step;
                    orig
                };
                let plus = loss_value(&model, &lora, &item);
                {
                    let layer = &mut lora.layers.get_mut(&name).unwrap();
                    let t = if is_down { &mut layer.down } else { &mut layer.up };
                    t.data_mut()[i] = orig - step;
                }
                let minus = loss_value(&model, &lora, &item);
                {
                    let layer = &mut lora.layers.get_mut(&name).unwrap();
                    let t = if is_down { &mut layer.down } else { &mut layer.up };
                    t.data_mut()[i] = orig;
                }
                let g_fd = ((plus - minus) / (2.0 * step as f64)) as f32;
                let rel = (g_ad.data()[i] - g_fd).abs() / f32::max(1.0, g_fd.abs());
                if rel > max_rel {
                    max_rel = rel;
                }
            }
        }
    }
    assert!(max_rel < 1e-3, "max relative error {max_rel}");
}

#[test]
fn input_gradients_match_finite_differences() {
    let cfg = small_config();
    let model = warmed(cfg.clone(), 73);
    let mut lora = attach(&model, &LoraSpec::new(4, &["V.SA", "A.SA"]), 7).unwrap();
    randomize_up_factors(&mut lora, 8);
    let item = test_item(&cfg, 90);
    let adapters = lora.adapter_map();

    let x0 = item.video_seq.feats.clone();
    let strength = StrengthField::uniform(1.0);
    let err = finite_diff_check(
        |tape, xv| {
            let out = model.forward(
                tape,
                &adapters,
                ForwardSpec {
                    video: &item.video_seq,
                    audio: &item.audio_seq,
                    cond_id: item.cond_id,
                    video_strength: &strength,
                    audio_strength: &strength,
                    video_feats_var: Some(xv),
                    audio_feats_var: None,
                    scope: TrainScope::Inference,
                },
            )?;
            let tgt = tape.constant(item.target_video.clone());
            let diff = tape.sub(out.video_gen, tgt)?;
            let sq = tape.mul(diff, diff)?;
            let s = tape.sum_all(sq)?;
            let n = item.target_video.numel() as f32;
            tape.scale(s, 1.0 / n)
        },
        &x0,
        1e-3,
    )
    .unwrap();
    assert!(err < 1e-3, "input gradcheck error {err}");
}

#[test]
fn lora_wrapped_linear_layer_matches_finite_differences() {
    // A single adapted linear outside the full model.
    let mut rng = SeedRng::new(11);
    let w = rng.normal_tensor(&[6, 5]);
    let b = rng.normal_tensor(&[6]);
    let down = rng.normal_tensor(&[3, 5]);
    let up = rng.normal_tensor_scaled(&[6, 3], 0.1);
    let x = rng.normal_tensor(&[4, 5]);
    let err = finite_diff_check(
        |t, xv| {
            let wv = t.leaf(w.clone(), false);
            let wt = t.transpose_last2(wv)?;
            let bv = t.leaf(b.clone(), false);
            let base = t.matmul(xv, wt)?;
            let base = t.add(base, bv)?;
            let dv = t.leaf(down.clone(), false);
            let dt = t.transpose_last2(dv)?;
            let h = t.matmul(xv, dt)?;
            let uv = t.leaf(up.clone(), false);
            let ut = t.transpose_last2(uv)?;
            let delta = t.matmul(h, ut)?;
            let delta = t.scale(delta, 0.5)?;
            let y = t.add(base, delta)?;
            let sq = t.mul(y, y)?;
            let s = t.sum_all(sq)?;
            t.scale(s, 1.0 / 24.0)
        },
        &x,
        1e-3,
    )
    .unwrap();
    assert!(err < 1e-3, "err {err}");
}

#[test]
fn attention_block_matches_finite_differences() {
    // Joint attention over six tokens as a standalone scalar function.
    use avcanvas_core::model::attention::{joint_attention, JointAttentionWeights};
    use avcanvas_core::sequence::{Segment, TokenSequence};

    let width = 12;
    let mut rng = SeedRng::new(13);
    let w = JointAttentionWeights::random(width, &mut rng);
    let segments = vec![
        Segment::GenVideo,
        Segment::GenVideo,
        Segment::GenVideo,
        Segment::GenVideo,
        Segment::RefVideo,
        Segment::RefVideo,
    ];
    let coords: Vec<[f32; 3]> = (0..6).map(|i| [0.0, (i / 2) as f32, (i % 2) as f32]).collect();
    let seq = TokenSequence {
        feats: Tensor::zeros(vec![6, width]),
        coords,
        timesteps: vec![0.5, 0.5, 0.5, 0.5, 0.0, 0.0],
        segments,
    };
    let strength = StrengthField::uniform(0.5);
    let x = rng.normal_tensor(&[6, width]);
    let err = finite_diff_check(
        |t, xv| {
            let y = joint_attention(t, &seq, xv, &strength, &w, 2, 100.0)?;
            let sq = t.mul(y, y)?;
            let s = t.sum_all(sq)?;
            t.scale(s, 1.0 / 72.0)
        },
        &x,
        1e-3,
    )
    .unwrap();
    assert!(err < 1e-3, "attention gradcheck error {err}");
}
