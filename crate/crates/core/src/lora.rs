//! Low-rank adapters on named backbone modules: injection, merging,
//! and pairwise composition. Adapters are the only trainable component
//! on top of a frozen backbone; each matched linear computes
//! `y = Wx + lora_strength * (alpha/rank) * B(Ax)`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::model::{adaptable_modules, AdapterMap, Backbone, ModuleAdapter};
use crate::rng::SeedRng;
use crate::tensor::Tensor;

/// Target-pattern vocabulary: family keys plus `ALL`. Patterns may use
/// `*` as a wildcard and are matched case-insensitively.
pub const PATTERN_VOCABULARY: &[&str] = &["V.SA", "V.CA", "V.FF", "A.SA", "A.FF", "A.CA_V2A", "ALL"];

/// What to adapt and how strongly.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LoraSpec {
    pub rank: usize,
    pub alpha: f32,
    /// Module-family patterns, e.g. `["V.SA"]` or `["ALL"]`.
    pub targets: Vec<String>,
    /// Multiplier on the low-rank path, in [0, 1].
    pub lora_strength: f32,
}

impl LoraSpec {
    /// Spec with the default `alpha = rank` rule and full strength.
    pub fn new(rank: usize, targets: &[&str]) -> Self {
        LoraSpec {
            rank,
            alpha: rank as f32,
            targets: targets.iter().map(|s| s.to_string()).collect(),
            lora_strength: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(invalid("LoraSpec", "rank must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lora_strength) {
            return Err(invalid("LoraSpec", "lora_strength must lie in [0, 1]"));
        }
        if self.targets.is_empty() {
            return Err(invalid("LoraSpec", "need at least one target pattern"));
        }
        Ok(())
    }

    /// Folded multiplier applied to `B(Ax)`.
    pub fn scale(&self) -> f32 {
        self.lora_strength * self.alpha / self.rank as f32
    }
}

/// One adapted linear: `down = A: [rank, in]`, `up = B: [out, rank]`.
#[derive(Debug, Clone)]
pub struct LoraLayer {
    pub down: Tensor,
    pub up: Tensor,
}

/// A trained (or freshly initialized) adapter set.
#[derive(Debug, Clone)]
pub struct LoraWeights {
    pub spec: LoraSpec,
    /// Module name -> factor pair, in registry order.
    pub layers: BTreeMap<String, LoraLayer>,
}

/// Case-insensitive `*`-glob over a family key.
fn pattern_matches(pattern: &str, family: &str) -> bool {
    fn glob(p: &[u8], s: &[u8]) -> bool {
        match (p.first(), s.first()) {
            (None, None) => true,
            (Some(b'*'), _) => glob(&p[1..], s) || (!s.is_empty() && glob(p, &s[1..])),
            (Some(&pc), Some(&sc)) if pc == sc => glob(&p[1..], &s[1..]),
            _ => false,
        }
    }
    let p = pattern.to_lowercase();
    if p == "all" {
        return true;
    }
    glob(p.as_bytes(), family.as_bytes())
}

/// Module names selected by a pattern set, in registry order. Errors
/// if any single pattern matches nothing, listing what exists.
pub fn resolve_targets(model: &Backbone, targets: &[String]) -> Result<Vec<String>> {
    let modules = adaptable_modules(&model.cfg);
    let mut selected: Vec<String> = Vec::new();
    for pattern in targets {
        let mut hit = false;
        for m in &modules {
            if pattern_matches(pattern, m.family) {
                hit = true;
                if !selected.contains(&m.name) {
                    selected.push(m.name.clone());
                }
            }
        }
        if !hit {
            let mut available: Vec<String> = modules.iter().map(|m| m.family.to_string()).collect();
            available.dedup();
            return Err(Error::NoMatchingModules {
                pattern: pattern.clone(),
                available,
            });
        }
    }
    // Keep registry order.
    let order: Vec<&String> = modules
        .iter()
        .map(|m| &m.name)
        .filter(|n| selected.contains(*n))
        .collect();
    Ok(order.into_iter().cloned().collect())
}

/// Initialize an adapter set on the matched modules: `A` is Gaussian
/// with sigma `1/sqrt(in)`, `B` starts at exactly zero so a fresh
/// adapter cannot change any output.
pub fn attach(model: &Backbone, spec: &LoraSpec, seed: u64) -> Result<LoraWeights> {
    spec.validate()?;
    let names = resolve_targets(model, &spec.targets)?;
    let by_name: BTreeMap<String, (usize, usize)> = adaptable_modules(&model.cfg)
        .into_iter()
        .map(|m| (m.name, (m.out_dim, m.in_dim)))
        .collect();
    let mut rng = SeedRng::new(seed);
    let mut layers = BTreeMap::new();
    for name in names {
        let (out_dim, in_dim) = by_name[&name];
        let down = rng.normal_tensor_scaled(&[spec.rank, in_dim], 1.0 / crate::mathf::sqrt(in_dim as f32));
        let up = Tensor::zeros(alloc::vec![out_dim, spec.rank]);
        layers.insert(name, LoraLayer { down, up });
    }
    Ok(LoraWeights {
        spec: spec.clone(),
        layers,
    })
}

impl LoraWeights {
    /// Adapter map at the spec's own strength.
    pub fn adapter_map(&self) -> AdapterMap {
        self.adapter_map_at(self.spec.lora_strength)
    }

    /// Adapter map with an overridden lora strength.
    pub fn adapter_map_at(&self, lora_strength: f32) -> AdapterMap {
        let scale = lora_strength * self.spec.alpha / self.spec.rank as f32;
        self.layers
            .iter()
            .map(|(name, l)| {
                (
                    name.clone(),
                    ModuleAdapter {
                        down: l.down.clone(),
                        up: l.up.clone(),
                        scale,
                    },
                )
            })
            .collect()
    }

    /// Check shapes and rank against a backbone's registry.
    pub fn validate_against(&self, model: &Backbone) -> Result<()> {
        let by_name: BTreeMap<String, (usize, usize)> = adaptable_modules(&model.cfg)
            .into_iter()
            .map(|m| (m.name, (m.out_dim, m.in_dim)))
            .collect();
        for (name, layer) in &self.layers {
            let Some(&(out_dim, in_dim)) = by_name.get(name) else {
                return Err(Error::AdapterMismatch {
                    msg: format!("module {name} does not exist in this model"),
                });
            };
            if layer.down.shape() != [self.spec.rank, in_dim]
                || layer.up.shape() != [out_dim, self.spec.rank]
            {
                return Err(Error::AdapterMismatch {
                    msg: format!(
                        "{name}: factors {:?}/{:?} do not match rank {} on {out_dim}x{in_dim}",
                        layer.down.shape(),
                        layer.up.shape(),
                        self.spec.rank
                    ),
                });
            }
        }
        Ok(())
    }

    /// Error unless the checkpointed rank equals the requested one.
    pub fn expect_rank(&self, rank: usize) -> Result<()> {
        if self.spec.rank != rank {
            return Err(Error::AdapterMismatch {
                msg: format!("checkpoint has rank {}, requested {rank}", self.spec.rank),
            });
        }
        Ok(())
    }
}

/// Fold an adapter set into plain weights: `W' = W + strength *
/// (alpha/rank) * B A`. The result has no live adapters.
pub fn merge(model: &Backbone, lora: &LoraWeights, strength: f32) -> Result<Backbone> {
    lora.validate_against(model)?;
    let mut merged = model.clone();
    let scale = strength * lora.spec.alpha / lora.spec.rank as f32;
    for (name, layer) in &lora.layers {
        let w = merged
            .params
            .get_mut(&format!("{name}.w"))
            .expect("validated module exists");
        let (out_dim, rank) = (layer.up.shape()[0], layer.up.shape()[1]);
        let in_dim = layer.down.shape()[1];
        // W[o, i] += scale * sum_r B[o, r] * A[r, i]
        for o in 0..out_dim {
            for i in 0..in_dim {
                let mut acc = 0.0f64;
                for r in 0..rank {
                    acc += layer.up.data()[o * rank + r] as f64
                        * layer.down.data()[r * in_dim + i] as f64;
                }
                w.data_mut()[o * in_dim + i] += (scale as f64 * acc) as f32;
            }
        }
    }
    Ok(merged)
}

/// Compose two adapter sets over disjoint module sets (e.g. one video
/// LoRA and one audio LoRA active in the same generation).
pub fn apply_pair(
    model: &Backbone,
    video_lora: &LoraWeights,
    audio_lora: &LoraWeights,
) -> Result<AdapterMap> {
    video_lora.validate_against(model)?;
    audio_lora.validate_against(model)?;
    let mut map = video_lora.adapter_map();
    for (name, adapter) in audio_lora.adapter_map() {
        if map.contains_key(&name) {
            return Err(Error::OverlappingAdapters { module: name });
        }
        map.insert(name, adapter);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::*;
    use crate::model::{AdapterMap, ForwardSpec, TrainScope};
    use crate::sequence::StrengthField;
    use crate::tape::Tape;

    fn forward_video(
        model: &Backbone,
        adapters: &AdapterMap,
        seed: u64,
    ) -> alloc::vec::Vec<f32> {
        let cfg = &model.cfg;
        let video = video_seq(cfg, 6, 2, 0.5, seed);
        let audio = audio_seq(cfg, 3, 1, 0.5, seed + 1);
        let strength = StrengthField::uniform(1.0);
        let mut tape = Tape::new();
        let out = model
            .forward(
                &mut tape,
                adapters,
                ForwardSpec::inference(&video, &audio, 1, &strength),
            )
            .unwrap();
        let mut v = tape.value(out.video_gen).data().to_vec();
        v.extend_from_slice(tape.value(out.audio_gen).data());
        v
    }

    #[test]
    fn default_alpha_equals_rank() {
        let spec = LoraSpec::new(32, &["V.SA"]);
        assert_eq!(spec.alpha, 32.0);
        assert_eq!(spec.lora_strength, 1.0);
    }

    #[test]
    fn fresh_adapter_is_bit_identical_to_base() {
        let model = warmed_backbone(tiny_config(), 31);
        let lora = attach(&model, &LoraSpec::new(4, &["ALL"]), 7).unwrap();
        let base = forward_video(&model, &AdapterMap::new(), 40);
        let adapted = forward_video(&model, &lora.adapter_map(), 40);
        assert_eq!(base, adapted);
    }

    #[test]
    fn v_sa_pattern_matches_eight_layers_on_two_blocks() {
        let model = Backbone::init(tiny_config(), 1).unwrap();
        let lora = attach(&model, &LoraSpec::new(4, &["V.SA"]), 7).unwrap();
        assert_eq!(lora.layers.len(), 2 * 4);
        assert!(lora.layers.keys().all(|k| k.contains(".v.sa.")));
    }

    #[test]
    fn unmatched_pattern_lists_available_modules() {
        // This backbone has no video cross-attention, so V.CA matches
        // nothing and must error with the available families.
        let model = Backbone::init(tiny_config(), 1).unwrap();
        let err = attach(&model, &LoraSpec::new(4, &["V.CA"]), 7).unwrap_err();
        match err {
            Error::NoMatchingModules { pattern, available } => {
                assert_eq!(pattern, "V.CA");
                assert!(available.contains(&"v.sa".to_string()));
                assert!(available.contains(&"a.ca_v2a".to_string()));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn merge_at_zero_strength_is_identity() {
        let model = warmed_backbone(tiny_config(), 33);
        let mut lora = attach(&model, &LoraSpec::new(4, &["V.SA"]), 9).unwrap();
        let mut rng = SeedRng::new(50);
        for layer in lora.layers.values_mut() {
            let shape = layer.up.shape().to_vec();
            layer.up = rng.normal_tensor_scaled(&shape, 0.1);
        }
        let merged = merge(&model, &lora, 0.0).unwrap();
        for (name, t) in &model.params {
            assert_eq!(t.data(), merged.params[name].data(), "{name} changed");
        }
    }

    #[test]
    fn merged_model_matches_live_adapter_within_tolerance() {
        for rank in [4usize, 32, 128] {
            let model = warmed_backbone(tiny_config(), 35);
            let mut lora = attach(&model, &LoraSpec::new(rank, &["V.SA", "V.FF"]), 11).unwrap();
            let mut rng = SeedRng::new(60 + rank as u64);
            for layer in lora.layers.values_mut() {
                let shape = layer.up.shape().to_vec();
                layer.up = rng.normal_tensor_scaled(&shape, 0.05);
            }
            let live = forward_video(&model, &lora.adapter_map(), 70);
            let merged = merge(&model, &lora, lora.spec.lora_strength).unwrap();
            let folded = forward_video(&merged, &AdapterMap::new(), 70);
            for (a, b) in live.iter().zip(&folded) {
                assert!((a - b).abs() < 1e-5, "rank {rank}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn merge_then_subtract_recovers_weights() {
        let model = warmed_backbone(tiny_config(), 37);
        let mut lora = attach(&model, &LoraSpec::new(8, &["V.SA"]), 13).unwrap();
        let mut rng = SeedRng::new(80);
        for layer in lora.layers.values_mut() {
            let shape = layer.up.shape().to_vec();
            layer.up = rng.normal_tensor_scaled(&shape, 0.1);
        }
        let merged = merge(&model, &lora, 1.0).unwrap();
        let recovered = merge(&merged, &lora, -1.0).unwrap();
        for (name, t) in &model.params {
            let diff = t.max_abs_diff(&recovered.params[name]).unwrap();
            assert!(diff < 1e-6, "{name}: drift {diff}");
        }
    }

    #[test]
    fn pair_composition_requires_disjoint_modules() {
        let model = Backbone::init(tiny_config(), 1).unwrap();
        let a = attach(&model, &LoraSpec::new(4, &["ALL"]), 1).unwrap();
        let b = attach(&model, &LoraSpec::new(4, &["ALL"]), 2).unwrap();
        assert!(matches!(
            apply_pair(&model, &a, &b),
            Err(Error::OverlappingAdapters { .. })
        ));
        let video = attach(&model, &LoraSpec::new(4, &["V.SA"]), 3).unwrap();
        let audio = attach(&model, &LoraSpec::new(4, &["A.SA", "A.FF", "A.CA_V2A"]), 4).unwrap();
        let map = apply_pair(&model, &video, &audio).unwrap();
        assert_eq!(map.len(), video.layers.len() + audio.layers.len());
    }

    #[test]
    fn zeroed_audio_adapter_reproduces_video_only_behavior() {
        let model = warmed_backbone(tiny_config(), 41);
        let mut video_lora = attach(&model, &LoraSpec::new(4, &["V.SA"]), 5).unwrap();
        let mut rng = SeedRng::new(90);
        for layer in video_lora.layers.values_mut() {
            let shape = layer.up.shape().to_vec();
            layer.up = rng.normal_tensor_scaled(&shape, 0.1);
        }
        // Audio adapter left at init (B = 0), composed with the video one.
        let audio_lora = attach(&model, &LoraSpec::new(4, &["A.SA"]), 6).unwrap();
        let paired = apply_pair(&model, &video_lora, &audio_lora).unwrap();
        let video_only = forward_video(&model, &video_lora.adapter_map(), 100);
        let both = forward_video(&model, &paired, 100);
        for (a, b) in video_only.iter().zip(&both) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn small_adapter_scales_linearly_to_first_order() {
        let model = warmed_backbone(tiny_config(), 43);
        let mut lora = attach(&model, &LoraSpec::new(4, &["V.SA"]), 15).unwrap();
        let mut rng = SeedRng::new(110);
        for layer in lora.layers.values_mut() {
            let shape = layer.up.shape().to_vec();
            layer.up = rng.normal_tensor_scaled(&shape, 1e-4);
        }
        let base = forward_video(&model, &AdapterMap::new(), 120);
        let at = |s: f32| forward_video(&model, &lora.adapter_map_at(s), 120);
        let full: alloc::vec::Vec<f32> = at(1.0).iter().zip(&base).map(|(a, b)| a - b).collect();
        let half: alloc::vec::Vec<f32> = at(0.5).iter().zip(&base).map(|(a, b)| a - b).collect();
        let norm_full: f64 = full.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        let norm_err: f64 = half
            .iter()
            .zip(&full)
            .map(|(h, f)| {
                let e = *h as f64 - 0.5 * *f as f64;
                e * e
            })
            .sum::<f64>()
            .sqrt();
        assert!(
            norm_err <= 1e-3 * norm_full.max(1e-12),
            "first-order deviation {norm_err} vs delta norm {norm_full}"
        );
    }

    #[test]
    fn gradient_reaches_adapters_through_reference_attention() {
        let model = warmed_backbone(tiny_config(), 47);
        let lora = attach(&model, &LoraSpec::new(4, &["V.SA"]), 17).unwrap();
        let cfg = &model.cfg;
        let video = video_seq(cfg, 6, 2, 0.5, 130);
        let audio = empty_audio(cfg);
        let strength = StrengthField::uniform(1.0);
        let mut tape = Tape::new();
        let out = model
            .forward(
                &mut tape,
                &lora.adapter_map(),
                ForwardSpec {
                    video: &video,
                    audio: &audio,
                    cond_id: 1,
                    video_strength: &strength,
                    audio_strength: &strength,
                    video_feats_var: None,
                    audio_feats_var: None,
                    scope: TrainScope::Adapters,
                },
            )
            .unwrap();
        let sq = tape.mul(out.video_gen, out.video_gen).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        let vars = out.trainable_vars;
        let grads = tape.backward(loss).unwrap();
        let any_nonzero = vars.iter().any(|(name, &v)| {
            name.ends_with(".lora_b")
                && grads
                    .get(v)
                    .map(|g| g.data().iter().any(|&x| x != 0.0))
                    .unwrap_or(false)
        });
        assert!(any_nonzero, "no gradient reached any adapter up-projection");
    }
}
