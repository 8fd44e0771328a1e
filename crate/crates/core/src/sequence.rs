//! Token sequences: per-token features, fractional 3-axis coordinates,
//! per-token timesteps, and segment tags. Reference tokens are
//! distinguished from generation tokens purely by their timestep.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Which stream and role a token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    GenVideo,
    GenAudio,
    RefVideo,
    RefAudio,
}

impl Segment {
    pub fn is_gen(self) -> bool {
        matches!(self, Segment::GenVideo | Segment::GenAudio)
    }

    pub fn is_ref(self) -> bool {
        !self.is_gen()
    }
}

/// A flat token sequence for one stream (video or audio).
///
/// Invariants, checked by [`TokenSequence::validate`]:
/// - all vectors have the same length;
/// - every reference token carries timestep exactly 0;
/// - all generation tokens share one timestep value in [0, 1].
#[derive(Debug, Clone)]
pub struct TokenSequence {
    /// `[n_tokens, feat_dim]` features (pre-projection).
    pub feats: Tensor,
    /// Fractional `(t, h, w)` positions in target-token-grid units.
    pub coords: Vec<[f32; 3]>,
    /// Per-token timestep in [0, 1].
    pub timesteps: Vec<f32>,
    pub segments: Vec<Segment>,
}

impl TokenSequence {
    pub fn validate(&self) -> Result<()> {
        let n = self.segments.len();
        if self.feats.ndim() != 2 || self.feats.shape()[0] != n {
            return Err(invalid(
                "TokenSequence",
                alloc::format!(
                    "feature shape {:?} does not match {n} tokens",
                    self.feats.shape()
                ),
            ));
        }
        if self.coords.len() != n || self.timesteps.len() != n {
            return Err(invalid("TokenSequence", "coords/timesteps length mismatch"));
        }
        let mut gen_t: Option<f32> = None;
        for i in 0..n {
            let t = self.timesteps[i];
            if !(0.0..=1.0).contains(&t) {
                return Err(invalid(
                    "TokenSequence",
                    alloc::format!("timestep {t} outside [0, 1]"),
                ));
            }
            if self.segments[i].is_ref() {
                if t != 0.0 {
                    return Err(invalid(
                        "TokenSequence",
                        "reference token with nonzero timestep",
                    ));
                }
            } else {
                match gen_t {
                    None => gen_t = Some(t),
                    Some(prev) if prev != t => {
                        return Err(invalid(
                            "TokenSequence",
                            "generation tokens with differing timesteps",
                        ))
                    }
                    _ => {}
                }
            }
            if self.coords[i].iter().any(|c| !c.is_finite()) {
                return Err(invalid("TokenSequence", "non-finite coordinate"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn gen_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.segments[i].is_gen()).collect()
    }

    pub fn ref_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.segments[i].is_ref()).collect()
    }

    /// Set the shared timestep of all generation tokens.
    pub fn set_gen_timestep(&mut self, t: f32) {
        for i in 0..self.len() {
            if self.segments[i].is_gen() {
                self.timesteps[i] = t;
            }
        }
    }

    /// Replace the features of generation tokens, in sequence order.
    pub fn set_gen_feats(&mut self, rows: &Tensor) -> Result<()> {
        let gen = self.gen_indices();
        let dim = self.feats.shape()[1];
        if rows.shape() != [gen.len(), dim] {
            return Err(invalid("set_gen_feats", "row shape mismatch"));
        }
        for (k, &i) in gen.iter().enumerate() {
            let src = &rows.data()[k * dim..(k + 1) * dim];
            self.feats.data_mut()[i * dim..(i + 1) * dim].copy_from_slice(src);
        }
        Ok(())
    }

    /// Features of generation tokens as a dense `[n_gen, dim]` tensor.
    pub fn gen_feats(&self) -> Tensor {
        let gen = self.gen_indices();
        let dim = self.feats.shape()[1];
        let mut data = Vec::with_capacity(gen.len() * dim);
        for &i in &gen {
            data.extend_from_slice(&self.feats.data()[i * dim..(i + 1) * dim]);
        }
        Tensor::new(alloc::vec![gen.len(), dim], data).expect("consistent")
    }
}

/// Attention strength on generation-query to reference-key edges:
/// a global scalar times an optional per-generation-token local map.
#[derive(Debug, Clone)]
pub struct StrengthField {
    pub global: f32,
    pub local: Option<Vec<f32>>,
}

impl StrengthField {
    pub fn uniform(global: f32) -> Self {
        StrengthField {
            global,
            local: None,
        }
    }

    /// Effective strength per generation token (global x local); the
    /// absent local map means all ones.
    pub fn resolve(&self, n_gen: usize) -> Result<Vec<f32>> {
        if !(self.global.is_finite() && self.global >= 0.0) {
            return Err(invalid(
                "StrengthField",
                "global strength must be finite and non-negative",
            ));
        }
        match &self.local {
            None => Ok(alloc::vec![self.global; n_gen]),
            Some(local) => {
                if local.len() != n_gen {
                    return Err(invalid(
                        "StrengthField",
                        alloc::format!("local map has {} entries for {n_gen} tokens", local.len()),
                    ));
                }
                if local.iter().any(|&s| !(s.is_finite() && s >= 0.0)) {
                    return Err(invalid("StrengthField", "negative or non-finite local strength"));
                }
                Ok(local.iter().map(|&s| s * self.global).collect())
            }
        }
    }

    /// True when the field cannot change any attention edge.
    pub fn is_identity(&self) -> bool {
        self.global == 1.0 && self.local.is_none()
    }
}
