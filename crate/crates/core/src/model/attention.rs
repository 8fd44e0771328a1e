//! Joint self- and cross-attention with strength-modulated
//! generation-to-reference edges.
//!
//! Strength enters as an additive `ln(s)` bias on the pre-softmax logit
//! of every generation-query -> reference-key edge; `s = 0` becomes a
//! hard mask excluding the edge exactly. All other edges are unbiased,
//! so `s = 1` is indistinguishable from a build without the mechanism.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::mathf;
use crate::rope;
use crate::sequence::{Segment, StrengthField, TokenSequence};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A linear layer registered on a tape, optionally with a low-rank
/// adapter `(down, up, scale)` added to its output.
#[derive(Clone, Copy)]
pub(crate) struct LinearRef {
    pub w: Var,
    pub b: Var,
    pub adapter: Option<(Var, Var, f32)>,
}

pub(crate) fn apply_linear(tape: &mut Tape, x: Var, lin: &LinearRef) -> Result<Var> {
    let wt = tape.transpose_last2(lin.w)?;
    let mut y = tape.matmul(x, wt)?;
    y = tape.add(y, lin.b)?;
    if let Some((down, up, scale)) = lin.adapter {
        let dt = tape.transpose_last2(down)?;
        let h = tape.matmul(x, dt)?;
        let ut = tape.transpose_last2(up)?;
        let mut delta = tape.matmul(h, ut)?;
        delta = tape.scale(delta, scale)?;
        y = tape.add(y, delta)?;
    }
    Ok(y)
}

pub(crate) struct MhaRefs {
    pub q: LinearRef,
    pub k: LinearRef,
    pub v: LinearRef,
    pub out: LinearRef,
}

/// Additive logit bias and hard mask for generation-query ->
/// reference-key edges. `strengths` holds the effective strength per
/// generation query, indexed by generation ordinal (query-sequence
/// order). Returns `(None, None)` when nothing would change.
pub(crate) fn strength_bias(
    query_segments: &[Segment],
    key_segments: &[Segment],
    strengths: &[f32],
) -> (Option<Tensor>, Option<Vec<bool>>) {
    let nq = query_segments.len();
    let nk = key_segments.len();
    let ref_cols: Vec<usize> = (0..nk).filter(|&k| key_segments[k].is_ref()).collect();
    if ref_cols.is_empty() {
        return (None, None);
    }
    let mut bias = vec![0.0f32; nq * nk];
    let mut mask = vec![false; nq * nk];
    let mut any_bias = false;
    let mut any_mask = false;
    let mut gen_ord = 0;
    for q in 0..nq {
        if !query_segments[q].is_gen() {
            continue;
        }
        let s = strengths[gen_ord];
        gen_ord += 1;
        if s == 1.0 {
            continue;
        }
        if s == 0.0 {
            for &k in &ref_cols {
                mask[q * nk + k] = true;
            }
            any_mask = true;
        } else {
            let b = mathf::ln(s);
            for &k in &ref_cols {
                bias[q * nk + k] = b;
            }
            any_bias = true;
        }
    }
    (
        any_bias.then(|| Tensor::new(vec![nq, nk], bias).expect("consistent")),
        any_mask.then_some(mask),
    )
}

/// Multi-head attention core. `x_q: [nq, d]`, `x_kv: [nk, d]`; rope
/// tables are per-token pair phases; `bias` broadcasts `[nq, nk]` over
/// heads and `mask` excludes edges exactly.
#[allow(clippy::too_many_arguments)]
pub(crate) fn multi_head_attention(
    tape: &mut Tape,
    x_q: Var,
    x_kv: Var,
    refs: &MhaRefs,
    heads: usize,
    rope_q: (&[f32], &[f32]),
    rope_k: (&[f32], &[f32]),
    bias: Option<&Tensor>,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let nq = tape.shape(x_q)[0];
    let nk = tape.shape(x_kv)[0];
    let d = tape.shape(x_q)[1];
    if d % heads != 0 {
        return Err(invalid("attention", "width not divisible by head count"));
    }
    let dh = d / heads;

    let q = apply_linear(tape, x_q, &refs.q)?;
    let k = apply_linear(tape, x_kv, &refs.k)?;
    let v = apply_linear(tape, x_kv, &refs.v)?;

    let q3 = tape.reshape(q, vec![nq, heads, dh])?;
    let q3 = tape.rope(q3, rope_q.0, rope_q.1)?;
    let qh = tape.permute(q3, &[1, 0, 2])?;

    let k3 = tape.reshape(k, vec![nk, heads, dh])?;
    let k3 = tape.rope(k3, rope_k.0, rope_k.1)?;
    let kh = tape.permute(k3, &[1, 0, 2])?;

    let v3 = tape.reshape(v, vec![nk, heads, dh])?;
    let vh = tape.permute(v3, &[1, 0, 2])?;

    let kt = tape.transpose_last2(kh)?;
    let mut logits = tape.matmul(qh, kt)?;
    logits = tape.scale(logits, 1.0 / mathf::sqrt(dh as f32))?;
    if let Some(b) = bias {
        let bv = tape.constant(b.clone());
        logits = tape.add(logits, bv)?;
    }
    let probs = tape.softmax_lastdim(logits, mask)?;
    let o = tape.matmul(probs, vh)?;
    let o = tape.permute(o, &[1, 0, 2])?;
    let o = tape.reshape(o, vec![nq, d])?;
    apply_linear(tape, o, &refs.out)
}

/// Plain (adapter-free) attention projection weights, `w: [out, in]`
/// with bias, for running joint attention outside a full backbone.
pub struct JointAttentionWeights {
    pub q: (Tensor, Tensor),
    pub k: (Tensor, Tensor),
    pub v: (Tensor, Tensor),
    pub out: (Tensor, Tensor),
}

impl JointAttentionWeights {
    /// Gaussian projections for benchmarks and tests.
    pub fn random(width: usize, rng: &mut crate::rng::SeedRng) -> Self {
        let sigma = 1.0 / mathf::sqrt(width as f32);
        let mut pair = || {
            (
                rng.normal_tensor_scaled(&[width, width], sigma),
                Tensor::zeros(vec![width]),
            )
        };
        JointAttentionWeights {
            q: pair(),
            k: pair(),
            v: pair(),
            out: pair(),
        }
    }
}

/// One joint self-attention layer over a full token sequence: rotary
/// phases from the coords, strength bias on generation->reference
/// edges, residual added to the input features.
///
/// `x` is the projected feature matrix `[n, width]` for the sequence.
pub fn joint_attention(
    tape: &mut Tape,
    seq: &TokenSequence,
    x: Var,
    strength: &StrengthField,
    weights: &JointAttentionWeights,
    heads: usize,
    rope_base: f32,
) -> Result<Var> {
    if seq.is_empty() {
        return Err(invalid("joint_attention", "empty sequence"));
    }
    let width = tape.shape(x)[1];
    let dh = width / heads;
    let (cos, sin) = rope::phase_tables(&seq.coords, dh, rope_base)?;
    let strengths = strength.resolve(seq.gen_indices().len())?;
    let (bias, mask) = strength_bias(&seq.segments, &seq.segments, &strengths);

    let mut reg = |w: &(Tensor, Tensor)| LinearRef {
        w: tape.constant(w.0.clone()),
        b: tape.constant(w.1.clone()),
        adapter: None,
    };
    let refs = MhaRefs {
        q: reg(&weights.q),
        k: reg(&weights.k),
        v: reg(&weights.v),
        out: reg(&weights.out),
    };
    let attn = multi_head_attention(
        tape,
        x,
        x,
        &refs,
        heads,
        (&cos, &sin),
        (&cos, &sin),
        bias.as_ref(),
        mask.as_deref(),
    )?;
    tape.add(x, attn)
}
