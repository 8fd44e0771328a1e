//! Three-axis rotary phases over fractional token coordinates.
//!
//! The head dimension is split into three equal groups (time, height,
//! width); each group's feature pairs rotate by the token's coordinate
//! on that axis times a geometric frequency ladder. Identical
//! coordinates produce identical phases regardless of segment tag, and
//! attention logits depend only on coordinate differences.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::mathf;

pub const DEFAULT_ROPE_BASE: f32 = 10_000.0;

/// Per-token cos/sin tables, `[n_tokens * head_dim/2]`, pair-major with
/// the three axis groups laid out t-pairs, h-pairs, w-pairs.
pub fn phase_tables(
    coords: &[[f32; 3]],
    head_dim: usize,
    base: f32,
) -> Result<(Vec<f32>, Vec<f32>)> {
    if head_dim % 6 != 0 {
        return Err(invalid(
            "rope",
            alloc::format!("head dim {head_dim} must be divisible by 6"),
        ));
    }
    let pairs = head_dim / 2;
    let per_axis = pairs / 3;
    let freqs: Vec<f32> = (0..per_axis)
        .map(|p| mathf::powf(base, -(p as f32) / per_axis as f32))
        .collect();
    let mut cos = Vec::with_capacity(coords.len() * pairs);
    let mut sin = Vec::with_capacity(coords.len() * pairs);
    for c in coords {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(invalid("rope", "non-finite coordinate"));
        }
        for axis in 0..3 {
            for &f in &freqs {
                let angle = c[axis] * f;
                cos.push(mathf::cos(angle));
                sin.push(mathf::sin(angle));
            }
        }
    }
    Ok((cos, sin))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotate(v: &[f32], cos: &[f32], sin: &[f32]) -> Vec<f32> {
        let mut out = alloc::vec![0.0f32; v.len()];
        for p in 0..v.len() / 2 {
            out[2 * p] = v[2 * p] * cos[p] - v[2 * p + 1] * sin[p];
            out[2 * p + 1] = v[2 * p] * sin[p] + v[2 * p + 1] * cos[p];
        }
        out
    }

    fn dot(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
    }

    #[test]
    fn zero_coordinate_is_identity_rotation() {
        let (cos, sin) = phase_tables(&[[0.0, 0.0, 0.0]], 12, DEFAULT_ROPE_BASE).unwrap();
        assert!(cos.iter().all(|&c| c == 1.0));
        assert!(sin.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn head_dim_must_be_multiple_of_six() {
        assert!(phase_tables(&[[0.0; 3]], 8, DEFAULT_ROPE_BASE).is_err());
    }

    #[test]
    fn logits_depend_only_on_coordinate_difference() {
        let mut rng = crate::rng::SeedRng::new(17);
        let dh = 12;
        for _ in 0..20 {
            let q: Vec<f32> = rng.normal_vec(dh);
            let k: Vec<f32> = rng.normal_vec(dh);
            let c1 = [rng.uniform(0.0, 4.0), rng.uniform(0.0, 4.0), rng.uniform(0.0, 4.0)];
            let c2 = [rng.uniform(0.0, 4.0), rng.uniform(0.0, 4.0), rng.uniform(0.0, 4.0)];
            let shift = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
            let c1s = [c1[0] + shift[0], c1[1] + shift[1], c1[2] + shift[2]];
            let c2s = [c2[0] + shift[0], c2[1] + shift[1], c2[2] + shift[2]];
            let (cos_a, sin_a) = phase_tables(&[c1, c2], dh, DEFAULT_ROPE_BASE).unwrap();
            let (cos_b, sin_b) = phase_tables(&[c1s, c2s], dh, DEFAULT_ROPE_BASE).unwrap();
            let pairs = dh / 2;
            let logit_a = dot(
                &rotate(&q, &cos_a[..pairs], &sin_a[..pairs]),
                &rotate(&k, &cos_a[pairs..], &sin_a[pairs..]),
            );
            let logit_b = dot(
                &rotate(&q, &cos_b[..pairs], &sin_b[..pairs]),
                &rotate(&k, &cos_b[pairs..], &sin_b[pairs..]),
            );
            assert!(
                (logit_a - logit_b).abs() < 1e-5,
                "shift changed logit: {logit_a} vs {logit_b}"
            );
        }
    }

    #[test]
    fn same_coords_same_phases() {
        let c = [1.5, 2.5, 0.5];
        let (cos_a, sin_a) = phase_tables(&[c], 12, DEFAULT_ROPE_BASE).unwrap();
        let (cos_b, sin_b) = phase_tables(&[c], 12, DEFAULT_ROPE_BASE).unwrap();
        assert_eq!(cos_a, cos_b);
        assert_eq!(sin_a, sin_b);
    }
}
