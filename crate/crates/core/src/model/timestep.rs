//! Sinusoidal per-token timestep features.

use alloc::vec::Vec;

use crate::mathf;
use crate::tensor::Tensor;

/// Frequency used to spread t in [0, 1] across the sinusoid ladder.
pub const TIME_SCALE: f32 = 1000.0;
pub const TIME_FREQ_BASE: f32 = 10_000.0;

/// Sinusoidal embedding of per-token timesteps: `[n, dim]` with the
/// first half cosines and the second half sines of `t * TIME_SCALE`
/// times a geometric frequency ladder. `dim` must be even.
pub fn timestep_embedding(timesteps: &[f32], dim: usize) -> Tensor {
    debug_assert!(dim % 2 == 0, "embedding dim must be even");
    let half = dim / 2;
    let freqs: Vec<f32> = (0..half)
        .map(|j| mathf::powf(TIME_FREQ_BASE, -(j as f32) / half as f32))
        .collect();
    let mut data = Vec::with_capacity(timesteps.len() * dim);
    for &t in timesteps {
        let arg = t * TIME_SCALE;
        for &f in &freqs {
            data.push(mathf::cos(arg * f));
        }
        for &f in &freqs {
            data.push(mathf::sin(arg * f));
        }
    }
    Tensor::new(alloc::vec![timesteps.len(), dim], data).expect("consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_sinusoid_evaluation() {
        // Independent recompute of the documented formula.
        let ts = [0.0, 0.37, 1.0];
        let dim = 8;
        let emb = timestep_embedding(&ts, dim);
        for (i, &t) in ts.iter().enumerate() {
            for j in 0..dim / 2 {
                let freq = (10_000.0f64).powf(-(j as f64) / (dim / 2) as f64);
                let arg = t as f64 * 1000.0 * freq;
                let got_cos = emb.data()[i * dim + j] as f64;
                let got_sin = emb.data()[i * dim + dim / 2 + j] as f64;
                assert!((got_cos - arg.cos()).abs() < 1e-4, "cos mismatch at {i},{j}");
                assert!((got_sin - arg.sin()).abs() < 1e-4, "sin mismatch at {i},{j}");
            }
        }
    }

    #[test]
    fn distinct_timesteps_distinct_rows() {
        let emb = timestep_embedding(&[0.0, 1.0], 16);
        let a = &emb.data()[..16];
        let b = &emb.data()[16..];
        let l2: f32 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!(l2 > 0.0);
    }

    #[test]
    fn equal_timesteps_equal_rows() {
        let emb = timestep_embedding(&[0.25, 0.25], 12);
        assert_eq!(&emb.data()[..12], &emb.data()[12..]);
    }
}
