//! Control-grid benchmark: joint-attention wall time and modeled FLOPs
//! as the reference canvas downscale varies.

use std::fmt::Write as _;
use std::time::Instant;

use avcanvas_core::canvas::{build_layout, LayoutMode};
use avcanvas_core::codec::PatchSize;
use avcanvas_core::model::attention::{joint_attention, JointAttentionWeights};
use avcanvas_core::rng::SeedRng;
use avcanvas_core::sequence::{Segment, StrengthField, TokenSequence};
use avcanvas_core::tape::Tape;
use serde::Serialize;

use crate::{AppError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub downscale: usize,
    pub n_gen: usize,
    pub n_ref: usize,
    pub n_total: usize,
    pub median_ms: f64,
    pub modeled_flops: f64,
    /// Modeled FLOP ratio relative to the d=1 row.
    pub flop_ratio_vs_full: f64,
    /// Measured wall-time speedup vs the d=1 row, percent.
    pub measured_speedup_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchTable {
    pub dims: [usize; 3],
    pub patch: [usize; 3],
    pub width: usize,
    pub heads: usize,
    pub reps: usize,
    pub rows: Vec<BenchRow>,
    /// Large-scale reference speedups for context (hardware-specific,
    /// reported for comparison only, not asserted): 2x downscale
    /// 25-35%, 4x downscale 35-50%.
    pub reference_speedup_note: String,
}

impl BenchTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "downscale,n_gen,n_ref,n_total,median_ms,modeled_flops,flop_ratio_vs_full,measured_speedup_pct\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.4},{:.3e},{:.4},{:.1}",
                r.downscale,
                r.n_gen,
                r.n_ref,
                r.n_total,
                r.median_ms,
                r.modeled_flops,
                r.flop_ratio_vs_full,
                r.measured_speedup_pct,
            );
        }
        out
    }
}

/// Time the joint-attention op over assembled sequences at each
/// downscale factor; `reps` repetitions, median reported.
pub fn bench_grid(
    dims: (usize, usize, usize),
    patch: PatchSize,
    d_values: &[usize],
    width: usize,
    heads: usize,
    reps: usize,
) -> Result<BenchTable> {
    if reps < 1 {
        return Err(AppError::config("reps must be at least 1"));
    }
    let mut rng = SeedRng::new(42);
    let weights = JointAttentionWeights::random(width, &mut rng);
    let strength = StrengthField::uniform(0.5);
    let mut rows: Vec<BenchRow> = Vec::new();
    for &d in d_values {
        let layout = build_layout(dims, patch, d, LayoutMode::ParallelCanvas)
            .map_err(AppError::from)?;
        let n = layout.total();
        // Assembled sequence: generation tokens first, then reference.
        let mut segments = vec![Segment::GenVideo; layout.n_gen];
        segments.extend(vec![Segment::RefVideo; layout.n_ref]);
        let mut timesteps = vec![0.5f32; layout.n_gen];
        timesteps.extend(vec![0.0; layout.n_ref]);
        let mut coords = layout.gen_coords.clone();
        coords.extend_from_slice(&layout.ref_coords);
        let seq = TokenSequence {
            feats: rng.normal_tensor(&[n, width]),
            coords,
            timesteps,
            segments,
        };

        let mut times_ms = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut tape = Tape::new();
            let x = tape.constant(seq.feats.clone());
            let start = Instant::now();
            let y = joint_attention(&mut tape, &seq, x, &strength, &weights, heads, 10_000.0)
                .map_err(AppError::from)?;
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            // Touch the output so the op cannot be elided.
            std::hint::black_box(tape.value(y).data()[0]);
            times_ms.push(elapsed);
        }
        times_ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median_ms = times_ms[times_ms.len() / 2];
        let modeled_flops = (n as f64) * (n as f64) * width as f64;
        rows.push(BenchRow {
            downscale: d,
            n_gen: layout.n_gen,
            n_ref: layout.n_ref,
            n_total: n,
            median_ms,
            modeled_flops,
            flop_ratio_vs_full: 1.0,
            measured_speedup_pct: 0.0,
        });
    }
    if let Some(full) = rows.iter().find(|r| r.downscale == d_values[0]).cloned() {
        for r in rows.iter_mut() {
            r.flop_ratio_vs_full = full.modeled_flops / r.modeled_flops;
            r.measured_speedup_pct = (1.0 - r.median_ms / full.median_ms) * 100.0;
        }
    }
    Ok(BenchTable {
        dims: [dims.0, dims.1, dims.2],
        patch: [patch.t, patch.h, patch.w],
        width,
        heads,
        reps,
        rows,
        reference_speedup_note:
            "large-scale reference (hardware-specific, reported for comparison only): \
             2x downscale 25-35% faster, 4x downscale 35-50% faster"
                .to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counts_follow_the_formula() {
        let table = bench_grid(
            (2, 16, 16),
            PatchSize::new(1, 2, 2),
            &[1, 2, 4],
            12,
            2,
            3,
        )
        .unwrap();
        let n_gen = 2 * 8 * 8;
        for row in &table.rows {
            assert_eq!(row.n_gen, n_gen);
            assert_eq!(row.n_ref, n_gen / (row.downscale * row.downscale));
            assert_eq!(row.n_total, row.n_gen + row.n_ref);
        }
        // Modeled FLOP ratio between d=1 and d=4 follows the square of
        // the token-count ratio.
        let full = &table.rows[0];
        let quarter = &table.rows[2];
        let expect = (full.n_total as f64 / quarter.n_total as f64).powi(2);
        assert!((quarter.flop_ratio_vs_full - expect).abs() < 1e-9);
    }
}
