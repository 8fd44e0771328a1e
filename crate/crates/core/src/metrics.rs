//! Control-fidelity metrics against analytic ground truth: silhouette
//! IoU, edge F1 with 1-px tolerance, depth rank correlation, masked
//! PSNR, track error, and envelope correlation, plus the paired sign
//! test used for strength comparisons.

use alloc::vec;
use alloc::vec::Vec;

use crate::canvas::PixelMask;
use crate::media::{AudioFrames, VideoClip};
use crate::synth::{RenderedScene, SceneSpec};

/// Color-distance threshold separating palette colors and background.
pub const COLOR_THRESHOLD: f32 = 0.15;

/// Max-channel pixel mask of "not background" content.
pub fn silhouette_mask(clip: &VideoClip, background: [f32; 3]) -> Vec<bool> {
    let mut mask = Vec::with_capacity(clip.frames * clip.height * clip.width);
    for t in 0..clip.frames {
        for y in 0..clip.height {
            for x in 0..clip.width {
                let p = clip.pixel(t, y, x);
                let d = (p[0] - background[0])
                    .abs()
                    .max((p[1] - background[1]).abs())
                    .max((p[2] - background[2]).abs());
                mask.push(d > COLOR_THRESHOLD);
            }
        }
    }
    mask
}

/// Intersection over union of two boolean masks; 1 when both empty.
pub fn iou(a: &[bool], b: &[bool]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f32 / union as f32
    }
}

/// Discontinuity edge detector: a pixel is an edge when some 4-neighbor
/// differs by more than the threshold in any channel.
pub fn detect_edges(clip: &VideoClip, threshold: f32) -> Vec<bool> {
    let (h, w) = (clip.height, clip.width);
    let mut edges = vec![false; clip.frames * h * w];
    let diff = |a: [f32; 3], b: [f32; 3]| {
        (a[0] - b[0])
            .abs()
            .max((a[1] - b[1]).abs())
            .max((a[2] - b[2]).abs())
    };
    for t in 0..clip.frames {
        for y in 0..h {
            for x in 0..w {
                let p = clip.pixel(t, y, x);
                let mut is_edge = false;
                if y > 0 && diff(p, clip.pixel(t, y - 1, x)) > threshold {
                    is_edge = true;
                }
                if !is_edge && y + 1 < h && diff(p, clip.pixel(t, y + 1, x)) > threshold {
                    is_edge = true;
                }
                if !is_edge && x > 0 && diff(p, clip.pixel(t, y, x - 1)) > threshold {
                    is_edge = true;
                }
                if !is_edge && x + 1 < w && diff(p, clip.pixel(t, y, x + 1)) > threshold {
                    is_edge = true;
                }
                edges[(t * h + y) * w + x] = is_edge;
            }
        }
    }
    edges
}

/// Edge F1 with 1-px (8-neighborhood) tolerance, computed per frame and
/// averaged. Frames where both sides are empty count as 1; one-sided
/// empties count as 0.
pub fn edge_f1(pred: &[bool], truth: &[bool], dims: (usize, usize, usize)) -> f32 {
    let (t_frames, h, w) = dims;
    debug_assert_eq!(pred.len(), t_frames * h * w);
    debug_assert_eq!(truth.len(), pred.len());
    let near = |set: &[bool], t: usize, y: usize, x: usize| -> bool {
        let (yi, xi) = (y as isize, x as isize);
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (ny, nx) = (yi + dy, xi + dx);
                if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                    if set[(t * h + ny as usize) * w + nx as usize] {
                        return true;
                    }
                }
            }
        }
        false
    };
    let mut f1_sum = 0.0f64;
    for t in 0..t_frames {
        let mut n_pred = 0usize;
        let mut n_truth = 0usize;
        let mut matched_pred = 0usize;
        let mut matched_truth = 0usize;
        for y in 0..h {
            for x in 0..w {
                let idx = (t * h + y) * w + x;
                if pred[idx] {
                    n_pred += 1;
                    if near(truth, t, y, x) {
                        matched_pred += 1;
                    }
                }
                if truth[idx] {
                    n_truth += 1;
                    if near(pred, t, y, x) {
                        matched_truth += 1;
                    }
                }
            }
        }
        let f1 = if n_pred == 0 && n_truth == 0 {
            1.0
        } else if n_pred == 0 || n_truth == 0 {
            0.0
        } else {
            let p = matched_pred as f64 / n_pred as f64;
            let r = matched_truth as f64 / n_truth as f64;
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        };
        f1_sum += f1;
    }
    (f1_sum / t_frames as f64) as f32
}

/// Spearman rank correlation with average ranks for ties. Returns 1 for
/// fewer than two points and 0 when either side has zero variance.
pub fn spearman(xs: &[f32], ys: &[f32]) -> f32 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return 1.0;
    }
    let ranks = |vals: &[f32]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(core::cmp::Ordering::Equal));
        let mut out = vec![0.0f64; vals.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && vals[idx[j + 1]] == vals[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                out[k] = avg;
            }
            i = j + 1;
        }
        out
    };
    let rx = ranks(xs);
    let ry = ranks(ys);
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0f64;
    let mut vx = 0.0f64;
    let mut vy = 0.0f64;
    for i in 0..n {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    (cov / crate::mathf::sqrt64(vx * vy)) as f32
}

/// Mean luminance of a clip over each pixel-index region, Spearman-
/// correlated against the region ranks.
pub fn depth_rank_correlation(clip: &VideoClip, regions: &[Vec<usize>], ranks: &[usize]) -> f32 {
    debug_assert_eq!(regions.len(), ranks.len());
    let mut means = Vec::with_capacity(regions.len());
    for region in regions {
        if region.is_empty() {
            means.push(0.0);
            continue;
        }
        let mut acc = 0.0f64;
        for &idx in region {
            let p = &clip.data()[idx * 3..idx * 3 + 3];
            acc += (p[0] + p[1] + p[2]) as f64 / 3.0;
        }
        means.push((acc / region.len() as f64) as f32);
    }
    let rank_f: Vec<f32> = ranks.iter().map(|&r| r as f32).collect();
    spearman(&means, &rank_f)
}

/// PSNR over pixels outside the excluded mask, with predictions clamped
/// to [0, 1]; identical content returns 99 dB.
pub fn psnr_unmasked(pred: &VideoClip, truth: &VideoClip, excluded: Option<&PixelMask>) -> f32 {
    let mut se = 0.0f64;
    let mut count = 0usize;
    for t in 0..truth.frames {
        for y in 0..truth.height {
            for x in 0..truth.width {
                if let Some(m) = excluded {
                    if m.get(t, y, x) {
                        continue;
                    }
                }
                let p = pred.pixel(t, y, x);
                let g = truth.pixel(t, y, x);
                for c in 0..3 {
                    let d = (p[c].clamp(0.0, 1.0) - g[c]) as f64;
                    se += d * d;
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        return 0.0;
    }
    let mse = se / (count * 3) as f64;
    if mse <= 1e-12 {
        99.0
    } else {
        (10.0 * (1.0 / mse).log10()) as f32
    }
}

/// Mean distance in pixels between ground-truth tracks and the
/// color-matched centroid of each shape per frame. Frames where a shape
/// is not found contribute the frame diagonal.
pub fn track_error(clip: &VideoClip, tracks: &[Vec<[f32; 2]>], colors: &[[f32; 3]]) -> f32 {
    let (h, w) = (clip.height, clip.width);
    let diagonal = crate::mathf::sqrt((h * h + w * w) as f32);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for (shape, track) in tracks.iter().enumerate() {
        let color = colors[shape];
        for (t, truth_c) in track.iter().enumerate() {
            let mut sy = 0.0f64;
            let mut sx = 0.0f64;
            let mut n = 0usize;
            for y in 0..h {
                for x in 0..w {
                    let p = clip.pixel(t, y, x);
                    let d = (p[0] - color[0])
                        .abs()
                        .max((p[1] - color[1]).abs())
                        .max((p[2] - color[2]).abs());
                    if d < COLOR_THRESHOLD {
                        sy += y as f64;
                        sx += x as f64;
                        n += 1;
                    }
                }
            }
            let err = if n == 0 {
                diagonal
            } else {
                let cy = sy / n as f64;
                let cx = sx / n as f64;
                crate::mathf::sqrt64(
                    (cy - truth_c[0] as f64) * (cy - truth_c[0] as f64)
                        + (cx - truth_c[1] as f64) * (cx - truth_c[1] as f64),
                ) as f32
            };
            total += err as f64;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        (total / count as f64) as f32
    }
}

/// Spearman correlation between two audio envelopes.
pub fn envelope_correlation(pred: &AudioFrames, control: &AudioFrames) -> f32 {
    spearman(&pred.envelope(), &control.envelope())
}

/// Ground-truth structures for a scene, in metric-ready form.
pub struct SceneTruth {
    pub dims: (usize, usize, usize),
    pub background: [f32; 3],
    pub shape_mask: Vec<bool>,
    pub edges: Vec<bool>,
    /// Flat pixel-index regions: background first, then one per shape.
    pub regions: Vec<Vec<usize>>,
    /// Depth rank per region (0 = background).
    pub region_ranks: Vec<usize>,
    pub tracks: Vec<Vec<[f32; 2]>>,
    pub shape_colors: Vec<[f32; 3]>,
}

pub fn scene_truth(spec: &SceneSpec, render: &RenderedScene) -> SceneTruth {
    let n_px = render.depth_rank.len();
    let shape_mask: Vec<bool> = render.depth_rank.iter().map(|&r| r != 0).collect();
    let mut regions = vec![Vec::new(); spec.shapes.len() + 1];
    for i in 0..n_px {
        let r = render.depth_rank[i];
        if r == 0 {
            regions[0].push(i);
        } else {
            // depth_rank stores layer + 1; find the shape on that layer.
            let layer = (r - 1) as usize;
            let shape = spec
                .shapes
                .iter()
                .position(|s| s.depth_layer == layer)
                .expect("rank comes from a shape layer");
            regions[shape + 1].push(i);
        }
    }
    let mut region_ranks = vec![0usize];
    region_ranks.extend(spec.shapes.iter().map(|s| s.depth_layer + 1));
    SceneTruth {
        dims: spec.dims,
        background: spec.background,
        shape_mask,
        edges: render.edges.clone(),
        regions,
        region_ranks,
        tracks: render.tracks.clone(),
        shape_colors: spec.shapes.iter().map(|s| s.color).collect(),
    }
}

/// Two-sided exact sign test p-value for paired differences; zero
/// differences are discarded. Returns 1 when no informative pairs.
pub fn sign_test_pvalue(diffs: &[f32]) -> f64 {
    let pos = diffs.iter().filter(|&&d| d > 0.0).count();
    let neg = diffs.iter().filter(|&&d| d < 0.0).count();
    let n = pos + neg;
    if n == 0 {
        return 1.0;
    }
    let k = pos.min(neg);
    // P(X <= k) for X ~ Binomial(n, 1/2), doubled and capped at 1.
    let mut cdf = 0.0f64;
    for i in 0..=k {
        cdf += binom(n, i);
    }
    let p = cdf * libm::pow(0.5, n as f64) * 2.0;
    p.min(1.0)
}

fn binom(n: usize, k: usize) -> f64 {
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_control, random_scene, render_scene, SynthConfig};

    fn truth_for(seed: u64) -> (SceneSpec, RenderedScene, SceneTruth) {
        let cfg = SynthConfig::default();
        let spec = random_scene(seed, &cfg);
        let render = render_scene(&spec).unwrap();
        let truth = scene_truth(&spec, &render);
        (spec, render, truth)
    }

    #[test]
    fn ground_truth_scores_itself_perfectly() {
        let (spec, render, truth) = truth_for(101);
        // IoU of the detected silhouette of the GT video vs the GT mask.
        let mask = silhouette_mask(&render.video, spec.background);
        assert_eq!(iou(&mask, &truth.shape_mask), 1.0);
        // Edge F1 of detected edges vs analytic edges, 1-px tolerance.
        let detected = detect_edges(&render.video, COLOR_THRESHOLD);
        let f1 = edge_f1(&detected, &truth.edges, spec.dims);
        assert_eq!(f1, 1.0, "F1 = {f1}");
        // Depth rank correlation on the GT depth canvas.
        let depth = make_control(&spec, &render, crate::canvas::ControlKind::Depth).unwrap();
        let depth_clip = depth.as_video().unwrap();
        // Regions at the canvas resolution.
        let dspec = spec.clone();
        let drender = render_scene(&SceneSpec {
            dims: (spec.dims.0, spec.dims.1 / 2, spec.dims.2 / 2),
            shapes: dspec
                .shapes
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.center = [s.center[0] / 2.0, s.center[1] / 2.0];
                    s.radius /= 2.0;
                    s.velocity = [s.velocity[0] / 2.0, s.velocity[1] / 2.0];
                    s.osc_amp = [s.osc_amp[0] / 2.0, s.osc_amp[1] / 2.0];
                    s
                })
                .collect(),
            ..dspec
        });
        if let Ok(drender) = drender {
            let dtruth = scene_truth(
                &SceneSpec {
                    dims: (spec.dims.0, spec.dims.1 / 2, spec.dims.2 / 2),
                    ..spec.clone()
                },
                &drender,
            );
            let corr = depth_rank_correlation(depth_clip, &dtruth.regions, &dtruth.region_ranks);
            assert!((corr - 1.0).abs() < 1e-6, "corr = {corr}");
        }
    }

    #[test]
    fn constant_background_video_scores_zero_iou() {
        let (spec, _render, truth) = truth_for(102);
        let constant = VideoClip::filled(spec.dims.0, spec.dims.1, spec.dims.2, spec.background);
        let mask = silhouette_mask(&constant, spec.background);
        let v = iou(&mask, &truth.shape_mask);
        assert!(v < 0.05, "IoU = {v}");
    }

    #[test]
    fn psnr_is_capped_on_identical_and_penalizes_noise() {
        let (_, render, _) = truth_for(103);
        assert_eq!(psnr_unmasked(&render.video, &render.video, None), 99.0);
        let mut noisy = render.video.clone();
        let mut rng = crate::rng::SeedRng::new(5);
        for v in noisy.data_mut() {
            *v = (*v + rng.uniform(-0.2, 0.2)).clamp(0.0, 1.0);
        }
        let p = psnr_unmasked(&noisy, &render.video, None);
        assert!(p > 10.0 && p < 40.0, "PSNR {p}");
    }

    #[test]
    fn psnr_ignores_excluded_region() {
        let (spec, render, _) = truth_for(104);
        let mut damaged = render.video.clone();
        let mut mask = PixelMask::empty(spec.dims.0, spec.dims.1, spec.dims.2);
        mask.mark_rect(0, 0, 8, 8);
        for t in 0..spec.dims.0 {
            for y in 0..8 {
                for x in 0..8 {
                    damaged.set_pixel(t, y, x, [1.0, 1.0, 1.0]);
                }
            }
        }
        assert_eq!(psnr_unmasked(&damaged, &render.video, Some(&mask)), 99.0);
        assert!(psnr_unmasked(&damaged, &render.video, None) < 99.0);
    }

    #[test]
    fn track_error_is_small_on_ground_truth() {
        let (spec, render, truth) = truth_for(105);
        let err = track_error(&render.video, &truth.tracks, &truth.shape_colors);
        // Centroids of symmetric shapes sit on the track; triangles are
        // biased by up to r/3, occlusion adds a little more.
        assert!(err < 4.0, "track error {err}");
        let _ = spec;
    }

    #[test]
    fn spearman_handles_ties_and_perfect_orders() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]), -1.0);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.5, 2.5, 4.0]);
        assert!((r - 1.0).abs() < 1e-6);
    }

    #[test]
    fn envelope_correlation_tracks_shared_shape() {
        let mut a = AudioFrames::zeros(8, 2);
        let mut b = AudioFrames::zeros(8, 2);
        for t in 0..8 {
            let e = t as f32 / 8.0;
            a.data_mut()[t * 2] = e;
            a.data_mut()[t * 2 + 1] = e;
            b.data_mut()[t * 2] = 2.0 * e;
            b.data_mut()[t * 2 + 1] = 2.0 * e;
        }
        assert_eq!(envelope_correlation(&a, &b), 1.0);
    }

    #[test]
    fn sign_test_extremes() {
        // All positive: p small for n = 10.
        let p = sign_test_pvalue(&[1.0; 10]);
        assert!(p < 0.01, "p = {p}");
        // Balanced: p = 1.
        let p = sign_test_pvalue(&[1.0, -1.0, 1.0, -1.0]);
        assert!(p > 0.5);
        // No informative pairs.
        assert_eq!(sign_test_pvalue(&[0.0, 0.0]), 1.0);
    }
}
