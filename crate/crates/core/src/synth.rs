//! Deterministic procedural scenes with analytic ground truth: moving
//! flat-color shapes over a flat background, exact depth/edge/track
//! annotations, area-coupled audio, and the per-modality control
//! canvases derived from them.
//!
//! All rendered values live on the 8-bit color grid so files round-trip
//! bit-exactly, and every control is recomputable from the scene spec
//! alone (exact pairing by construction).

use alloc::vec;
use alloc::vec::Vec;

use crate::canvas::{composite_controls, encode_mask_region, Canvas, ControlKind, PixelMask, FILL_GREEN};
use crate::error::{invalid, Result};
use crate::media::{AudioFrames, VideoClip};
use crate::rng::SeedRng;

/// Quantize to the 8-bit color grid.
#[inline]
fn q(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8 as f32 / 255.0
}

fn qrgb(rgb: [f32; 3]) -> [f32; 3] {
    [q(rgb[0]), q(rgb[1]), q(rgb[2])]
}

/// Shape colors (byte grid, no greens near the inpainting fill color).
pub const SHAPE_PALETTE: &[[u8; 3]] = &[
    [204, 0, 0],
    [0, 102, 204],
    [230, 204, 0],
    [204, 0, 204],
    [0, 204, 204],
    [255, 153, 0],
];

pub const BACKGROUND_PALETTE: &[[u8; 3]] = &[[26, 26, 26], [13, 26, 51], [45, 26, 26]];

const SILENT_GRAY: [f32; 3] = [128.0 / 255.0, 128.0 / 255.0, 128.0 / 255.0];

fn rgb(c: [u8; 3]) -> [f32; 3] {
    [c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

/// One shape with a linear + sinusoidal trajectory.
#[derive(Debug, Clone)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub color: [f32; 3],
    pub radius: f32,
    /// Radius change per frame (0 for constant size).
    pub radius_growth: f32,
    /// Center `(y, x)` at frame 0, in pixels.
    pub center: [f32; 2],
    /// Linear velocity `(dy, dx)` in pixels per frame.
    pub velocity: [f32; 2],
    /// Sinusoidal displacement amplitude `(ay, ax)` in pixels.
    pub osc_amp: [f32; 2],
    /// Radians per frame.
    pub osc_freq: f32,
    pub osc_phase: f32,
    /// Unique per scene; higher layers occlude lower ones.
    pub depth_layer: usize,
    /// Radius pulse factor per frame (1 = none), used by the
    /// talking-boxes modality.
    pub pulse: Vec<f32>,
}

impl ShapeSpec {
    pub fn center_at(&self, t: usize) -> [f32; 2] {
        let tf = t as f32;
        let s = crate::mathf::sin(self.osc_freq * tf + self.osc_phase);
        [
            self.center[0] + self.velocity[0] * tf + self.osc_amp[0] * s,
            self.center[1] + self.velocity[1] * tf + self.osc_amp[1] * s,
        ]
    }

    pub fn radius_at(&self, t: usize) -> f32 {
        let base = self.radius + self.radius_growth * t as f32;
        let pulse = self.pulse.get(t).copied().unwrap_or(1.0);
        base * pulse
    }

    fn contains(&self, t: usize, y: f32, x: f32, scale: f32) -> bool {
        let c = self.center_at(t);
        let (cy, cx) = (c[0] / scale, c[1] / scale);
        let r = self.radius_at(t) / scale;
        let (dy, dx) = (y - cy, x - cx);
        match self.kind {
            ShapeKind::Circle => dy * dy + dx * dx <= r * r,
            ShapeKind::Square => dy.abs() <= r && dx.abs() <= r,
            ShapeKind::Triangle => {
                // Upward triangle: apex at cy - r, base at cy + r.
                dy >= -r && dy <= r && dx.abs() <= (dy + r) / 2.0
            }
        }
    }
}

/// A full procedural scene.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub seed: u64,
    pub dims: (usize, usize, usize),
    pub background: [f32; 3],
    pub shapes: Vec<ShapeSpec>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() || self.shapes.len() > 4 {
            return Err(invalid("SceneSpec", "shape count must be 1..=4"));
        }
        let mut layers: Vec<usize> = self.shapes.iter().map(|s| s.depth_layer).collect();
        layers.sort_unstable();
        layers.dedup();
        if layers.len() != self.shapes.len() {
            return Err(invalid("SceneSpec", "depth layers must be unique"));
        }
        let (t_frames, h, w) = self.dims;
        for shape in &self.shapes {
            for t in 0..t_frames {
                let c = shape.center_at(t);
                let r = shape.radius_at(t);
                if c[0] - r < 1.0
                    || c[1] - r < 1.0
                    || c[0] + r > (h - 1) as f32 - 1.0
                    || c[1] + r > (w - 1) as f32 - 1.0
                {
                    return Err(invalid(
                        "SceneSpec",
                        alloc::format!("shape leaves the frame at t = {t}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Rasterized scene with its analytic annotations at full resolution.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub video: VideoClip,
    /// Per (t, y, x): 0 for background, else `depth_layer + 1` of the
    /// visible shape.
    pub depth_rank: Vec<u8>,
    /// Per (t, y, x): 1-px silhouette boundary pixels.
    pub edges: Vec<bool>,
    /// Exact float center per shape per frame.
    pub tracks: Vec<Vec<[f32; 2]>>,
}

fn rasterize_ids(spec: &SceneSpec, scale: usize) -> (usize, usize, usize, Vec<u8>) {
    let (t_frames, h, w) = spec.dims;
    let (sh, sw) = (h / scale, w / scale);
    let mut ids = vec![0u8; t_frames * sh * sw];
    // Paint far-to-near so nearer layers overwrite.
    let mut order: Vec<usize> = (0..spec.shapes.len()).collect();
    order.sort_by_key(|&i| spec.shapes[i].depth_layer);
    for t in 0..t_frames {
        for y in 0..sh {
            for x in 0..sw {
                let mut id = 0u8;
                for &si in &order {
                    if spec.shapes[si].contains(t, y as f32, x as f32, scale as f32) {
                        id = si as u8 + 1;
                    }
                }
                ids[(t * sh + y) * sw + x] = id;
            }
        }
    }
    (t_frames, sh, sw, ids)
}

/// Deterministic rasterization plus exact annotations.
pub fn render_scene(spec: &SceneSpec) -> Result<RenderedScene> {
    spec.validate()?;
    let (t_frames, h, w, ids) = rasterize_ids(spec, 1);
    let mut data = Vec::with_capacity(t_frames * h * w * 3);
    for &id in &ids {
        let color = if id == 0 {
            spec.background
        } else {
            spec.shapes[id as usize - 1].color
        };
        data.extend_from_slice(&color);
    }
    let video = VideoClip::new(t_frames, h, w, data)?;

    let mut depth_rank = vec![0u8; ids.len()];
    for (d, &id) in depth_rank.iter_mut().zip(&ids) {
        if id != 0 {
            *d = spec.shapes[id as usize - 1].depth_layer as u8 + 1;
        }
    }

    let mut edges = vec![false; ids.len()];
    let at = |t: usize, y: isize, x: isize| -> u8 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0
        } else {
            ids[(t * h + y as usize) * w + x as usize]
        }
    };
    for t in 0..t_frames {
        for y in 0..h {
            for x in 0..w {
                let id = ids[(t * h + y) * w + x];
                if id == 0 {
                    continue;
                }
                let (yi, xi) = (y as isize, x as isize);
                if at(t, yi - 1, xi) != id
                    || at(t, yi + 1, xi) != id
                    || at(t, yi, xi - 1) != id
                    || at(t, yi, xi + 1) != id
                {
                    edges[(t * h + y) * w + x] = true;
                }
            }
        }
    }

    let tracks = spec
        .shapes
        .iter()
        .map(|s| (0..t_frames).map(|t| s.center_at(t)).collect())
        .collect();

    Ok(RenderedScene {
        video,
        depth_rank,
        edges,
        tracks,
    })
}

/// Depth gray level for a layer (brighter = nearer); background is the
/// darkest level.
pub fn depth_gray(layer: usize, max_layers: usize) -> f32 {
    q(0.25 + 0.6 * (layer + 1) as f32 / max_layers.max(1) as f32)
}

pub const DEPTH_BACKGROUND_GRAY: f32 = 20.0 / 255.0;

/// Build the control canvas of the requested kind for a scene.
pub fn make_control(spec: &SceneSpec, render: &RenderedScene, kind: ControlKind) -> Result<Canvas> {
    make_control_at(spec, render, kind, kind.downscale())
}

/// As [`make_control`] with an explicit downscale factor (used by the
/// control-grid ablation).
pub fn make_control_at(
    spec: &SceneSpec,
    render: &RenderedScene,
    kind: ControlKind,
    d: usize,
) -> Result<Canvas> {
    let (t_frames, h, w) = spec.dims;
    match kind {
        ControlKind::Depth => {
            let (_, sh, sw, ids) = rasterize_ids(spec, d);
            let max_layers = spec.shapes.iter().map(|s| s.depth_layer + 1).max().unwrap_or(1);
            let mut data = Vec::with_capacity(ids.len() * 3);
            for &id in &ids {
                let g = if id == 0 {
                    DEPTH_BACKGROUND_GRAY
                } else {
                    depth_gray(spec.shapes[id as usize - 1].depth_layer, max_layers)
                };
                data.extend_from_slice(&[g, g, g]);
            }
            Ok(Canvas::video(
                VideoClip::new(t_frames, sh, sw, data)?,
                kind,
                d,
            ))
        }
        ControlKind::Edges => {
            let (_, sh, sw, ids) = rasterize_ids(spec, d);
            let at = |t: usize, y: isize, x: isize| -> u8 {
                if y < 0 || x < 0 || y >= sh as isize || x >= sw as isize {
                    0
                } else {
                    ids[(t * sh + y as usize) * sw + x as usize]
                }
            };
            let mut data = vec![0.0f32; ids.len() * 3];
            for t in 0..t_frames {
                for y in 0..sh {
                    for x in 0..sw {
                        let id = ids[(t * sh + y) * sw + x];
                        if id == 0 {
                            continue;
                        }
                        let (yi, xi) = (y as isize, x as isize);
                        if at(t, yi - 1, xi) != id
                            || at(t, yi + 1, xi) != id
                            || at(t, yi, xi - 1) != id
                            || at(t, yi, xi + 1) != id
                        {
                            let o = ((t * sh + y) * sw + x) * 3;
                            data[o] = 1.0;
                            data[o + 1] = 1.0;
                            data[o + 2] = 1.0;
                        }
                    }
                }
            }
            Ok(Canvas::video(
                VideoClip::new(t_frames, sh, sw, data)?,
                kind,
                d,
            ))
        }
        ControlKind::Inpainting => {
            let mask = random_rect_mask(spec.seed, t_frames, h, w);
            let filled = encode_mask_region(&render.video, &mask, FILL_GREEN)?;
            Ok(Canvas::video(filled, kind, d))
        }
        ControlKind::Tracks => {
            let canvas = track_dots(spec, d)?;
            Ok(Canvas::video(canvas, kind, d))
        }
        ControlKind::ShiftedView => {
            let mut rng = SeedRng::substream(spec.seed, 7);
            let lo = (h / 8) as i32;
            let hi = (h / 4) as i32;
            let mut draw = || {
                let m = rng.below((hi - lo + 1) as usize) as i32 + lo;
                if rng.below(2) == 0 {
                    m
                } else {
                    -m
                }
            };
            let (dy, dx) = (draw(), draw());
            let mut shifted = spec.clone();
            for s in &mut shifted.shapes {
                s.center[0] += dy as f32;
                s.center[1] += dx as f32;
            }
            // Shifted shapes may clip the border; skip the in-frame
            // validation and rasterize directly.
            let (_, sh, sw, ids) = rasterize_ids(&shifted, 1);
            let mut data = Vec::with_capacity(ids.len() * 3);
            for &id in &ids {
                let color = if id == 0 {
                    spec.background
                } else {
                    spec.shapes[id as usize - 1].color
                };
                data.extend_from_slice(&color);
            }
            Ok(Canvas::video(
                VideoClip::new(t_frames, sh, sw, data)?,
                kind,
                d,
            ))
        }
        ControlKind::Composite => {
            let depth = make_control_at(spec, render, ControlKind::Depth, d)?;
            let dots = track_dots(spec, d)?;
            let mut mask = PixelMask::empty(t_frames, h / d, w / d);
            for t in 0..t_frames {
                for y in 0..h / d {
                    for x in 0..w / d {
                        if dots.pixel(t, y, x) != [0.0, 0.0, 0.0] {
                            mask.set(t, y, x, true);
                        }
                    }
                }
            }
            let depth_clip = depth.as_video().expect("depth canvas is video").clone();
            let merged =
                composite_controls(&[(depth_clip, PixelMask::full(t_frames, h / d, w / d)), (dots, mask)])?;
            Ok(Canvas::video(merged, kind, d))
        }
        ControlKind::AudioIntensity | ControlKind::TalkingBoxes => Err(invalid(
            "make_control",
            "audio-side canvases are built by make_audio / make_talking_boxes",
        )),
    }
}

/// Colored track dots on black at the kind's downscale.
fn track_dots(spec: &SceneSpec, d: usize) -> Result<VideoClip> {
    let (t_frames, h, w) = spec.dims;
    let (sh, sw) = (h / d, w / d);
    let mut clip = VideoClip::filled(t_frames, sh, sw, [0.0, 0.0, 0.0]);
    let dot_r = 1.2f32;
    for t in 0..t_frames {
        for shape in &spec.shapes {
            let c = shape.center_at(t);
            let (cy, cx) = (c[0] / d as f32, c[1] / d as f32);
            let y0 = (cy - dot_r).floor().max(0.0) as usize;
            let y1 = ((cy + dot_r).ceil() as usize).min(sh - 1);
            let x0 = (cx - dot_r).floor().max(0.0) as usize;
            let x1 = ((cx + dot_r).ceil() as usize).min(sw - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (dy, dx) = (y as f32 - cy, x as f32 - cx);
                    if dy * dy + dx * dx <= dot_r * dot_r {
                        clip.set_pixel(t, y, x, shape.color);
                    }
                }
            }
        }
    }
    Ok(clip)
}

/// Static rectangular mask (shared by all frames) with area fraction in
/// [0.10, 0.60], derived deterministically from the seed.
pub fn random_rect_mask(seed: u64, t_frames: usize, h: usize, w: usize) -> PixelMask {
    let mut rng = SeedRng::substream(seed, 11);
    // Side fractions in [0.32, 0.77] give areas in [0.102, 0.593].
    let lo_h = ((0.32 * h as f32).ceil() as usize).max(1);
    let hi_h = (0.77 * h as f32).floor() as usize;
    let lo_w = ((0.32 * w as f32).ceil() as usize).max(1);
    let hi_w = (0.77 * w as f32).floor() as usize;
    let rh = lo_h + rng.below(hi_h - lo_h + 1);
    let rw = lo_w + rng.below(hi_w - lo_w + 1);
    let y0 = rng.below(h - rh + 1);
    let x0 = rng.below(w - rw + 1);
    let mut mask = PixelMask::empty(t_frames, h, w);
    mask.mark_rect(y0, x0, rh, rw);
    mask
}

/// Visible shape-area fraction per video frame, exact from the id map.
pub fn area_envelope(spec: &SceneSpec) -> Vec<f32> {
    let (t_frames, h, w) = spec.dims;
    let (_, _, _, ids) = rasterize_ids(spec, 1);
    (0..t_frames)
        .map(|t| {
            let covered = ids[t * h * w..(t + 1) * h * w]
                .iter()
                .filter(|&&id| id != 0)
                .count();
            covered as f32 / (h * w) as f32
        })
        .collect()
}

fn interp_envelope(env_video: &[f32], ta: usize, ratio: usize) -> Vec<f32> {
    (0..ta)
        .map(|j| {
            let vt = j as f32 / ratio as f32;
            let i0 = vt.floor() as usize;
            let i1 = (i0 + 1).min(env_video.len() - 1);
            let frac = vt - i0 as f32;
            env_video[i0] * (1.0 - frac) + env_video[i1] * frac
        })
        .collect()
}

/// Target audio (per-scene spectral pattern gated by the visible-area
/// envelope) and its sonified control (the target's energy envelope
/// broadcast across feature dims).
pub fn make_audio(
    spec: &SceneSpec,
    audio_ratio: usize,
    feat_dim: usize,
) -> Result<(AudioFrames, AudioFrames)> {
    let t_frames = spec.dims.0;
    let ta = t_frames * audio_ratio;
    let env = interp_envelope(&area_envelope(spec), ta, audio_ratio);

    // Unit-RMS spectral pattern, fixed per scene.
    let mut rng = SeedRng::substream(spec.seed, 13);
    let raw: Vec<f32> = (0..feat_dim)
        .map(|_| {
            let mag = rng.uniform(0.5, 1.0);
            if rng.below(2) == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let rms = crate::mathf::sqrt(raw.iter().map(|v| v * v).sum::<f32>() / feat_dim as f32);
    let pattern: Vec<f32> = raw.iter().map(|v| v / rms).collect();

    let mut target = Vec::with_capacity(ta * feat_dim);
    let mut control = Vec::with_capacity(ta * feat_dim);
    for &e in &env {
        let gain = 0.5 * e;
        for p in &pattern {
            target.push(gain * p);
        }
        for _ in 0..feat_dim {
            control.push(gain);
        }
    }
    Ok((
        AudioFrames::new(ta, feat_dim, target)?,
        AudioFrames::new(ta, feat_dim, control)?,
    ))
}

/// A paired training/evaluation example.
#[derive(Debug, Clone)]
pub struct Sample {
    pub target_video: VideoClip,
    pub target_audio: AudioFrames,
    pub video_canvas: Option<Canvas>,
    pub audio_canvas: Option<Canvas>,
    pub kind: ControlKind,
    pub cond_id: usize,
    pub seed: u64,
    pub dims: (usize, usize, usize),
}

/// Generation-wide dimensions and audio geometry.
#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub dims: (usize, usize, usize),
    pub audio_ratio: usize,
    pub audio_feat_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dims: (8, 32, 32),
            audio_ratio: 4,
            audio_feat_dim: 8,
        }
    }
}

/// Deterministic random scene: 1-4 shapes with safe trajectories.
pub fn random_scene(seed: u64, cfg: &SynthConfig) -> SceneSpec {
    let (t_frames, h, w) = cfg.dims;
    let mut rng = SeedRng::new(seed);
    let background = rgb(BACKGROUND_PALETTE[rng.below(BACKGROUND_PALETTE.len())]);
    let count = 1 + rng.below(4);
    let mut layers: Vec<usize> = (0..4).collect();
    // Fisher-Yates keyed by the scene stream keeps layers unique.
    for i in (1..layers.len()).rev() {
        let j = rng.below(i + 1);
        layers.swap(i, j);
    }
    let min_side = h.min(w) as f32;
    // Motion budgets scale with frame size so the worst-case reach
    // always leaves a non-empty center range (frames of 8 px and up).
    let v_max = min_side / (16.0 * t_frames as f32);
    let amp_max = min_side / 32.0;
    let reach = min_side / 7.0 + v_max * t_frames as f32 + amp_max + 1.0;
    let shapes = (0..count)
        .map(|i| {
            let kind = match rng.below(3) {
                0 => ShapeKind::Circle,
                1 => ShapeKind::Square,
                _ => ShapeKind::Triangle,
            };
            let color = rgb(SHAPE_PALETTE[rng.below(SHAPE_PALETTE.len())]);
            let radius = rng.uniform(min_side / 8.0, min_side / 7.0);
            let velocity = [rng.uniform(-v_max, v_max), rng.uniform(-v_max, v_max)];
            let osc_amp = [rng.uniform(0.0, amp_max), rng.uniform(0.0, amp_max)];
            let cy = rng.uniform(reach, (h - 1) as f32 - reach);
            let cx = rng.uniform(reach, (w - 1) as f32 - reach);
            ShapeSpec {
                kind,
                color,
                radius,
                radius_growth: 0.0,
                center: [cy, cx],
                velocity,
                osc_amp,
                osc_freq: rng.uniform(0.2, 0.9),
                osc_phase: rng.uniform(0.0, 6.28),
                depth_layer: layers[i],
                pulse: Vec::new(),
            }
        })
        .collect();
    SceneSpec {
        seed,
        dims: cfg.dims,
        background,
        shapes,
    }
}

/// Build one paired sample for the given modality.
pub fn make_sample(kind: ControlKind, seed: u64, cfg: &SynthConfig) -> Result<Sample> {
    make_sample_at(kind, seed, cfg, None)
}

/// As [`make_sample`] with an optional downscale override for the
/// video canvas.
pub fn make_sample_at(
    kind: ControlKind,
    seed: u64,
    cfg: &SynthConfig,
    downscale: Option<usize>,
) -> Result<Sample> {
    if kind == ControlKind::TalkingBoxes {
        let speakers = 1 + (seed % 3) as usize;
        return make_talking_boxes(seed, speakers, cfg, true);
    }
    let spec = random_scene(seed, cfg);
    let render = render_scene(&spec)?;
    let (target_audio, audio_control) = make_audio(&spec, cfg.audio_ratio, cfg.audio_feat_dim)?;
    let d = downscale.unwrap_or(kind.downscale());
    let (video_canvas, audio_canvas) = match kind {
        ControlKind::AudioIntensity => (None, Some(Canvas::audio(audio_control, kind))),
        _ => (Some(make_control_at(&spec, &render, kind, d)?), None),
    };
    Ok(Sample {
        target_video: render.video,
        target_audio,
        video_canvas,
        audio_canvas,
        kind,
        cond_id: kind.cond_id(),
        seed,
        dims: cfg.dims,
    })
}

/// The scene spec behind a sample seed, for ground-truth metrics.
pub fn sample_scene(kind: ControlKind, seed: u64, cfg: &SynthConfig) -> SceneSpec {
    if kind == ControlKind::TalkingBoxes {
        let speakers = 1 + (seed % 3) as usize;
        talking_scene(seed, speakers, cfg, true).0
    } else {
        random_scene(seed, cfg)
    }
}

/// Per-speaker feature band: contiguous block of feature dims.
pub fn speaker_band(speaker: usize, speakers: usize, feat_dim: usize) -> (usize, usize) {
    let width = feat_dim / speakers.max(1);
    (speaker * width, (speaker + 1) * width)
}

const BOX_ACTIVE_LEVEL: f32 = 0.7;

/// Joint audio-visual sample: pulsing shapes gated by per-speaker
/// activity, box-layout video canvas (colored when active, gray when
/// silent), and the mixed audio as the audio canvas.
fn talking_scene(
    seed: u64,
    speakers: usize,
    cfg: &SynthConfig,
    turn_taking: bool,
) -> (SceneSpec, Vec<Vec<bool>>) {
    let (t_frames, h, w) = cfg.dims;
    let mut rng = SeedRng::substream(seed, 17);

    // Activity schedules over video frames.
    let mut activity = vec![vec![false; t_frames]; speakers];
    if turn_taking {
        // Contiguous turns partition the timeline exactly.
        for t in 0..t_frames {
            let turn = t * speakers / t_frames;
            activity[turn.min(speakers - 1)][t] = true;
        }
    } else {
        for row in activity.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.below(2) == 0;
            }
        }
    }

    // Fixed slots in a 2x2 grid.
    let slots = [
        [0.3f32, 0.3f32],
        [0.3, 0.7],
        [0.7, 0.3],
        [0.7, 0.7],
    ];
    let radius = h.min(w) as f32 / 8.0;
    let shapes: Vec<ShapeSpec> = (0..speakers)
        .map(|i| {
            let pulse: Vec<f32> = (0..t_frames)
                .map(|t| {
                    if activity[i][t] {
                        1.0 + 0.3 * crate::mathf::sin(0.9 * t as f32)
                    } else {
                        1.0
                    }
                })
                .collect();
            ShapeSpec {
                kind: ShapeKind::Circle,
                color: rgb(SHAPE_PALETTE[i % SHAPE_PALETTE.len()]),
                radius,
                radius_growth: 0.0,
                center: [slots[i][0] * h as f32, slots[i][1] * w as f32],
                velocity: [0.0, 0.0],
                osc_amp: [0.0, 0.0],
                osc_freq: 0.0,
                osc_phase: 0.0,
                depth_layer: i,
                pulse,
            }
        })
        .collect();
    let spec = SceneSpec {
        seed,
        dims: cfg.dims,
        background: rgb(BACKGROUND_PALETTE[0]),
        shapes,
    };
    (spec, activity)
}

pub fn make_talking_boxes(
    seed: u64,
    speakers: usize,
    cfg: &SynthConfig,
    turn_taking: bool,
) -> Result<Sample> {
    if speakers == 0 || speakers > 4 {
        return Err(invalid("make_talking_boxes", "speakers must be 1..=4"));
    }
    let (t_frames, h, w) = cfg.dims;
    let (spec, activity) = talking_scene(seed, speakers, cfg, turn_taking);
    let render = render_scene(&spec)?;

    // Audio: per-speaker band energy gated by activity; the mix is both
    // the target and the reference audio.
    let ta = t_frames * cfg.audio_ratio;
    let f_dim = cfg.audio_feat_dim;
    let mut audio = vec![0.0f32; ta * f_dim];
    for j in 0..ta {
        let vt = j / cfg.audio_ratio;
        for (i, act) in activity.iter().enumerate() {
            if act[vt.min(t_frames - 1)] {
                let (b0, b1) = speaker_band(i, speakers, f_dim);
                for b in b0..b1 {
                    audio[j * f_dim + b] = BOX_ACTIVE_LEVEL;
                }
            }
        }
    }
    let target_audio = AudioFrames::new(ta, f_dim, audio)?;

    // Box canvas: filled squares at the slots, colored when active.
    let mut boxes = VideoClip::filled(t_frames, h, w, [0.0, 0.0, 0.0]);
    let half = (h.min(w) as f32 / 8.0 * 1.2) as isize;
    for t in 0..t_frames {
        for (i, shape) in spec.shapes.iter().enumerate() {
            let color = if activity[i][t] {
                qrgb(shape.color)
            } else {
                SILENT_GRAY
            };
            let cy = shape.center[0] as isize;
            let cx = shape.center[1] as isize;
            for y in (cy - half).max(0)..(cy + half + 1).min(h as isize) {
                for x in (cx - half).max(0)..(cx + half + 1).min(w as isize) {
                    boxes.set_pixel(t, y as usize, x as usize, color);
                }
            }
        }
    }

    Ok(Sample {
        target_video: render.video,
        target_audio: target_audio.clone(),
        video_canvas: Some(Canvas::video(boxes, ControlKind::TalkingBoxes, 1)),
        audio_canvas: Some(Canvas::audio(target_audio, ControlKind::TalkingBoxes)),
        kind: ControlKind::TalkingBoxes,
        cond_id: ControlKind::TalkingBoxes.cond_id(),
        seed,
        dims: cfg.dims,
    })
}
