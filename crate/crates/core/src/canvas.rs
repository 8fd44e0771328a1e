//! Parallel-canvas construction: sequence layout bookkeeping,
//! small-to-large grid coordinate mapping, control compositing, and
//! mask-fill encoding.
//!
//! A reference canvas at downscale `d` keeps the temporal axis at full
//! resolution and shrinks only the spatial axes; each reference token
//! sits at the center of the `d x d` block of target tokens it covers,
//! so the ordinary rotary machinery consumes its fractional coords.

use alloc::vec;
use alloc::vec::Vec;

use crate::codec::{audio_tokenize, patchify, PatchSize};
use crate::error::{invalid, Error, Result};
use crate::media::{AudioFrames, VideoClip};
use crate::model::ModelConfig;
use crate::sequence::{Segment, StrengthField, TokenSequence};
use crate::tensor::Tensor;

/// Fill color for masked/hole regions (#66FF00).
pub const FILL_GREEN: [f32; 3] = [102.0 / 255.0, 1.0, 0.0];

/// Supported control modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ControlKind {
    Depth,
    Edges,
    Inpainting,
    Tracks,
    ShiftedView,
    Composite,
    AudioIntensity,
    TalkingBoxes,
}

impl ControlKind {
    /// Canvas downscale factor used when building this control.
    pub fn downscale(self) -> usize {
        match self {
            ControlKind::Depth | ControlKind::Edges | ControlKind::Tracks | ControlKind::Composite => 2,
            ControlKind::Inpainting | ControlKind::ShiftedView | ControlKind::TalkingBoxes => 1,
            ControlKind::AudioIntensity => 1,
        }
    }

    /// Condition-id embedding slot (0 is reserved for unconditional).
    pub fn cond_id(self) -> usize {
        match self {
            ControlKind::Depth => 1,
            ControlKind::Edges => 2,
            ControlKind::Inpainting => 3,
            ControlKind::Tracks => 4,
            ControlKind::ShiftedView => 5,
            ControlKind::Composite => 6,
            ControlKind::AudioIntensity => 7,
            ControlKind::TalkingBoxes => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ControlKind::Depth => "depth",
            ControlKind::Edges => "edges",
            ControlKind::Inpainting => "inpainting",
            ControlKind::Tracks => "tracks",
            ControlKind::ShiftedView => "shifted_view",
            ControlKind::Composite => "composite",
            ControlKind::AudioIntensity => "audio_intensity",
            ControlKind::TalkingBoxes => "talking_boxes",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "depth" => ControlKind::Depth,
            "edges" => ControlKind::Edges,
            "inpainting" => ControlKind::Inpainting,
            "tracks" => ControlKind::Tracks,
            "shifted_view" => ControlKind::ShiftedView,
            "composite" => ControlKind::Composite,
            "audio_intensity" => ControlKind::AudioIntensity,
            "talking_boxes" => ControlKind::TalkingBoxes,
            other => return Err(invalid("ControlKind", alloc::format!("unknown kind {other:?}"))),
        })
    }
}

/// A reference control signal plus its layout metadata.
#[derive(Debug, Clone)]
pub enum CanvasContent {
    Video(VideoClip),
    Audio(AudioFrames),
}

#[derive(Debug, Clone)]
pub struct Canvas {
    pub content: CanvasContent,
    pub downscale: usize,
    pub fill_color: [f32; 3],
    pub kind: ControlKind,
}

impl Canvas {
    pub fn video(clip: VideoClip, kind: ControlKind, downscale: usize) -> Self {
        Canvas {
            content: CanvasContent::Video(clip),
            downscale,
            fill_color: FILL_GREEN,
            kind,
        }
    }

    pub fn audio(frames: AudioFrames, kind: ControlKind) -> Self {
        Canvas {
            content: CanvasContent::Audio(frames),
            downscale: 1,
            fill_color: FILL_GREEN,
            kind,
        }
    }

    pub fn as_video(&self) -> Option<&VideoClip> {
        match &self.content {
            CanvasContent::Video(v) => Some(v),
            CanvasContent::Audio(_) => None,
        }
    }

    pub fn as_audio(&self) -> Option<&AudioFrames> {
        match &self.content {
            CanvasContent::Audio(a) => Some(a),
            CanvasContent::Video(_) => None,
        }
    }

    /// Check content dims against the target dims: spatial axes scale
    /// by the downscale factor, the temporal axis never does.
    pub fn validate_for_target(&self, dims: (usize, usize, usize)) -> Result<()> {
        match &self.content {
            CanvasContent::Video(v) => {
                let (t, h, w) = dims;
                if self.downscale == 0 || h % self.downscale != 0 || w % self.downscale != 0 {
                    return Err(invalid(
                        "Canvas",
                        alloc::format!("target {h}x{w} not divisible by downscale {}", self.downscale),
                    ));
                }
                if v.frames != t || v.height != h / self.downscale || v.width != w / self.downscale {
                    return Err(invalid(
                        "Canvas",
                        alloc::format!(
                            "content {}x{}x{} does not match target {t}x{h}x{w} at downscale {}",
                            v.frames,
                            v.height,
                            v.width,
                            self.downscale
                        ),
                    ));
                }
                Ok(())
            }
            CanvasContent::Audio(_) => Ok(()),
        }
    }
}

/// How reference tokens are positioned relative to the target grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LayoutMode {
    /// Overlapping coordinates: a reference token sits at the center of
    /// the target region it covers.
    ParallelCanvas,
    /// Side-by-side baseline: reference coordinates are offset by the
    /// target width (in token units) along the width axis.
    SpatialConcat,
}

impl LayoutMode {
    pub fn name(self) -> &'static str {
        match self {
            LayoutMode::ParallelCanvas => "parallel_canvas",
            LayoutMode::SpatialConcat => "spatial_concat",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "parallel_canvas" => LayoutMode::ParallelCanvas,
            "spatial_concat" => LayoutMode::SpatialConcat,
            other => {
                return Err(invalid(
                    "LayoutMode",
                    alloc::format!("unknown layout mode {other:?}"),
                ))
            }
        })
    }
}

/// Index bookkeeping for one assembled video sequence: generation
/// tokens first, then reference tokens.
#[derive(Debug, Clone)]
pub struct SequenceLayout {
    pub n_gen: usize,
    pub n_ref: usize,
    pub gen_coords: Vec<[f32; 3]>,
    pub ref_coords: Vec<[f32; 3]>,
    pub mode: LayoutMode,
    pub downscale: usize,
}

impl SequenceLayout {
    pub fn gen_range(&self) -> (usize, usize) {
        (0, self.n_gen)
    }

    pub fn ref_range(&self) -> (usize, usize) {
        (self.n_gen, self.n_gen + self.n_ref)
    }

    pub fn total(&self) -> usize {
        self.n_gen + self.n_ref
    }
}

/// Coordinate assignment for target dims `(t, h, w)`, patch sizes, and
/// a reference downscale `d`. Generation tokens get integer grid
/// coordinates; a reference token covering a `d x d` block of target
/// tokens gets the block's center, `(i + 0.5) * d - 0.5` per spatial
/// axis. The temporal axis is never downscaled.
pub fn build_layout(
    dims: (usize, usize, usize),
    patch: PatchSize,
    downscale: usize,
    mode: LayoutMode,
) -> Result<SequenceLayout> {
    let (t, h, w) = dims;
    if downscale == 0 {
        return Err(invalid("build_layout", "downscale must be positive"));
    }
    if t % patch.t != 0 || h % (downscale * patch.h) != 0 || w % (downscale * patch.w) != 0 {
        return Err(invalid(
            "build_layout",
            alloc::format!(
                "dims {t}x{h}x{w} not divisible by patch {}x{}x{} at downscale {downscale}",
                patch.t,
                patch.h,
                patch.w
            ),
        ));
    }
    let gt = t / patch.t;
    let gh = h / patch.h;
    let gw = w / patch.w;
    let mut gen_coords = Vec::with_capacity(gt * gh * gw);
    for ti in 0..gt {
        for hi in 0..gh {
            for wi in 0..gw {
                gen_coords.push([ti as f32, hi as f32, wi as f32]);
            }
        }
    }
    let rh = gh / downscale;
    let rw = gw / downscale;
    let d = downscale as f32;
    let offset_w = match mode {
        LayoutMode::ParallelCanvas => 0.0,
        LayoutMode::SpatialConcat => gw as f32,
    };
    let mut ref_coords = Vec::with_capacity(gt * rh * rw);
    for ti in 0..gt {
        for i in 0..rh {
            for j in 0..rw {
                ref_coords.push([
                    ti as f32,
                    (i as f32 + 0.5) * d - 0.5,
                    (j as f32 + 0.5) * d - 0.5 + offset_w,
                ]);
            }
        }
    }
    Ok(SequenceLayout {
        n_gen: gen_coords.len(),
        n_ref: ref_coords.len(),
        gen_coords,
        ref_coords,
        mode,
        downscale,
    })
}

/// Per-pixel binary mask over a clip's `(t, y, x)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<bool>,
}

impl PixelMask {
    pub fn empty(frames: usize, height: usize, width: usize) -> Self {
        PixelMask {
            frames,
            height,
            width,
            data: vec![false; frames * height * width],
        }
    }

    pub fn full(frames: usize, height: usize, width: usize) -> Self {
        PixelMask {
            frames,
            height,
            width,
            data: vec![true; frames * height * width],
        }
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize) -> bool {
        self.data[(t * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, t: usize, y: usize, x: usize, v: bool) {
        self.data[(t * self.height + y) * self.width + x] = v;
    }

    /// Mark a rectangle on every frame.
    pub fn mark_rect(&mut self, y0: usize, x0: usize, rh: usize, rw: usize) {
        for t in 0..self.frames {
            for y in y0..(y0 + rh).min(self.height) {
                for x in x0..(x0 + rw).min(self.width) {
                    self.set(t, y, x, true);
                }
            }
        }
    }

    /// Fraction of marked pixels.
    pub fn area_fraction(&self) -> f32 {
        let marked = self.data.iter().filter(|&&b| b).count();
        marked as f32 / self.data.len() as f32
    }

    fn dims_match(&self, clip: &VideoClip) -> bool {
        self.frames == clip.frames && self.height == clip.height && self.width == clip.width
    }
}

/// Overlay-merge control layers into one clip: the first layer is the
/// base; each later layer overwrites wherever its mask is set.
pub fn composite_controls(layers: &[(VideoClip, PixelMask)]) -> Result<VideoClip> {
    let Some(((first, _), rest)) = layers.split_first() else {
        return Err(invalid("composite_controls", "no layers"));
    };
    let mut out = first.clone();
    for (clip, mask) in rest {
        if clip.frames != out.frames || clip.height != out.height || clip.width != out.width {
            return Err(Error::ShapeMismatch {
                op: "composite_controls",
                lhs: vec![out.frames, out.height, out.width],
                rhs: vec![clip.frames, clip.height, clip.width],
            });
        }
        if !mask.dims_match(clip) {
            return Err(invalid("composite_controls", "mask dims differ from layer"));
        }
        for t in 0..out.frames {
            for y in 0..out.height {
                for x in 0..out.width {
                    if mask.get(t, y, x) {
                        out.set_pixel(t, y, x, clip.pixel(t, y, x));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Replace masked pixels with the fill color; all others untouched.
pub fn encode_mask_region(clip: &VideoClip, mask: &PixelMask, fill: [f32; 3]) -> Result<VideoClip> {
    if !mask.dims_match(clip) {
        return Err(invalid("encode_mask_region", "mask dims differ from clip"));
    }
    let mut out = clip.clone();
    for t in 0..clip.frames {
        for y in 0..clip.height {
            for x in 0..clip.width {
                if mask.get(t, y, x) {
                    out.set_pixel(t, y, x, fill);
                }
            }
        }
    }
    Ok(out)
}

/// Assemble the video token sequence: generation features first, then
/// reference tokens patchified from the canvas at its downscale.
/// Returns the sequence plus the per-generation-token effective
/// strengths (global x local).
pub fn assemble_video(
    gen_feats: &Tensor,
    gen_t: f32,
    dims: (usize, usize, usize),
    patch: PatchSize,
    canvas: Option<&Canvas>,
    mode: LayoutMode,
    strength: &StrengthField,
) -> Result<(TokenSequence, Vec<f32>)> {
    let d = canvas.map(|c| c.downscale).unwrap_or(1);
    let layout = build_layout(dims, patch, d, mode)?;
    let dim = patch.video_dim();
    if gen_feats.shape() != [layout.n_gen, dim] {
        return Err(invalid(
            "assemble_video",
            alloc::format!(
                "generation features {:?} do not match layout ({} tokens of {dim})",
                gen_feats.shape(),
                layout.n_gen
            ),
        ));
    }

    let mut feats = gen_feats.data().to_vec();
    let mut coords = layout.gen_coords.clone();
    let mut timesteps = vec![gen_t; layout.n_gen];
    let mut segments = vec![Segment::GenVideo; layout.n_gen];

    if let Some(canvas) = canvas {
        let clip = canvas
            .as_video()
            .ok_or_else(|| invalid("assemble_video", "canvas content is not video"))?;
        canvas.validate_for_target(dims)?;
        let ref_tokens = patchify(clip, patch)?;
        debug_assert_eq!(ref_tokens.coords.len(), layout.n_ref);
        feats.extend_from_slice(ref_tokens.feats.data());
        coords.extend_from_slice(&layout.ref_coords);
        timesteps.extend(vec![0.0; layout.n_ref]);
        segments.extend(vec![Segment::RefVideo; layout.n_ref]);
    }

    let n = segments.len();
    let seq = TokenSequence {
        feats: Tensor::new(vec![n, dim], feats)?,
        coords,
        timesteps,
        segments,
    };
    seq.validate()?;
    let resolved = strength.resolve(layout.n_gen)?;
    Ok((seq, resolved))
}

/// Assemble the audio token sequence analogously; time coordinates are
/// expressed in video-token units so cross-attention stays aligned.
pub fn assemble_audio(
    gen_feats: &Tensor,
    gen_t: f32,
    cfg: &ModelConfig,
    canvas: Option<&Canvas>,
    strength: &StrengthField,
) -> Result<(TokenSequence, Vec<f32>)> {
    let dim = cfg.audio_token_dim();
    if gen_feats.ndim() != 2 || gen_feats.shape()[1] != dim {
        return Err(invalid(
            "assemble_audio",
            alloc::format!("audio features {:?} need dim {dim}", gen_feats.shape()),
        ));
    }
    let n_gen = gen_feats.shape()[0];
    let mut feats = gen_feats.data().to_vec();
    let mut coords: Vec<[f32; 3]> = (0..n_gen)
        .map(|i| [cfg.audio_token_time(i), 0.0, 0.0])
        .collect();
    let mut timesteps = vec![gen_t; n_gen];
    let mut segments = vec![Segment::GenAudio; n_gen];

    if let Some(canvas) = canvas {
        let frames = canvas
            .as_audio()
            .ok_or_else(|| invalid("assemble_audio", "canvas content is not audio"))?;
        if frames.feat_dim != cfg.audio_feat_dim {
            return Err(invalid("assemble_audio", "canvas audio feature dim mismatch"));
        }
        let toks = audio_tokenize(frames, cfg.audio_group)?;
        let n_ref = toks.feats.shape()[0];
        feats.extend_from_slice(toks.feats.data());
        coords.extend((0..n_ref).map(|i| [cfg.audio_token_time(i), 0.0, 0.0]));
        timesteps.extend(vec![0.0; n_ref]);
        segments.extend(vec![Segment::RefAudio; n_ref]);
    }

    let n = segments.len();
    let seq = TokenSequence {
        feats: Tensor::new(vec![n, dim], feats)?,
        coords,
        timesteps,
        segments,
    };
    seq.validate()?;
    let resolved = strength.resolve(n_gen)?;
    Ok((seq, resolved))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d1_layout_coincides_with_gen_coords() {
        let l = build_layout((2, 8, 8), PatchSize::new(1, 2, 2), 1, LayoutMode::ParallelCanvas)
            .unwrap();
        assert_eq!(l.n_gen, l.n_ref);
        assert_eq!(l.gen_coords, l.ref_coords);
    }

    #[test]
    fn d2_centers_match_hand_derived_pattern() {
        // 4x4 target token grid, d = 2: four reference tokens at the
        // centers of each 2x2 block.
        let l = build_layout((1, 8, 8), PatchSize::new(1, 2, 2), 2, LayoutMode::ParallelCanvas)
            .unwrap();
        assert_eq!(l.n_gen, 16);
        assert_eq!(l.n_ref, 4);
        let hw: Vec<(f32, f32)> = l.ref_coords.iter().map(|c| (c[1], c[2])).collect();
        assert_eq!(hw, vec![(0.5, 0.5), (0.5, 2.5), (2.5, 0.5), (2.5, 2.5)]);
    }

    #[test]
    fn d4_reduces_spatial_tokens_sixteenfold() {
        let l = build_layout((2, 16, 16), PatchSize::new(1, 2, 2), 4, LayoutMode::ParallelCanvas)
            .unwrap();
        assert_eq!(l.n_gen, 2 * 8 * 8);
        assert_eq!(l.n_ref, 2 * 2 * 2);
        assert_eq!(l.n_ref * 16, l.n_gen);
    }

    #[test]
    fn ref_counts_scale_inverse_quadratically_across_sizes() {
        for (t, h, w) in [(1, 8, 8), (2, 8, 16), (4, 16, 16), (2, 32, 32), (8, 32, 32)] {
            let patch = PatchSize::new(1, 2, 2);
            let n1 = build_layout((t, h, w), patch, 1, LayoutMode::ParallelCanvas)
                .unwrap()
                .n_ref;
            for d in [2usize, 4] {
                if h % (d * patch.h) != 0 || w % (d * patch.w) != 0 {
                    continue;
                }
                let nd = build_layout((t, h, w), patch, d, LayoutMode::ParallelCanvas)
                    .unwrap()
                    .n_ref;
                assert_eq!(nd, n1 / (d * d), "{t}x{h}x{w} at d={d}");
            }
        }
    }

    #[test]
    fn spatial_concat_offsets_width_by_target_tokens() {
        let para = build_layout((1, 8, 8), PatchSize::new(1, 2, 2), 2, LayoutMode::ParallelCanvas)
            .unwrap();
        let conc = build_layout((1, 8, 8), PatchSize::new(1, 2, 2), 2, LayoutMode::SpatialConcat)
            .unwrap();
        for (p, c) in para.ref_coords.iter().zip(&conc.ref_coords) {
            assert_eq!(c[0], p[0]);
            assert_eq!(c[1], p[1]);
            assert_eq!(c[2], p[2] + 4.0);
        }
    }

    #[test]
    fn indivisible_dims_rejected() {
        assert!(
            build_layout((1, 6, 8), PatchSize::new(1, 2, 2), 2, LayoutMode::ParallelCanvas)
                .is_err()
        );
    }

    #[test]
    fn composite_single_full_layer_is_identity() {
        let clip = VideoClip::filled(1, 4, 4, [0.2, 0.4, 0.6]);
        let out = composite_controls(&[(clip.clone(), PixelMask::full(1, 4, 4))]).unwrap();
        assert_eq!(out, clip);
    }

    #[test]
    fn composite_overwrites_only_masked_pixels() {
        let base = VideoClip::filled(1, 4, 4, [0.1, 0.1, 0.1]);
        let dots = VideoClip::filled(1, 4, 4, [1.0, 0.0, 0.0]);
        let mut mask = PixelMask::empty(1, 4, 4);
        mask.set(0, 1, 2, true);
        mask.set(0, 3, 0, true);
        let out =
            composite_controls(&[(base.clone(), PixelMask::full(1, 4, 4)), (dots, mask.clone())])
                .unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expect = if mask.get(0, y, x) {
                    [1.0, 0.0, 0.0]
                } else {
                    [0.1, 0.1, 0.1]
                };
                assert_eq!(out.pixel(0, y, x), expect, "pixel {y},{x}");
            }
        }
    }

    #[test]
    fn composite_rejects_zero_layers() {
        assert!(composite_controls(&[]).is_err());
    }

    #[test]
    fn composite_is_associative_under_overwrite() {
        let mut rng = crate::rng::SeedRng::new(71);
        let clip = |rng: &mut crate::rng::SeedRng| {
            VideoClip::new(1, 4, 4, (0..48).map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap()
        };
        let mask = |rng: &mut crate::rng::SeedRng| {
            let mut m = PixelMask::empty(1, 4, 4);
            for y in 0..4 {
                for x in 0..4 {
                    if rng.uniform(0.0, 1.0) > 0.5 {
                        m.set(0, y, x, true);
                    }
                }
            }
            m
        };
        let a = (clip(&mut rng), PixelMask::full(1, 4, 4));
        let b = (clip(&mut rng), mask(&mut rng));
        let c = (clip(&mut rng), mask(&mut rng));
        let all = composite_controls(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let ab = composite_controls(&[a, b]).unwrap();
        let nested = composite_controls(&[(ab, PixelMask::full(1, 4, 4)), c]).unwrap();
        assert_eq!(all, nested);
    }

    #[test]
    fn mask_fill_touches_exactly_the_masked_support() {
        let mut rng = crate::rng::SeedRng::new(73);
        let clip =
            VideoClip::new(2, 4, 4, (0..96).map(|_| rng.uniform(0.0, 0.9)).collect()).unwrap();
        let mut mask = PixelMask::empty(2, 4, 4);
        mask.mark_rect(1, 1, 2, 2);
        let out = encode_mask_region(&clip, &mask, FILL_GREEN).unwrap();
        for t in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    if mask.get(t, y, x) {
                        assert_eq!(out.pixel(t, y, x), FILL_GREEN);
                    } else {
                        assert_eq!(out.pixel(t, y, x), clip.pixel(t, y, x));
                    }
                }
            }
        }
        // Empty mask is the identity; full mask is a solid fill.
        let id = encode_mask_region(&clip, &PixelMask::empty(2, 4, 4), FILL_GREEN).unwrap();
        assert_eq!(id, clip);
        let solid = encode_mask_region(&clip, &PixelMask::full(2, 4, 4), FILL_GREEN).unwrap();
        assert!(solid
            .data()
            .chunks(3)
            .all(|px| px == FILL_GREEN));
    }

    #[test]
    fn fill_color_is_66ff00_on_the_byte_grid() {
        assert_eq!(
            [
                (FILL_GREEN[0] * 255.0).round() as u8,
                (FILL_GREEN[1] * 255.0).round() as u8,
                (FILL_GREEN[2] * 255.0).round() as u8
            ],
            [0x66, 0xFF, 0x00]
        );
    }

    #[test]
    fn assemble_counts_match_formula() {
        // (T, H, W) = (4, 32, 32), patch (1, 4, 4), d = 2.
        let dims = (4, 32, 32);
        let patch = PatchSize::new(1, 4, 4);
        let gen = Tensor::zeros(vec![4 * 8 * 8, patch.video_dim()]);
        let canvas = Canvas::video(
            VideoClip::filled(4, 16, 16, [0.5; 3]),
            ControlKind::Edges,
            2,
        );
        let (seq, resolved) = assemble_video(
            &gen,
            0.5,
            dims,
            patch,
            Some(&canvas),
            LayoutMode::ParallelCanvas,
            &StrengthField::uniform(1.0),
        )
        .unwrap();
        assert_eq!(seq.gen_indices().len(), 256);
        assert_eq!(seq.ref_indices().len(), 64);
        assert_eq!(seq.len(), 320);
        assert_eq!(resolved.len(), 256);
    }

    #[test]
    fn assemble_without_canvas_has_only_gen_tokens() {
        let patch = PatchSize::new(1, 2, 2);
        let gen = Tensor::zeros(vec![4, patch.video_dim()]);
        let (seq, _) = assemble_video(
            &gen,
            1.0,
            (1, 4, 4),
            patch,
            None,
            LayoutMode::ParallelCanvas,
            &StrengthField::uniform(1.0),
        )
        .unwrap();
        assert_eq!(seq.len(), 4);
        assert!(seq.ref_indices().is_empty());
    }

    #[test]
    fn misaligned_content_assembles_without_error() {
        // A shifted-view canvas is spatially different from the target;
        // assembly imposes no alignment precondition.
        let patch = PatchSize::new(1, 2, 2);
        let mut rng = crate::rng::SeedRng::new(77);
        let gen = rng.uniform_tensor(&[4, patch.video_dim()], 0.0, 1.0);
        let shifted = VideoClip::new(1, 4, 4, (0..48).map(|_| rng.uniform(0.0, 1.0)).collect())
            .unwrap();
        let canvas = Canvas::video(shifted, ControlKind::ShiftedView, 1);
        assert!(assemble_video(
            &gen,
            0.3,
            (1, 4, 4),
            patch,
            Some(&canvas),
            LayoutMode::ParallelCanvas,
            &StrengthField::uniform(1.0),
        )
        .is_ok());
    }
}
