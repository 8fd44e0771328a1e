//! Lossless tokenizer between raw media and flat token grids: an
//! invertible patchify with no learned weights stands in for a VAE, so
//! reference fidelity is exact and bit-reversible.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::media::{AudioFrames, VideoClip};
use crate::tensor::Tensor;

/// Spatio-temporal patch sizes `(pt, ph, pw)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PatchSize {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl PatchSize {
    pub fn new(t: usize, h: usize, w: usize) -> Self {
        PatchSize { t, h, w }
    }

    /// Flattened feature length of one video token.
    pub fn video_dim(&self) -> usize {
        self.t * self.h * self.w * 3
    }
}

/// Video tokens with their integer grid coordinates.
#[derive(Debug, Clone)]
pub struct VideoTokens {
    /// `[n_tokens, pt*ph*pw*3]` features.
    pub feats: Tensor,
    /// `(ti, hi, wi)` grid coordinate per token.
    pub coords: Vec<[usize; 3]>,
    /// Grid extent `(T/pt, H/ph, W/pw)`.
    pub grid: [usize; 3],
}

/// Split a clip into non-overlapping patches, one token per patch.
/// Within a token, values are laid out in (t, y, x, channel) order.
pub fn patchify(clip: &VideoClip, patch: PatchSize) -> Result<VideoTokens> {
    if patch.t == 0 || patch.h == 0 || patch.w == 0 {
        return Err(invalid("patchify", "patch sizes must be positive"));
    }
    if clip.frames % patch.t != 0 || clip.height % patch.h != 0 || clip.width % patch.w != 0 {
        return Err(invalid(
            "patchify",
            alloc::format!(
                "dims {}x{}x{} not divisible by patch {}x{}x{}",
                clip.frames,
                clip.height,
                clip.width,
                patch.t,
                patch.h,
                patch.w
            ),
        ));
    }
    let grid = [
        clip.frames / patch.t,
        clip.height / patch.h,
        clip.width / patch.w,
    ];
    let dim = patch.video_dim();
    let n = grid[0] * grid[1] * grid[2];
    let mut feats = Vec::with_capacity(n * dim);
    let mut coords = Vec::with_capacity(n);
    for ti in 0..grid[0] {
        for hi in 0..grid[1] {
            for wi in 0..grid[2] {
                coords.push([ti, hi, wi]);
                for dt in 0..patch.t {
                    for dy in 0..patch.h {
                        for dx in 0..patch.w {
                            let px = clip.pixel(
                                ti * patch.t + dt,
                                hi * patch.h + dy,
                                wi * patch.w + dx,
                            );
                            feats.extend_from_slice(&px);
                        }
                    }
                }
            }
        }
    }
    Ok(VideoTokens {
        feats: Tensor::new(vec![n, dim], feats)?,
        coords,
        grid,
    })
}

/// Exact inverse of [`patchify`]; token order is irrelevant because
/// placement follows the stored grid coordinates. Every grid cell must
/// be covered exactly once.
pub fn unpatchify(
    tokens: &VideoTokens,
    dims: (usize, usize, usize),
    patch: PatchSize,
) -> Result<VideoClip> {
    let (frames, height, width) = dims;
    if frames % patch.t != 0 || height % patch.h != 0 || width % patch.w != 0 {
        return Err(invalid("unpatchify", "dims not divisible by patch"));
    }
    let grid = [frames / patch.t, height / patch.h, width / patch.w];
    let n = grid[0] * grid[1] * grid[2];
    let dim = patch.video_dim();
    if tokens.coords.len() != n || tokens.feats.shape() != [n, dim] {
        return Err(invalid(
            "unpatchify",
            alloc::format!(
                "expected {n} tokens of length {dim}, got {} of shape {:?}",
                tokens.coords.len(),
                tokens.feats.shape()
            ),
        ));
    }
    let mut data = vec![0.0f32; frames * height * width * 3];
    let mut written = vec![false; n];
    let mut clip = VideoClip::new(frames, height, width, core::mem::take(&mut data))?;
    for (k, &[ti, hi, wi]) in tokens.coords.iter().enumerate() {
        if ti >= grid[0] || hi >= grid[1] || wi >= grid[2] {
            return Err(invalid("unpatchify", "token coordinate outside grid"));
        }
        let cell = (ti * grid[1] + hi) * grid[2] + wi;
        if written[cell] {
            return Err(invalid("unpatchify", "duplicate token coordinate"));
        }
        written[cell] = true;
        let row = &tokens.feats.data()[k * dim..(k + 1) * dim];
        let mut it = row.iter();
        for dt in 0..patch.t {
            for dy in 0..patch.h {
                for dx in 0..patch.w {
                    let rgb = [
                        *it.next().unwrap(),
                        *it.next().unwrap(),
                        *it.next().unwrap(),
                    ];
                    clip.set_pixel(ti * patch.t + dt, hi * patch.h + dy, wi * patch.w + dx, rgb);
                }
            }
        }
    }
    Ok(clip)
}

/// Audio tokens: consecutive groups of `g` frames flattened together.
#[derive(Debug, Clone)]
pub struct AudioTokens {
    /// `[n_tokens, g*feat_dim]` features.
    pub feats: Tensor,
    pub group: usize,
    pub feat_dim: usize,
}

/// Group audio frames into tokens of `g` consecutive frames each.
pub fn audio_tokenize(frames: &AudioFrames, group: usize) -> Result<AudioTokens> {
    if group == 0 {
        return Err(invalid("audio_tokenize", "group must be positive"));
    }
    if frames.frames % group != 0 {
        return Err(invalid(
            "audio_tokenize",
            alloc::format!("{} frames not divisible by group {group}", frames.frames),
        ));
    }
    let n = frames.frames / group;
    let dim = group * frames.feat_dim;
    Ok(AudioTokens {
        feats: Tensor::new(vec![n, dim], frames.data().to_vec())?,
        group,
        feat_dim: frames.feat_dim,
    })
}

/// Exact inverse of [`audio_tokenize`].
pub fn audio_untokenize(tokens: &AudioTokens) -> Result<AudioFrames> {
    let n = tokens.feats.shape()[0];
    AudioFrames::new(
        n * tokens.group,
        tokens.feat_dim,
        tokens.feats.data().to_vec(),
    )
}

/// Number of video tokens for the given dims and patch.
pub fn video_token_count(dims: (usize, usize, usize), patch: PatchSize) -> usize {
    (dims.0 / patch.t) * (dims.1 / patch.h) * (dims.2 / patch.w)
}
