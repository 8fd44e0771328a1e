//! Raw synthetic media: RGB video clips and audio feature frames.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// An RGB clip: `frames x height x width x 3`, values in [0, 1],
/// stored row-major with the channel innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<f32>,
}

impl VideoClip {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if frames == 0 {
            return Err(invalid("VideoClip::new", "need at least one frame"));
        }
        if data.len() != frames * height * width * 3 {
            return Err(invalid(
                "VideoClip::new",
                alloc::format!(
                    "data length {} does not match {frames}x{height}x{width}x3",
                    data.len()
                ),
            ));
        }
        Ok(VideoClip {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn filled(frames: usize, height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(frames * height * width * 3);
        for _ in 0..frames * height * width {
            data.extend_from_slice(&rgb);
        }
        VideoClip {
            frames,
            height,
            width,
            data,
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, t: usize, y: usize, x: usize) -> [f32; 3] {
        let o = ((t * self.height + y) * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, t: usize, y: usize, x: usize, rgb: [f32; 3]) {
        let o = ((t * self.height + y) * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// One frame as a flat `height*width*3` slice.
    pub fn frame(&self, t: usize) -> &[f32] {
        let sz = self.height * self.width * 3;
        &self.data[t * sz..(t + 1) * sz]
    }
}

/// Audio feature frames: `frames x feat_dim`, values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFrames {
    pub frames: usize,
    pub feat_dim: usize,
    data: Vec<f32>,
}

impl AudioFrames {
    pub fn new(frames: usize, feat_dim: usize, data: Vec<f32>) -> Result<Self> {
        if frames == 0 {
            return Err(invalid("AudioFrames::new", "need at least one frame"));
        }
        if data.len() != frames * feat_dim {
            return Err(invalid(
                "AudioFrames::new",
                alloc::format!("data length {} does not match {frames}x{feat_dim}", data.len()),
            ));
        }
        Ok(AudioFrames {
            frames,
            feat_dim,
            data,
        })
    }

    pub fn zeros(frames: usize, feat_dim: usize) -> Self {
        AudioFrames {
            frames,
            feat_dim,
            data: vec![0.0; frames * feat_dim],
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.feat_dim..(t + 1) * self.feat_dim]
    }

    /// Per-frame RMS over the feature dimension.
    pub fn envelope(&self) -> Vec<f32> {
        (0..self.frames)
            .map(|t| {
                let sum: f64 = self
                    .frame(t)
                    .iter()
                    .map(|&v| (v as f64) * (v as f64))
                    .sum();
                crate::mathf::sqrt64(sum / self.feat_dim as f64) as f32
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_rejects_wrong_length() {
        assert!(VideoClip::new(1, 2, 2, vec![0.0; 11]).is_err());
    }

    #[test]
    fn envelope_of_constant_frames() {
        let a = AudioFrames::new(2, 4, vec![0.5; 8]).unwrap();
        for v in a.envelope() {
            assert!((v - 0.5).abs() < 1e-7);
        }
    }
}
