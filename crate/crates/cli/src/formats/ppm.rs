//! Binary PPM (P6) codec for video clips: one image per frame, frame
//! index zero-padded in the filename.

use std::fs;
use std::path::Path;

use avcanvas_core::media::VideoClip;

use crate::{AppError, Result};

/// Encode one frame as P6 bytes; values quantized to the byte grid.
pub fn encode_frame(clip: &VideoClip, t: usize) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", clip.width, clip.height).into_bytes();
    out.extend(
        clip.frame(t)
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8),
    );
    out
}

/// Decode one P6 image into `(height, width, rgb-in-[0,1])`.
pub fn decode_frame(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bad = |msg: &str| AppError::io(path, msg);
    // Header: magic, width, height, maxval, then a single whitespace
    // byte before the raster.
    let mut pos = 0usize;
    let mut token = |pos: &mut usize| -> Result<String> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&mut pos)? != "P6" {
        return Err(bad("not a P6 file"));
    }
    let width: usize = token(&mut pos)?.parse().map_err(|e| bad(&format!("bad width: {e}")))?;
    let height: usize = token(&mut pos)?.parse().map_err(|e| bad(&format!("bad height: {e}")))?;
    let maxval: usize = token(&mut pos)?.parse().map_err(|e| bad(&format!("bad maxval: {e}")))?;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    pos += 1; // single whitespace separating header and raster
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(bad("truncated raster"));
    }
    let data = bytes[pos..pos + need]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    Ok((height, width, data))
}

fn frame_name(t: usize) -> String {
    format!("frame_{t:04}.ppm")
}

/// Write every frame of a clip into `dir` as `frame_0000.ppm`, ...
pub fn write_clip(dir: &Path, clip: &VideoClip) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    for t in 0..clip.frames {
        let path = dir.join(frame_name(t));
        fs::write(&path, encode_frame(clip, t)).map_err(|e| AppError::io(&path, e))?;
    }
    Ok(())
}

/// Read a frame directory written by [`write_clip`].
pub fn read_clip(dir: &Path) -> Result<VideoClip> {
    let mut frames = Vec::new();
    loop {
        let path = dir.join(frame_name(frames.len()));
        if !path.exists() {
            break;
        }
        let bytes = fs::read(&path).map_err(|e| AppError::io(&path, e))?;
        frames.push(decode_frame(&bytes, &path)?);
    }
    if frames.is_empty() {
        return Err(AppError::io(dir, "no frames found"));
    }
    let (h, w, _) = frames[0];
    let mut data = Vec::with_capacity(frames.len() * h * w * 3);
    for (fh, fw, fd) in &frames {
        if (*fh, *fw) != (h, w) {
            return Err(AppError::io(dir, "inconsistent frame dimensions"));
        }
        data.extend_from_slice(fd);
    }
    VideoClip::new(frames.len(), h, w, data).map_err(|e| AppError::io(dir, e))
}
