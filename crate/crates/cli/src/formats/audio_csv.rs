//! CSV codec for audio feature frames: one row per frame, one column
//! per feature, 9 significant digits (enough to round-trip f32).

use std::fs;
use std::fmt::Write as _;
use std::path::Path;

use avcanvas_core::media::AudioFrames;

use crate::{AppError, Result};

pub fn encode(frames: &AudioFrames) -> String {
    let mut out = String::new();
    for t in 0..frames.frames {
        for (i, v) in frames.frame(t).iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.8e}");
        }
        out.push('\n');
    }
    out
}

pub fn decode(text: &str, path: &Path) -> Result<AudioFrames> {
    let mut data = Vec::new();
    let mut feat_dim = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = 0;
        for field in line.split(',') {
            let v: f32 = field.trim().parse().map_err(|e| {
                AppError::io(path, format!("line {}: bad float {field:?}: {e}", lineno + 1))
            })?;
            data.push(v);
            cols += 1;
        }
        match feat_dim {
            None => feat_dim = Some(cols),
            Some(d) if d != cols => {
                return Err(AppError::io(
                    path,
                    format!("line {}: {cols} columns, expected {d}", lineno + 1),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let feat_dim = feat_dim.ok_or_else(|| AppError::io(path, "empty audio csv"))?;
    AudioFrames::new(rows, feat_dim, data).map_err(|e| AppError::io(path, e))
}

pub fn write(path: &Path, frames: &AudioFrames) -> Result<()> {
    fs::write(path, encode(frames)).map_err(|e| AppError::io(path, e))
}

pub fn read(path: &Path) -> Result<AudioFrames> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    decode(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use avcanvas_core::rng::SeedRng;

    #[test]
    fn nine_significant_digits_roundtrip_f32_exactly() {
        let mut rng = SeedRng::new(7);
        let data: Vec<f32> = (0..64).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let frames = AudioFrames::new(8, 8, data).unwrap();
        let text = encode(&frames);
        let back = decode(&text, Path::new("a.csv")).unwrap();
        assert_eq!(back, frames);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(decode("1.0,2.0\n3.0\n", Path::new("a.csv")).is_err());
    }
}
