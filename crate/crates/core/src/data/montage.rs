//! Axial-slice export as 8-bit binary PGM images.

use std::fs;
use std::path::{Path, PathBuf};

use crate::volume::{Dims, LabelMap, Mask, Volume};
use crate::{Error, Result};

pub enum MontageSource<'a> {
    /// Windowed to the global min–max; a constant volume renders mid-gray.
    Volume(&'a Volume),
    /// 0 / 255.
    Mask(&'a Mask),
    /// One gray level per label, background black.
    Labels(&'a LabelMap),
}

impl MontageSource<'_> {
    fn dims(&self) -> Dims {
        match self {
            MontageSource::Volume(v) => v.dims,
            MontageSource::Mask(m) => m.dims,
            MontageSource::Labels(l) => l.dims,
        }
    }

    fn pixels(&self) -> Vec<u8> {
        match self {
            MontageSource::Volume(v) => {
                let (lo, hi) = v.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
                if !(hi > lo) {
                    return vec![128; v.data.len()];
                }
                let scale = 255.0 / (hi as f64 - lo as f64);
                v.data.iter().map(|&x| ((x as f64 - lo as f64) * scale).round().clamp(0.0, 255.0) as u8).collect()
            }
            MontageSource::Mask(m) => m.data.iter().map(|&x| if x != 0 { 255 } else { 0 }).collect(),
            MontageSource::Labels(l) => l.labels.iter().map(|&x| label_gray(x)).collect(),
        }
    }
}

pub fn label_gray(label: u32) -> u8 {
    if label == 0 {
        0
    } else {
        (255 - ((label as u64 - 1) * 37) % 255) as u8
    }
}

pub fn encode_pgm(w: usize, h: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Writes slices 0, k, 2k, … as `{prefix}_z{index:04}.pgm` under `dir`.
pub fn export_montage(src: MontageSource<'_>, dir: impl AsRef<Path>, prefix: &str, every_k: usize) -> Result<Vec<PathBuf>> {
    if every_k == 0 {
        return Err(Error::config("every_k", "must be ≥ 1"));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dims = src.dims();
    let pixels = src.pixels();
    let mut written = Vec::new();
    for z in (0..dims.d).step_by(every_k) {
        let path = dir.join(format!("{prefix}_z{z:04}.pgm"));
        let slice = &pixels[z * dims.slice_len()..][..dims.slice_len()];
        fs::write(&path, encode_pgm(dims.w, dims.h, slice)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
