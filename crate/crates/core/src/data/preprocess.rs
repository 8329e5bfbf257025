use serde::{Deserialize, Serialize};

use super::render::DepthFrame;
use crate::geometry::Crop;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum CropMode {
    /// The same box for every frame.
    Fixed { x0: usize, y0: usize, width: usize, height: usize },
    /// A square of `side` pixels centred on the foreground blob.
    Centroid { side: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Output side in pixels.
    pub size: usize,
    pub near_mm: f64,
    pub far_mm: f64,
    /// Depths beyond this count as background.
    pub background_threshold_mm: f64,
    pub crop: CropMode,
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::config("preprocess size must be positive"));
        }
        if !(self.near_mm >= 0.0 && self.far_mm > self.near_mm) {
            return Err(Error::config(format!("working range [{}, {}] is empty", self.near_mm, self.far_mm)));
        }
        if !(self.background_threshold_mm >= self.far_mm) {
            return Err(Error::config("background threshold must not lie inside the working range"));
        }
        Ok(())
    }
}

/// Linear map of `[near, far]` onto `[-1, 1]`, clamped.
pub fn normalize_depth(d: f64, near: f64, far: f64) -> f64 {
    (2.0 * (d - near) / (far - near) - 1.0).clamp(-1.0, 1.0)
}

fn is_foreground(d: f64, threshold: f64) -> bool {
    d > 0.0 && d <= threshold
}

/// The crop box a frame would be cut with.
pub fn crop_box(frame: &DepthFrame, cfg: &PreprocessConfig) -> Result<Crop> {
    let (w, h) = (frame.width, frame.height);
    let (x0, y0, cw, ch) = match cfg.crop {
        CropMode::Fixed { x0, y0, width, height } => (x0, y0, width, height),
        CropMode::Centroid { side } => {
            let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
            for v in 0..h {
                for u in 0..w {
                    if is_foreground(frame.at(u, v), cfg.background_threshold_mm) {
                        su += u as f64;
                        sv += v as f64;
                        n += 1;
                    }
                }
            }
            if n == 0 {
                return Err(Error::contract("centroid crop: no foreground pixels"));
            }
            if side > w || side > h {
                return Err(Error::contract(format!("crop side {side} exceeds the {w}x{h} frame")));
            }
            let place = |c: f64, extent: usize| ((c - side as f64 / 2.0 + 0.5).round().max(0.0) as usize).min(extent - side);
            (place(su / n as f64, w), place(sv / n as f64, h), side, side)
        }
    };
    if cw == 0 || ch == 0 {
        return Err(Error::contract("empty crop"));
    }
    if x0 + cw > w || y0 + ch > h {
        return Err(Error::contract(format!("crop {cw}x{ch} at ({x0}, {y0}) leaves the {w}x{h} frame")));
    }
    Ok(Crop { x0, y0, width: cw, height: ch, size: cfg.size })
}

/// Bilinear resample of a `w × h` row-major image to `s × s`, treating pixels as unit cells.
pub fn resize_bilinear(src: &[f64], w: usize, h: usize, s: usize) -> Vec<f64> {
    let sample = |x: f64, extent: usize| {
        let x = x.clamp(0.0, (extent - 1) as f64);
        let i = (x.floor() as usize).min(extent - 1);
        let j = (i + 1).min(extent - 1);
        (i, j, x - i as f64)
    };
    let mut out = Vec::with_capacity(s * s);
    for r in 0..s {
        let (y0, y1, fy) = sample((r as f64 + 0.5) * h as f64 / s as f64 - 0.5, h);
        for c in 0..s {
            let (x0, x1, fx) = sample((c as f64 + 0.5) * w as f64 / s as f64 - 0.5, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Crop, remove the background, normalize to `[-1, 1]` and resize to `[1, S, S]`.
pub fn preprocess(frame: &DepthFrame, cfg: &PreprocessConfig) -> Result<(Tensor, Crop)> {
    cfg.validate()?;
    let crop = crop_box(frame, cfg)?;
    let mut cut = Vec::with_capacity(crop.width * crop.height);
    for v in crop.y0..crop.y0 + crop.height {
        for u in crop.x0..crop.x0 + crop.width {
            let d = frame.at(u, v);
            let d = if is_foreground(d, cfg.background_threshold_mm) { d } else { cfg.far_mm };
            cut.push(normalize_depth(d, cfg.near_mm, cfg.far_mm));
        }
    }
    let out = resize_bilinear(&cut, crop.width, crop.height, cfg.size);
    Ok((Tensor::new(&[1, cfg.size, cfg.size], out)?, crop))
}
