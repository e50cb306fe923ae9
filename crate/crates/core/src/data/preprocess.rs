//! Image preprocessing for training and evaluation.
//!
//! Training applies a seeded random resized crop plus a random horizontal
//! flip; evaluation deterministically resizes the shorter edge and takes a
//! center crop. Both sizes are configurable so that desk-scale datasets with
//! tiny images can use the same code path as 224×224 pipelines.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Shorter-edge target of the evaluation resize (S).
    pub eval_resize: usize,
    /// Side of the square crop produced by both pipelines (T).
    pub crop: usize,
    /// Area-fraction range of the training crop.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Probability of a horizontal flip during training.
    pub flip_prob: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            eval_resize: 256,
            crop: 224,
            scale_min: 0.08,
            scale_max: 1.0,
            flip_prob: 0.5,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.eval_resize < self.crop {
            return Err(Error::Config(format!(
                "need eval_resize >= crop >= 1, got {} / {}",
                self.eval_resize, self.crop
            )));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max <= 1.0) {
            return Err(Error::Config(format!(
                "invalid crop scale range [{}, {}]",
                self.scale_min, self.scale_max
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!(
                "flip_prob must be in [0, 1], got {}",
                self.flip_prob
            )));
        }
        Ok(())
    }

    /// Identity-friendly settings for square synthetic images of side `s`.
    pub fn for_image_size(s: usize) -> Self {
        Self {
            eval_resize: s,
            crop: s,
            scale_min: 0.6,
            scale_max: 1.0,
            flip_prob: 0.5,
        }
    }
}

/// Bilinear resample to `(out_h, out_w)`. A no-op (exact copy) when the
/// target equals the source size, which keeps evaluation idempotent.
pub fn resize_bilinear(img: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (c, h, w) = img.dim();
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let mut out = Array3::zeros((c, out_h, out_w));
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let top = img[[ch, y0, x0]] * (1.0 - fx) + img[[ch, y0, x1]] * fx;
                let bottom = img[[ch, y1, x0]] * (1.0 - fx) + img[[ch, y1, x1]] * fx;
                out[[ch, oy, ox]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

fn crop(img: &Array3<f64>, top: usize, left: usize, ch: usize, cw: usize) -> Array3<f64> {
    img.slice(ndarray::s![.., top..top + ch, left..left + cw])
        .to_owned()
}

fn flip_horizontal(img: &Array3<f64>) -> Array3<f64> {
    let mut out = img.clone();
    out.invert_axis(ndarray::Axis(2));
    out
}

/// Deterministic evaluation pipeline: resize the shorter edge to
/// `cfg.eval_resize`, then center-crop `cfg.crop`².
pub fn preprocess_eval(img: &Array3<f64>, cfg: &PreprocessConfig) -> Array3<f64> {
    let (_, h, w) = img.dim();
    let s = cfg.eval_resize;
    let (rh, rw) = if h <= w {
        (s, ((w as f64 * s as f64 / h as f64).round() as usize).max(s))
    } else {
        (((h as f64 * s as f64 / w as f64).round() as usize).max(s), s)
    };
    let resized = resize_bilinear(img, rh, rw);
    let top = (rh - cfg.crop) / 2;
    let left = (rw - cfg.crop) / 2;
    crop(&resized, top, left, cfg.crop, cfg.crop)
}

/// Samples a random crop rectangle with the usual area/aspect-ratio scheme,
/// falling back to a centered square when ten attempts fail to fit.
pub(crate) fn sample_crop_rect(
    h: usize,
    w: usize,
    cfg: &PreprocessConfig,
    rng: &mut impl Rng,
) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    for _ in 0..10 {
        let target = area * rng.random_range(cfg.scale_min..=cfg.scale_max);
        let log_ratio = rng.random_range((0.75f64).ln()..=(4.0f64 / 3.0).ln());
        let ratio = log_ratio.exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return (top, left, ch, cw);
        }
    }
    let side = h.min(w);
    ((h - side) / 2, (w - side) / 2, side, side)
}

/// Training pipeline: seeded random resized crop to `cfg.crop`² plus a
/// random horizontal flip.
pub fn preprocess_train(
    img: &Array3<f64>,
    cfg: &PreprocessConfig,
    rng: &mut impl Rng,
) -> Array3<f64> {
    let (_, h, w) = img.dim();
    let (top, left, ch, cw) = sample_crop_rect(h, w, cfg, rng);
    let cropped = crop(img, top, left, ch, cw);
    let resized = resize_bilinear(&cropped, cfg.crop, cfg.crop);
    if rng.random_range(0.0..1.0) < cfg.flip_prob {
        flip_horizontal(&resized)
    } else {
        resized
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn gradient_image(h: usize, w: usize) -> Array3<f64> {
        let mut img = Array3::zeros((3, h, w));
        for y in 0..h {
            for x in 0..w {
                img[[0, y, x]] = y as f64;
                img[[1, y, x]] = x as f64;
            }
        }
        img
    }

    #[test]
    fn eval_center_crops_wide_input() {
        let cfg = PreprocessConfig::default();
        let img = gradient_image(256, 512);
        let out = preprocess_eval(&img, &cfg);
        assert_eq!(out.dim(), (3, 224, 224));
        // shorter edge already 256, so no resample; crop offsets (16, 144)
        assert_eq!(out[[0, 0, 0]], 16.0);
        assert_eq!(out[[1, 0, 0]], 144.0);
        assert_eq!(out[[0, 223, 223]], 239.0);
        assert_eq!(out[[1, 223, 223]], 367.0);
    }

    #[test]
    fn eval_is_idempotent_at_native_size() {
        let cfg = PreprocessConfig {
            eval_resize: 32,
            crop: 32,
            ..PreprocessConfig::default()
        };
        let img = gradient_image(32, 32);
        let once = preprocess_eval(&img, &cfg);
        let twice = preprocess_eval(&once, &cfg);
        assert_eq!(once, twice);
        assert_eq!(once, img);
    }

    #[test]
    fn train_crop_is_seed_reproducible() {
        let cfg = PreprocessConfig::for_image_size(32);
        let img = gradient_image(32, 32);
        let a = preprocess_train(&img, &cfg, &mut ChaCha20Rng::seed_from_u64(5));
        let b = preprocess_train(&img, &cfg, &mut ChaCha20Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert_eq!(a.dim(), (3, 32, 32));
    }

    #[test]
    fn crop_rect_always_fits() {
        let cfg = PreprocessConfig::default();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for _ in 0..200 {
            let (top, left, ch, cw) = sample_crop_rect(37, 61, &cfg, &mut rng);
            assert!(top + ch <= 37 && left + cw <= 61 && ch >= 1 && cw >= 1);
        }
    }

    #[test]
    fn resize_preserves_constant_images() {
        let img = Array3::from_elem((3, 7, 9), 0.5);
        let out = resize_bilinear(&img, 13, 4);
        assert!(out.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }
}
