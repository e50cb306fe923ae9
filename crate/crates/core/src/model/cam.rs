//! Class activation maps.
//!
//! The raw map of category r weights each feature channel by the head's
//! weight column: CAM[h, w] = Σ_d W[d, r] · F[d, h, w]. Maps are min-max
//! normalized to [0, 1] per image (a spatially constant map normalizes to
//! all zeros). Both directions are differentiable; the normalization
//! backward is exact away from min/max ties.

use ndarray::{Array2, ArrayView1, ArrayView3};

use crate::error::{Error, Result};
use crate::model::head::ClassifierHead;

/// Pre-normalization CAM of one sample's feature map (D, H, W).
pub fn raw_cam(feature_map: &ArrayView3<f64>, weight_col: &ArrayView1<f64>) -> Array2<f64> {
    let (d, h, w) = feature_map.dim();
    assert_eq!(weight_col.len(), d, "weight column must match feature dim");
    let mut cam = Array2::zeros((h, w));
    for di in 0..d {
        let wv = weight_col[di];
        if wv == 0.0 {
            continue;
        }
        for y in 0..h {
            for x in 0..w {
                cam[[y, x]] += wv * feature_map[[di, y, x]];
            }
        }
    }
    cam
}

/// Positions and range captured by one normalization, needed to run it
/// backwards. `None` means the map was constant and normalized to zeros.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub min_pos: (usize, usize),
    pub max_pos: (usize, usize),
    pub range: f64,
    pub normalized: Array2<f64>,
}

/// Min-max normalization with the bookkeeping needed for backprop.
/// First-occurrence (row-major) min/max positions break ties.
pub fn normalize_cam_cached(raw: &Array2<f64>) -> (Array2<f64>, Option<NormCache>) {
    let (h, w) = raw.dim();
    let mut min_pos = (0, 0);
    let mut max_pos = (0, 0);
    let mut mn = raw[[0, 0]];
    let mut mx = raw[[0, 0]];
    for y in 0..h {
        for x in 0..w {
            let v = raw[[y, x]];
            if v < mn {
                mn = v;
                min_pos = (y, x);
            }
            if v > mx {
                mx = v;
                max_pos = (y, x);
            }
        }
    }
    let range = mx - mn;
    if range == 0.0 {
        return (Array2::zeros((h, w)), None);
    }
    let normalized = raw.mapv(|v| (v - mn) / range);
    let cache = NormCache {
        min_pos,
        max_pos,
        range,
        normalized: normalized.clone(),
    };
    (normalized, Some(cache))
}

pub fn normalize_cam(raw: &Array2<f64>) -> Array2<f64> {
    normalize_cam_cached(raw).0
}

/// Gradient of the normalized map with respect to the raw map.
///
/// With R = max - min, A = Σ g and B = Σ g ⊙ normalized:
/// d/draw = g / R, with (B - A)/R added at the min position and -B/R at the
/// max position. A constant raw map (no cache) has zero gradient.
pub fn normalize_backward(grad_norm: &Array2<f64>, cache: &NormCache) -> Array2<f64> {
    let a: f64 = grad_norm.sum();
    let b: f64 = grad_norm
        .iter()
        .zip(cache.normalized.iter())
        .map(|(&g, &n)| g * n)
        .sum();
    let mut grad_raw = grad_norm.mapv(|g| g / cache.range);
    grad_raw[[cache.min_pos.0, cache.min_pos.1]] += (b - a) / cache.range;
    grad_raw[[cache.max_pos.0, cache.max_pos.1]] -= b / cache.range;
    grad_raw
}

/// CAM of category `r` from a sample feature map and a classifier head.
pub fn compute_cam(
    feature_map: &ArrayView3<f64>,
    head: &ClassifierHead,
    r: usize,
    normalize: bool,
) -> Result<Array2<f64>> {
    if r >= head.num_categories() {
        return Err(Error::Data(format!(
            "category {r} out of range for {} categories",
            head.num_categories()
        )));
    }
    if feature_map.dim().0 != head.feature_dim() {
        return Err(Error::Shape(format!(
            "feature map has {} channels, head expects {}",
            feature_map.dim().0,
            head.feature_dim()
        )));
    }
    let raw = raw_cam(feature_map, &head.weight.column(r));
    Ok(if normalize { normalize_cam(&raw) } else { raw })
}

/// Bilinear upsampling of a CAM to image resolution (for overlays and
/// localization checks).
pub fn upsample_cam(cam: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = cam.dim();
    let mut out = Array2::zeros((out_h, out_w));
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
            let top = cam[[y0, x0]] * (1.0 - fx) + cam[[y0, x1]] * fx;
            let bottom = cam[[y1, x0]] * (1.0 - fx) + cam[[y1, x1]] * fx;
            out[[oy, ox]] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

/// First-occurrence (row-major) position of the map's maximum.
pub fn cam_argmax(cam: &Array2<f64>) -> (usize, usize) {
    let (h, w) = cam.dim();
    let mut best = (0, 0);
    let mut best_v = cam[[0, 0]];
    for y in 0..h {
        for x in 0..w {
            if cam[[y, x]] > best_v {
                best_v = cam[[y, x]];
                best = (y, x);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_relative_error, numerical_gradient};
    use ndarray::{Array1, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn constant_map_normalizes_to_zeros() {
        let fmap = Array3::from_elem((4, 3, 3), 0.7);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let head = ClassifierHead::init(4, 2, false, &mut rng);
        let cam = compute_cam(&fmap.view(), &head, 0, true).unwrap();
        assert!(cam.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_channel_cam_is_proportional() {
        let mut fmap = Array3::zeros((3, 2, 2));
        fmap[[1, 0, 1]] = 2.0;
        fmap[[1, 1, 0]] = -1.0;
        let mut col = Array1::zeros(3);
        col[1] = 1.0;
        let cam = raw_cam(&fmap.view(), &col.view());
        assert_eq!(cam[[0, 1]], 2.0);
        assert_eq!(cam[[1, 0]], -1.0);
        assert_eq!(cam[[0, 0]], 0.0);
    }

    #[test]
    fn raw_cam_matches_triple_loop_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let fmap = Array3::from_shape_fn((6, 4, 5), |_| rng.random_range(-1.0..1.0));
        let head = ClassifierHead::init(6, 3, false, &mut rng);
        for r in 0..3 {
            let cam = raw_cam(&fmap.view(), &head.weight.column(r));
            for y in 0..4 {
                for x in 0..5 {
                    let mut acc = 0.0;
                    for d in 0..6 {
                        acc += head.weight[[d, r]] * fmap[[d, y, x]];
                    }
                    assert!((cam[[y, x]] - acc).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn raw_cam_is_linear_in_weight_column() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let fmap = Array3::from_shape_fn((4, 3, 3), |_| rng.random_range(-1.0..1.0));
        let col = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
        let cam1 = raw_cam(&fmap.view(), &col.view());
        let doubled = col.mapv(|v| 2.0 * v);
        let cam2 = raw_cam(&fmap.view(), &doubled.view());
        for (a, b) in cam1.iter().zip(cam2.iter()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_backward_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let raw = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
        let g = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));

        let (_, cache) = normalize_cam_cached(&raw);
        let analytic = normalize_backward(&g, &cache.unwrap());

        let flat: Vec<f64> = raw.iter().copied().collect();
        let numeric = numerical_gradient(
            |p| {
                let raw_p = Array2::from_shape_vec((3, 4), p.to_vec()).unwrap();
                let norm = normalize_cam(&raw_p);
                norm.iter().zip(g.iter()).map(|(&n, &gv)| n * gv).sum()
            },
            &flat,
            1e-6,
        );
        let analytic_flat: Vec<f64> = analytic.iter().copied().collect();
        assert!(max_relative_error(&analytic_flat, &numeric, 1e-6) < 1e-6);
    }

    #[test]
    fn upsample_peaks_where_the_source_peaks() {
        let mut cam = Array2::zeros((4, 4));
        cam[[1, 2]] = 1.0;
        let up = upsample_cam(&cam, 32, 32);
        let (y, x) = cam_argmax(&up);
        // cell (1, 2) covers rows 8..16, cols 16..24
        assert!((8..16).contains(&y) && (16..24).contains(&x), "({y}, {x})");
    }
}
