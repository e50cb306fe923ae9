//! Loss functions: stabilized binary cross entropy, its weighted variant,
//! and the CAM overlap / regularization terms.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable elementwise BCE on logits: max(x, 0) - x*t + ln(1 + e^{-|x|}).
pub fn bce_elementwise(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// d BCE / d logit = sigmoid(logit) - target.
pub fn bce_grad_elementwise(logit: f64, target: f64) -> f64 {
    sigmoid(logit) - target
}

/// Per-class BCE loss vector for one sample.
pub fn bce_loss(logits: &Array1<f64>, targets: &Array1<f64>) -> Array1<f64> {
    assert_eq!(logits.len(), targets.len());
    Array1::from_shape_fn(logits.len(), |i| bce_elementwise(logits[i], targets[i]))
}

/// Weighted BCE over a batch: weights multiply the elementwise losses,
/// classes are summed and the batch is mean-reduced.
pub fn weighted_bce(logits: &Array2<f64>, targets: &Array2<f64>, weights: &Array2<f64>) -> f64 {
    assert_eq!(logits.dim(), targets.dim());
    assert_eq!(logits.dim(), weights.dim());
    let b = logits.nrows().max(1) as f64;
    let mut total = 0.0;
    for ((&x, &t), &w) in logits.iter().zip(targets.iter()).zip(weights.iter()) {
        total += w * bce_elementwise(x, t);
    }
    total / b
}

/// Gradient of [`weighted_bce`] with respect to the logits.
pub fn weighted_bce_grad(
    logits: &Array2<f64>,
    targets: &Array2<f64>,
    weights: &Array2<f64>,
) -> Array2<f64> {
    let b = logits.nrows().max(1) as f64;
    let mut grad = Array2::zeros(logits.dim());
    for ((g, (&x, &t)), &w) in grad
        .iter_mut()
        .zip(logits.iter().zip(targets.iter()))
        .zip(weights.iter())
    {
        *g = w * bce_grad_elementwise(x, t) / b;
    }
    grad
}

/// Broadcasts a per-class weight vector over a batch.
pub fn broadcast_class_weights(class_weights: &Array1<f64>, batch: usize) -> Array2<f64> {
    let m = class_weights.len();
    Array2::from_shape_fn((batch, m), |(_, j)| class_weights[j])
}

/// How per-image CAM loss terms combine over the co-occurring images of a
/// batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Sum,
}

impl Reduction {
    fn apply(self, total: f64, count: usize) -> f64 {
        match self {
            Reduction::Mean if count > 0 => total / count as f64,
            _ => total,
        }
    }
}

/// Overlap term: per image, the sum of the elementwise product of the two
/// CAMs; reduced over images.
pub fn overlap_loss(cams_b: &[Array2<f64>], cams_c: &[Array2<f64>], reduction: Reduction) -> f64 {
    assert_eq!(cams_b.len(), cams_c.len());
    let mut total = 0.0;
    for (cb, cc) in cams_b.iter().zip(cams_c) {
        assert_eq!(cb.dim(), cc.dim());
        total += cb.iter().zip(cc.iter()).map(|(&a, &b)| a * b).sum::<f64>();
    }
    reduction.apply(total, cams_b.len())
}

/// Regularization term: per image, the L1 distance of both categories' CAMs
/// to their frozen stage-1 counterparts; reduced over images.
pub fn regularization_loss(
    cams_b: &[Array2<f64>],
    cams_c: &[Array2<f64>],
    pre_b: &[Array2<f64>],
    pre_c: &[Array2<f64>],
    reduction: Reduction,
) -> f64 {
    assert!(cams_b.len() == cams_c.len() && cams_b.len() == pre_b.len() && pre_b.len() == pre_c.len());
    let mut total = 0.0;
    for k in 0..cams_b.len() {
        total += l1_distance(&pre_b[k], &cams_b[k]) + l1_distance(&pre_c[k], &cams_c[k]);
    }
    reduction.apply(total, cams_b.len())
}

fn l1_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y).abs()).sum()
}
