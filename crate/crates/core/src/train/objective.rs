//! Whole-model objectives: loss values and exact parameter gradients for
//! the plain/weighted BCE step, the CAM step, and the feature-split step.
//!
//! Each gradient-producing function has a value-only twin used by the
//! finite-difference tests, so the analytic path is checked against an
//! independent evaluation of the same objective.

use ndarray::{Array1, Array2, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::model::cam::{normalize_backward, normalize_cam_cached, raw_cam};
use crate::model::head::{gather_cols, gather_rows};
use crate::model::{pool_backward, Model, ModelGrads};
use crate::train::loss::{
    overlap_loss, regularization_loss, weighted_bce, weighted_bce_grad, Reduction,
};

/// Plain (optionally weighted) BCE step. Returns the loss, the parameter
/// gradients, and the pooled features of the forward pass.
pub fn bce_objective(
    model: &Model,
    images: &Array4<f64>,
    targets: &Array2<f64>,
    weights: &Array2<f64>,
) -> (f64, ModelGrads, Array2<f64>) {
    let fwd = model.forward(images);
    let loss = weighted_bce(&fwd.scores, targets, weights);
    let grad_scores = weighted_bce_grad(&fwd.scores, targets, weights);
    let (head_weight, head_bias, dx) = model.head.backward_batch(&fwd.acts.pooled, &grad_scores);
    let (_, _, h, w) = fwd.acts.feature_map().dim();
    let grad_fmap = pool_backward(&dx, h, w);
    let conv = model.backbone.backward(&fwd.acts, &grad_fmap);
    (
        loss,
        ModelGrads {
            conv,
            head_weight,
            head_bias,
        },
        fwd.acts.pooled,
    )
}

pub fn bce_objective_value(
    model: &Model,
    images: &Array4<f64>,
    targets: &Array2<f64>,
    weights: &Array2<f64>,
) -> f64 {
    let fwd = model.forward(images);
    weighted_bce(&fwd.scores, targets, weights)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CamLossOptions {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Min-max normalize CAMs before they enter the loss terms.
    pub normalize: bool,
    pub reduction: Reduction,
}

impl Default for CamLossOptions {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.1,
            normalize: true,
            reduction: Reduction::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct CamLossTerms {
    pub overlap: f64,
    pub regularization: f64,
    pub bce: f64,
    pub total: f64,
}

fn subgradient_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// CAMs of one sample for one pair, on the live model or the frozen one.
fn pair_cams(
    fmap: &ArrayView3<f64>,
    model: &Model,
    b: usize,
    c: usize,
    normalize: bool,
) -> (
    (Array2<f64>, Option<crate::model::cam::NormCache>),
    (Array2<f64>, Option<crate::model::cam::NormCache>),
) {
    let raw_b = raw_cam(fmap, &model.head.weight.column(b));
    let raw_c = raw_cam(fmap, &model.head.weight.column(c));
    if normalize {
        (normalize_cam_cached(&raw_b), normalize_cam_cached(&raw_c))
    } else {
        ((raw_b, None), (raw_c, None))
    }
}

/// Forward-only evaluation of the CAM objective
/// (λ1·L_O + λ2·L_R + L_BCE) on a co-occurrence batch.
pub fn cam_objective_value(
    model: &Model,
    pre_model: &Model,
    images: &Array4<f64>,
    targets: &Array2<f64>,
    pairs: &[(usize, usize)],
    opts: &CamLossOptions,
) -> CamLossTerms {
    let fwd = model.forward(images);
    let pre_acts = pre_model.backbone.forward(images);
    let ones = Array2::from_elem(targets.dim(), 1.0);
    let bce = weighted_bce(&fwd.scores, targets, &ones);

    let mut overlap = 0.0;
    let mut regularization = 0.0;
    for &(b, c) in pairs {
        let members: Vec<usize> = (0..targets.nrows())
            .filter(|&i| targets[[i, b]] == 1.0 && targets[[i, c]] == 1.0)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut cams_b = Vec::new();
        let mut cams_c = Vec::new();
        let mut pres_b = Vec::new();
        let mut pres_c = Vec::new();
        for &i in &members {
            let fmap = fwd.acts.feature_map().index_axis(Axis(0), i);
            let ((nb, _), (nc, _)) = pair_cams(&fmap, model, b, c, opts.normalize);
            let pre_fmap = pre_acts.feature_map().index_axis(Axis(0), i);
            let ((pb, _), (pc, _)) = pair_cams(&pre_fmap, pre_model, b, c, opts.normalize);
            cams_b.push(nb);
            cams_c.push(nc);
            pres_b.push(pb);
            pres_c.push(pc);
        }
        overlap += overlap_loss(&cams_b, &cams_c, opts.reduction);
        regularization +=
            regularization_loss(&cams_b, &cams_c, &pres_b, &pres_c, opts.reduction);
    }
    CamLossTerms {
        overlap,
        regularization,
        bce,
        total: opts.lambda1 * overlap + opts.lambda2 * regularization + bce,
    }
}

/// CAM objective with exact gradients. `pre_model` is the frozen stage-1
/// model; nothing flows into it.
pub fn cam_objective(
    model: &Model,
    pre_model: &Model,
    images: &Array4<f64>,
    targets: &Array2<f64>,
    pairs: &[(usize, usize)],
    opts: &CamLossOptions,
) -> (CamLossTerms, ModelGrads) {
    let fwd = model.forward(images);
    let pre_acts = pre_model.backbone.forward(images);

    // BCE part
    let ones = Array2::from_elem(targets.dim(), 1.0);
    let bce = weighted_bce(&fwd.scores, targets, &ones);
    let grad_scores = weighted_bce_grad(&fwd.scores, targets, &ones);
    let (mut head_weight, head_bias, dx) =
        model.head.backward_batch(&fwd.acts.pooled, &grad_scores);
    let (_, _, h, w) = fwd.acts.feature_map().dim();
    let mut grad_fmap = pool_backward(&dx, h, w);

    // CAM terms
    let mut overlap = 0.0;
    let mut regularization = 0.0;
    let fmaps = fwd.acts.feature_map();
    let d = model.feature_dim();
    for &(b, c) in pairs {
        let members: Vec<usize> = (0..targets.nrows())
            .filter(|&i| targets[[i, b]] == 1.0 && targets[[i, c]] == 1.0)
            .collect();
        if members.is_empty() {
            continue;
        }
        let inv = match opts.reduction {
            Reduction::Mean => 1.0 / members.len() as f64,
            Reduction::Sum => 1.0,
        };
        for &i in &members {
            let fmap = fmaps.index_axis(Axis(0), i);
            let ((nb, cache_b), (nc, cache_c)) = pair_cams(&fmap, model, b, c, opts.normalize);
            let pre_fmap = pre_acts.feature_map().index_axis(Axis(0), i);
            let ((pb, _), (pc, _)) = pair_cams(&pre_fmap, pre_model, b, c, opts.normalize);

            overlap += inv * nb.iter().zip(nc.iter()).map(|(&x, &y)| x * y).sum::<f64>();
            regularization += inv
                * (nb.iter().zip(pb.iter()).map(|(&x, &p)| (p - x).abs()).sum::<f64>()
                    + nc.iter().zip(pc.iter()).map(|(&x, &p)| (p - x).abs()).sum::<f64>());

            // d total / d normalized CAMs
            let mut grad_nb = Array2::zeros(nb.dim());
            let mut grad_nc = Array2::zeros(nc.dim());
            for ((gb, gc), (((&vb, &vc), &prb), &prc)) in grad_nb
                .iter_mut()
                .zip(grad_nc.iter_mut())
                .zip(nb.iter().zip(nc.iter()).zip(pb.iter()).zip(pc.iter()))
            {
                *gb = opts.lambda1 * inv * vc + opts.lambda2 * inv * subgradient_sign(vb - prb);
                *gc = opts.lambda1 * inv * vb + opts.lambda2 * inv * subgradient_sign(vc - prc);
            }

            // through the normalization (constant maps contribute nothing)
            let grad_raw_b = match (&cache_b, opts.normalize) {
                (Some(cache), true) => Some(normalize_backward(&grad_nb, cache)),
                (None, true) => None,
                _ => Some(grad_nb),
            };
            let grad_raw_c = match (&cache_c, opts.normalize) {
                (Some(cache), true) => Some(normalize_backward(&grad_nc, cache)),
                (None, true) => None,
                _ => Some(grad_nc),
            };

            // raw CAM backward: into the feature map and the head column
            for (r, grad_raw) in [(b, grad_raw_b), (c, grad_raw_c)] {
                let Some(grad_raw) = grad_raw else { continue };
                for di in 0..d {
                    let wv = model.head.weight[[di, r]];
                    let mut wgrad = 0.0;
                    for y in 0..grad_raw.nrows() {
                        for x in 0..grad_raw.ncols() {
                            let g = grad_raw[[y, x]];
                            grad_fmap[[i, di, y, x]] += wv * g;
                            wgrad += fmap[[di, y, x]] * g;
                        }
                    }
                    head_weight[[di, r]] += wgrad;
                }
            }
        }
    }

    let conv = model.backbone.backward(&fwd.acts, &grad_fmap);
    let terms = CamLossTerms {
        overlap,
        regularization,
        bce,
        total: opts.lambda1 * overlap + opts.lambda2 * regularization + bce,
    };
    (
        terms,
        ModelGrads {
            conv,
            head_weight,
            head_bias,
        },
    )
}

fn combined_logits(
    plain: &Array2<f64>,
    substituted: &Array2<f64>,
    exclusive: &[bool],
) -> Array2<f64> {
    let mut combined = plain.clone();
    for (i, &is_ex) in exclusive.iter().enumerate() {
        if is_ex {
            combined.row_mut(i).assign(&substituted.row(i));
        }
    }
    combined
}

fn feature_split_forward_parts(
    model: &Model,
    o_rows: &[usize],
    context_offset: &Array1<f64>,
    pooled: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let plain = model.head.forward_batch(pooled);
    let w_o = gather_rows(&model.head.weight, o_rows);
    let x_o = gather_cols(pooled, o_rows);
    let mut substituted = x_o.dot(&w_o);
    substituted += context_offset;
    if let Some(bias) = &model.head.bias {
        substituted += bias;
    }
    (plain, substituted)
}

/// Forward-only evaluation of the feature-split weighted objective.
///
/// `context_offset` is the frozen W_sᵀx̄_s contribution; it is data, not a
/// function of the parameters, which is exactly the semantics backprop uses
/// (no gradient flows through W_s on the substituted path).
pub fn feature_split_objective_value(
    model: &Model,
    o_rows: &[usize],
    context_offset: &Array1<f64>,
    images: &Array4<f64>,
    targets: &Array2<f64>,
    exclusive: &[bool],
    weights: &Array2<f64>,
) -> f64 {
    let acts = model.backbone.forward(images);
    let (plain, substituted) =
        feature_split_forward_parts(model, o_rows, context_offset, &acts.pooled);
    let combined = combined_logits(&plain, &substituted, exclusive);
    weighted_bce(&combined, targets, weights)
}

/// Feature-split weighted objective with exact masked gradients.
///
/// Exclusive samples contribute gradients only through W_o (and the bias);
/// their ∂loss/∂W_s is identically zero. Non-exclusive samples use the full
/// head. Also returns the batch mean of x_s taken from the plain
/// (non-substituted) features, which feeds the x̄_s history.
pub fn feature_split_objective(
    model: &Model,
    o_rows: &[usize],
    s_rows: &[usize],
    context_offset: &Array1<f64>,
    images: &Array4<f64>,
    targets: &Array2<f64>,
    exclusive: &[bool],
    weights: &Array2<f64>,
) -> (f64, ModelGrads, Array1<f64>) {
    let acts = model.backbone.forward(images);
    let pooled = &acts.pooled;
    let (plain, substituted) = feature_split_forward_parts(model, o_rows, context_offset, pooled);
    let combined = combined_logits(&plain, &substituted, exclusive);
    let loss = weighted_bce(&combined, targets, weights);
    let grad = weighted_bce_grad(&combined, targets, weights);

    // route rows by mask
    let mut grad_plain = grad.clone();
    let mut grad_sub = grad.clone();
    for (i, &is_ex) in exclusive.iter().enumerate() {
        if is_ex {
            grad_plain.row_mut(i).fill(0.0);
        } else {
            grad_sub.row_mut(i).fill(0.0);
        }
    }

    let d = model.head.feature_dim();
    let w_o = gather_rows(&model.head.weight, o_rows);
    let x_o = gather_cols(pooled, o_rows);

    // head gradients: full rows from the plain path, o-rows only from the
    // substituted path
    let mut head_weight = pooled.t().dot(&grad_plain);
    let dw_o = x_o.t().dot(&grad_sub);
    for (k, &r) in o_rows.iter().enumerate() {
        for mcol in 0..head_weight.ncols() {
            head_weight[[r, mcol]] += dw_o[[k, mcol]];
        }
    }
    let head_bias = model
        .head
        .bias
        .as_ref()
        .map(|_| grad.sum_axis(Axis(0)));

    // feature gradients
    let mut dx = grad_plain.dot(&model.head.weight.t());
    let dx_o = grad_sub.dot(&w_o.t());
    for (k, &r) in o_rows.iter().enumerate() {
        for i in 0..dx.nrows() {
            dx[[i, r]] += dx_o[[i, k]];
        }
    }

    let (_, _, h, w) = acts.feature_map().dim();
    let grad_fmap = pool_backward(&dx, h, w);
    let conv = model.backbone.backward(&acts, &grad_fmap);

    let batch_mean_xs = {
        let xs = gather_cols(pooled, s_rows);
        let b = xs.nrows().max(1) as f64;
        xs.sum_axis(Axis(0)) / b
    };

    (
        loss,
        ModelGrads {
            conv,
            head_weight,
            head_bias,
        },
        batch_mean_xs,
    )
}
