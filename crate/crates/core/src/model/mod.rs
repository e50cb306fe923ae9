//! The desk-scale convolutional backbone and classifier head.
//!
//! The backbone contract is: a stack of strided conv+ReLU blocks produces a
//! spatial feature map, global average pooling reduces it to a D-vector, and
//! a linear head maps that to per-category scores. Forward passes cache the
//! activations needed for the hand-rolled backward passes; gradient
//! correctness is enforced by finite-difference tests.

pub mod cam;
pub mod checkpoint;
pub mod head;

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use head::{split_head, ClassifierHead, SplitClassifierHead, SplitMode};

/// One zero-padded strided convolution followed by ReLU.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvLayer {
    /// (out_channels, in_channels, k, k)
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.weight.dim().2;
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    /// Pre-activation convolution of one sample (C, H, W).
    fn forward_sample(&self, input: &ndarray::ArrayView3<f64>) -> Array3<f64> {
        let (out_ch, in_ch, k, _) = self.weight.dim();
        let (_, h, w) = input.dim();
        let (oh, ow) = self.out_hw(h, w);
        let mut out = Array3::zeros((out_ch, oh, ow));
        for o in 0..out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.bias[o];
                    for ic in 0..in_ch {
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += self.weight[[o, ic, ky, kx]]
                                    * input[[ic, iy as usize, ix as usize]];
                            }
                        }
                    }
                    out[[o, oy, ox]] = acc;
                }
            }
        }
        out
    }

    /// Backward of one sample given the gradient of the pre-activation
    /// output. Returns (dWeight, dBias, dInput).
    fn backward_sample(
        &self,
        input: &ndarray::ArrayView3<f64>,
        grad_pre: &ndarray::ArrayView3<f64>,
    ) -> (Array4<f64>, Array1<f64>, Array3<f64>) {
        let (out_ch, in_ch, k, _) = self.weight.dim();
        let (_, h, w) = input.dim();
        let (_, goh, gow) = grad_pre.dim();
        let mut dw = Array4::zeros(self.weight.dim());
        let mut db = Array1::zeros(out_ch);
        let mut dinput = Array3::zeros(input.dim());
        for o in 0..out_ch {
            for oy in 0..goh {
                for ox in 0..gow {
                    let g = grad_pre[[o, oy, ox]];
                    if g == 0.0 {
                        continue;
                    }
                    db[o] += g;
                    for ic in 0..in_ch {
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                dw[[o, ic, ky, kx]] += g * input[[ic, iy as usize, ix as usize]];
                                dinput[[ic, iy as usize, ix as usize]] +=
                                    g * self.weight[[o, ic, ky, kx]];
                            }
                        }
                    }
                }
            }
        }
        (dw, db, dinput)
    }
}

/// Architecture of the small CNN backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Output channels of each conv block; the last entry is the feature
    /// dimension D.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub head_bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            conv_channels: vec![16, 32, 64],
            kernel: 3,
            stride: 2,
            padding: 1,
            head_bias: true,
        }
    }
}

impl ModelConfig {
    pub fn feature_dim(&self) -> usize {
        *self.conv_channels.last().expect("at least one conv block")
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() {
            return Err(Error::Config("need at least one conv block".into()));
        }
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::Config("kernel and stride must be positive".into()));
        }
        Ok(())
    }
}

/// Conv blocks with global average pooling on top.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmallCnn {
    pub layers: Vec<ConvLayer>,
}

impl SmallCnn {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.conv_channels.len());
        let mut in_ch = cfg.input_channels;
        for &out_ch in &cfg.conv_channels {
            let fan_in = (in_ch * cfg.kernel * cfg.kernel) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let weight = Array4::from_shape_fn((out_ch, in_ch, cfg.kernel, cfg.kernel), |_| {
                rng.random_range(-bound..bound)
            });
            layers.push(ConvLayer {
                weight,
                bias: Array1::zeros(out_ch),
                stride: cfg.stride,
                padding: cfg.padding,
            });
            in_ch = out_ch;
        }
        Ok(Self { layers })
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.dim().0
    }

    /// Full forward pass with cached activations.
    pub fn forward(&self, images: &Array4<f64>) -> BackboneActivations {
        let batch = images.dim().0;
        let mut inputs: Vec<Array4<f64>> = vec![images.clone()];
        let mut pre: Vec<Array4<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let current = inputs.last().expect("seeded with images");
            let samples: Vec<Array3<f64>> = (0..batch)
                .into_par_iter()
                .map(|i| layer.forward_sample(&current.index_axis(Axis(0), i)))
                .collect();
            let (c, h, w) = samples[0].dim();
            let mut pre_l = Array4::zeros((batch, c, h, w));
            let mut post_l = Array4::zeros((batch, c, h, w));
            for (i, s) in samples.into_iter().enumerate() {
                post_l
                    .index_axis_mut(Axis(0), i)
                    .assign(&s.mapv(|v| v.max(0.0)));
                pre_l.index_axis_mut(Axis(0), i).assign(&s);
            }
            pre.push(pre_l);
            inputs.push(post_l);
        }
        let feature_map = inputs.last().expect("non-empty").clone();
        let pooled = global_average_pool(&feature_map);
        BackboneActivations {
            inputs,
            pre,
            pooled,
        }
    }

    /// Backpropagates a gradient on the (post-ReLU) feature map down the
    /// conv stack, returning per-layer parameter gradients.
    pub fn backward(
        &self,
        acts: &BackboneActivations,
        grad_feature_map: &Array4<f64>,
    ) -> Vec<ConvGrads> {
        let batch = grad_feature_map.dim().0;
        let mut grads: Vec<ConvGrads> = self
            .layers
            .iter()
            .map(|l| ConvGrads {
                weight: Array4::zeros(l.weight.dim()),
                bias: Array1::zeros(l.bias.len()),
            })
            .collect();
        let mut grad_out = grad_feature_map.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            // ReLU mask
            let mut grad_pre = grad_out;
            grad_pre.zip_mut_with(&acts.pre[l], |g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
            let input = &acts.inputs[l];
            let per_sample: Vec<(Array4<f64>, Array1<f64>, Array3<f64>)> = (0..batch)
                .into_par_iter()
                .map(|i| {
                    layer.backward_sample(
                        &input.index_axis(Axis(0), i),
                        &grad_pre.index_axis(Axis(0), i),
                    )
                })
                .collect();
            let mut grad_in = Array4::zeros(input.dim());
            for (i, (dw, db, din)) in per_sample.into_iter().enumerate() {
                grads[l].weight += &dw;
                grads[l].bias += &db;
                grad_in.index_axis_mut(Axis(0), i).assign(&din);
            }
            grad_out = grad_in;
        }
        grads
    }
}

/// Spatial mean of each channel: (B, D, H, W) -> (B, D).
pub fn global_average_pool(feature_map: &Array4<f64>) -> Array2<f64> {
    let (b, d, h, w) = feature_map.dim();
    let mut pooled = Array2::zeros((b, d));
    let denom = (h * w) as f64;
    for bi in 0..b {
        for di in 0..d {
            let mut acc = 0.0;
            for y in 0..h {
                for x in 0..w {
                    acc += feature_map[[bi, di, y, x]];
                }
            }
            pooled[[bi, di]] = acc / denom;
        }
    }
    pooled
}

/// Spreads a gradient on pooled features back over the feature map.
pub fn pool_backward(grad_pooled: &Array2<f64>, h: usize, w: usize) -> Array4<f64> {
    let (b, d) = grad_pooled.dim();
    let denom = (h * w) as f64;
    let mut out = Array4::zeros((b, d, h, w));
    for bi in 0..b {
        for di in 0..d {
            let g = grad_pooled[[bi, di]] / denom;
            for y in 0..h {
                for x in 0..w {
                    out[[bi, di, y, x]] = g;
                }
            }
        }
    }
    out
}

/// Cached activations of one backbone forward pass.
#[derive(Debug, Clone)]
pub struct BackboneActivations {
    /// inputs[0] is the image batch; inputs[l + 1] is the post-ReLU output
    /// of layer l. The last entry is the feature map.
    pub inputs: Vec<Array4<f64>>,
    /// Pre-activation outputs per layer.
    pub pre: Vec<Array4<f64>>,
    /// Global average pool of the feature map, (B, D).
    pub pooled: Array2<f64>,
}

impl BackboneActivations {
    pub fn feature_map(&self) -> &Array4<f64> {
        self.inputs.last().expect("non-empty")
    }
}

/// Parameter gradients of one conv layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvGrads {
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

/// Gradients (or any parameter-shaped buffer) for a whole model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelGrads {
    pub conv: Vec<ConvGrads>,
    pub head_weight: Array2<f64>,
    pub head_bias: Option<Array1<f64>>,
}

impl ModelGrads {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            conv: model
                .backbone
                .layers
                .iter()
                .map(|l| ConvGrads {
                    weight: Array4::zeros(l.weight.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
            head_weight: Array2::zeros(model.head.weight.dim()),
            head_bias: model.head.bias.as_ref().map(|b| Array1::zeros(b.len())),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (a, b) in self.conv.iter_mut().zip(&other.conv) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
        self.head_weight += &other.head_weight;
        if let (Some(a), Some(b)) = (self.head_bias.as_mut(), other.head_bias.as_ref()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.conv {
            g.weight *= factor;
            g.bias *= factor;
        }
        self.head_weight *= factor;
        if let Some(b) = self.head_bias.as_mut() {
            *b *= factor;
        }
    }

    /// Flattened view matching [`Model::param_vector`] order.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.conv {
            out.extend(g.weight.iter());
            out.extend(g.bias.iter());
        }
        out.extend(self.head_weight.iter());
        if let Some(b) = &self.head_bias {
            out.extend(b.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.conv
            .iter()
            .all(|g| g.weight.iter().all(|v| v.is_finite()) && g.bias.iter().all(|v| v.is_finite()))
            && self.head_weight.iter().all(|v| v.is_finite())
            && self
                .head_bias
                .as_ref()
                .map_or(true, |b| b.iter().all(|v| v.is_finite()))
    }
}

/// Backbone plus classifier head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub backbone: SmallCnn,
    pub head: ClassifierHead,
}

/// One full forward pass: backbone activations plus head scores.
#[derive(Debug, Clone)]
pub struct ModelForward {
    pub acts: BackboneActivations,
    /// Pre-sigmoid scores, (B, M).
    pub scores: Array2<f64>,
}

impl Model {
    pub fn new(cfg: &ModelConfig, num_categories: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let backbone = SmallCnn::init(cfg, &mut rng)?;
        let head = ClassifierHead::init(
            backbone.feature_dim(),
            num_categories,
            cfg.head_bias,
            &mut rng,
        );
        Ok(Self { backbone, head })
    }

    pub fn num_categories(&self) -> usize {
        self.head.weight.dim().1
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }

    pub fn forward(&self, images: &Array4<f64>) -> ModelForward {
        let acts = self.backbone.forward(images);
        let scores = self.head.forward_batch(&acts.pooled);
        ModelForward { acts, scores }
    }

    /// Total parameter count.
    pub fn num_params(&self) -> usize {
        self.param_vector().len()
    }

    pub fn param_vector(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.backbone.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out.extend(self.head.weight.iter());
        if let Some(b) = &self.head.bias {
            out.extend(b.iter());
        }
        out
    }

    pub fn set_param_vector(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.num_params();
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} params, got {}",
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.backbone.layers {
            for v in l.weight.iter_mut() {
                *v = it.next().expect("length checked");
            }
            for v in l.bias.iter_mut() {
                *v = it.next().expect("length checked");
            }
        }
        for v in self.head.weight.iter_mut() {
            *v = it.next().expect("length checked");
        }
        if let Some(b) = &mut self.head.bias {
            for v in b.iter_mut() {
                *v = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// SGD-with-momentum update: v = m*v + g + wd*w; w -= lr*v.
    pub fn apply_update(
        &mut self,
        grads: &ModelGrads,
        velocity: &mut ModelGrads,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) {
        fn upd(w: &mut f64, g: f64, v: &mut f64, lr: f64, momentum: f64, wd: f64) {
            *v = momentum * *v + g + wd * *w;
            *w -= lr * *v;
        }
        for (l, (g, v)) in self
            .backbone
            .layers
            .iter_mut()
            .zip(grads.conv.iter().zip(velocity.conv.iter_mut()))
        {
            for ((w, &g), v) in l.weight.iter_mut().zip(g.weight.iter()).zip(v.weight.iter_mut()) {
                upd(w, g, v, lr, momentum, weight_decay);
            }
            for ((w, &g), v) in l.bias.iter_mut().zip(g.bias.iter()).zip(v.bias.iter_mut()) {
                upd(w, g, v, lr, momentum, weight_decay);
            }
        }
        for ((w, &g), v) in self
            .head
            .weight
            .iter_mut()
            .zip(grads.head_weight.iter())
            .zip(velocity.head_weight.iter_mut())
        {
            upd(w, g, v, lr, momentum, weight_decay);
        }
        if let (Some(bias), Some(g), Some(v)) = (
            self.head.bias.as_mut(),
            grads.head_bias.as_ref(),
            velocity.head_bias.as_mut(),
        ) {
            for ((w, &g), v) in bias.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                upd(w, g, v, lr, momentum, weight_decay);
            }
        }
    }
}
