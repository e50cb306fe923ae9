//! Trainers: the stage-1 standard recipe and the stage-2 mitigation
//! methods, with seeded schedules, per-epoch history, and epoch selection.
//!
//! Every trainer is run-to-run deterministic given the same seed: data
//! order, augmentations, and weight initialization all derive from it, and
//! per-epoch RNG streams make resumed runs reproduce uninterrupted ones.

pub mod batching;
pub mod loss;
pub mod objective;
pub mod transforms;

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::bias::BiasedPair;
use crate::data::preprocess::PreprocessConfig;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::model::checkpoint::{Checkpoint, SplitState, TrainedModel};
use crate::model::{split_head, Model, ModelConfig, ModelGrads, SplitClassifierHead, SplitMode};
use batching::{assemble_train_batch, exclusive_mask, partition_batch_cooccur, take_rows};
use loss::{broadcast_class_weights, weighted_bce, Reduction};
use objective::{bce_objective, cam_objective, feature_split_objective, CamLossOptions};
use transforms::{
    alpha_class_weights, apply_baseline_transform, MethodName, SplitBiasedRemap, TransformOutcome,
};

/// Training hyperparameters. Defaults mirror the stage-2 recipe; see
/// [`Hyperparams::stage1`] for the stage-1 one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha_min: f64,
    pub beta: f64,
    pub weight_factor: f64,
    /// o-subspace size for feature-split; defaults to D/2.
    pub d_o: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
    /// 0-based epoch index from which the dropped learning rate applies.
    pub lr_drop_epoch: Option<usize>,
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.1,
            alpha_min: 3.0,
            beta: 0.99,
            weight_factor: 10.0,
            d_o: None,
            epochs: 20,
            lr: 0.01,
            lr_drop_epoch: None,
            lr_drop_factor: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 200,
            seed: 0,
        }
    }
}

impl Hyperparams {
    /// The stage-1 recipe: lr 0.1 stepped down by 10x at the drop epoch,
    /// momentum 0.9, no weight decay.
    pub fn stage1(epochs: usize, lr_drop_epoch: Option<usize>, seed: u64) -> Self {
        Self {
            epochs,
            lr: 0.1,
            lr_drop_epoch,
            seed,
            ..Self::default()
        }
    }

    /// The stage-2 recipe: 20 epochs at lr 0.01.
    pub fn stage2(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Switches that resolve the ambiguities the methods leave open.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodOptions {
    /// Use the α-weighted BCE. Defaults per method: on for feature_split,
    /// off otherwise. Turning it off on feature_split is the weighted-loss
    /// ablation; turning it on for a stage-2 standard run trains the plain
    /// model with the feature-split weighted loss.
    pub weighted_loss: Option<bool>,
    pub split_mode: SplitMode,
    /// Min-max normalize CAMs inside the overlap/regularization terms.
    pub cam_normalize: bool,
    /// Reduction of the CAM terms over co-occurring images.
    pub cam_reduction: Reduction,
    pub split_biased_remap: SplitBiasedRemap,
}

impl Default for MethodOptions {
    fn default() -> Self {
        Self {
            weighted_loss: None,
            split_mode: SplitMode::Middle,
            cam_normalize: true,
            cam_reduction: Reduction::Mean,
            split_biased_remap: SplitBiasedRemap::Max,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: MethodName,
    pub hyper: Hyperparams,
    #[serde(default)]
    pub options: MethodOptions,
}

impl MethodSpec {
    pub fn stage1_standard(epochs: usize, lr_drop_epoch: Option<usize>, seed: u64) -> Self {
        Self {
            name: MethodName::Standard,
            hyper: Hyperparams::stage1(epochs, lr_drop_epoch, seed),
            options: MethodOptions::default(),
        }
    }

    pub fn stage2(name: MethodName, seed: u64) -> Self {
        Self {
            name,
            hyper: Hyperparams::stage2(seed),
            options: MethodOptions::default(),
        }
    }

    fn uses_alpha_weights(&self) -> bool {
        match self.name {
            MethodName::FeatureSplit => self.options.weighted_loss.unwrap_or(true),
            MethodName::Standard => self.options.weighted_loss.unwrap_or(false),
            _ => false,
        }
    }
}

/// How the final model is picked from the epoch sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    Last,
    LowestValLoss,
    BestExclusive,
    BestExclusivePlusCooccur,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainContext<'a> {
    pub dataset: &'a LabeledDataset,
    pub preproc: PreprocessConfig,
    pub model_config: &'a ModelConfig,
    pub val: Option<&'a LabeledDataset>,
    /// Pairs used for validation-metric curves and metric-based selection.
    pub val_pairs: Option<&'a [BiasedPair]>,
    pub selection: SelectionMode,
}

impl<'a> TrainContext<'a> {
    pub fn new(
        dataset: &'a LabeledDataset,
        preproc: PreprocessConfig,
        model_config: &'a ModelConfig,
    ) -> Self {
        Self {
            dataset,
            preproc,
            model_config,
            val: None,
            val_pairs: None,
            selection: SelectionMode::Last,
        }
    }
}

/// One line of the training history (serialized as JSON lines).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_bce: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_overlap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_regularization: Option<f64>,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_exclusive: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_cooccur: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed ^ ((epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

fn effective_lr(hyper: &Hyperparams, epoch: usize) -> f64 {
    match hyper.lr_drop_epoch {
        Some(drop) if epoch >= drop => hyper.lr * hyper.lr_drop_factor,
        _ => hyper.lr,
    }
}

enum StepKind {
    Plain {
        /// Per-dataset-row loss weights (rows aligned with the training
        /// dataset); `None` means unweighted.
        row_weights: Option<Array2<f64>>,
    },
    Cam {
        pre: Box<Model>,
        pairs: Vec<(usize, usize)>,
        opts: CamLossOptions,
    },
    FeatureSplit {
        split: Box<SplitClassifierHead>,
        pairs: Vec<(usize, usize)>,
        class_weights: Array1<f64>,
    },
}

impl StepKind {
    fn split_state(&self) -> Option<SplitState> {
        match self {
            StepKind::FeatureSplit { split, .. } => Some(SplitState::from_split_head(split)),
            _ => None,
        }
    }
}

struct RunSpec<'a> {
    train_data: &'a LabeledDataset,
    /// Dataset used for validation-loss curves (already label-transformed
    /// where the method requires it).
    val_loss_data: Option<LabeledDataset>,
    /// Untransformed validation set for metric curves.
    val_metric_data: Option<&'a LabeledDataset>,
    val_pairs: Option<&'a [BiasedPair]>,
    preproc: PreprocessConfig,
    hyper: &'a Hyperparams,
    selection: SelectionMode,
    category_names: Vec<String>,
    model_config: ModelConfig,
    split_biased: Option<transforms::SplitBiasedMapping>,
    start_epoch: usize,
    total_epochs: usize,
}

struct EpochStats {
    bce_sum: f64,
    bce_count: usize,
    overlap_sum: f64,
    regularization_sum: f64,
    cam_batches: usize,
}

impl EpochStats {
    fn new() -> Self {
        Self {
            bce_sum: 0.0,
            bce_count: 0,
            overlap_sum: 0.0,
            regularization_sum: 0.0,
            cam_batches: 0,
        }
    }
}

fn guard_finite(loss: f64, grads: &ModelGrads, epoch: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Diverged(format!(
            "non-finite loss at epoch {epoch}: {loss}"
        )));
    }
    if !grads.is_finite() {
        return Err(Error::Diverged(format!(
            "non-finite gradients at epoch {epoch}"
        )));
    }
    Ok(())
}

fn validation_loss(
    model: &Model,
    data: &LabeledDataset,
    preproc: &PreprocessConfig,
    batch_size: usize,
) -> Result<f64> {
    let n = data.len();
    let mut total = 0.0;
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (images, targets) = batching::assemble_eval_batch(data, chunk, preproc)?;
        let fwd = model.forward(&images);
        let ones = Array2::from_elem(targets.dim(), 1.0);
        total += weighted_bce(&fwd.scores, &targets, &ones) * chunk.len() as f64;
    }
    Ok(total / n as f64)
}

fn run_loop(
    mut model: Model,
    mut velocity: ModelGrads,
    mut kind: StepKind,
    rs: RunSpec<'_>,
) -> Result<TrainResult> {
    if !rs.train_data.has_images() {
        return Err(Error::Data(
            "training requires a dataset with image payloads".into(),
        ));
    }
    if rs.start_epoch >= rs.total_epochs {
        return Err(Error::Config(format!(
            "nothing to train: start epoch {} >= total epochs {}",
            rs.start_epoch, rs.total_epochs
        )));
    }
    match rs.selection {
        SelectionMode::Last => {}
        SelectionMode::LowestValLoss if rs.val_loss_data.is_none() => {
            return Err(Error::Config(
                "lowest_val_loss selection needs a validation set".into(),
            ))
        }
        SelectionMode::BestExclusive | SelectionMode::BestExclusivePlusCooccur
            if rs.val_metric_data.is_none() || rs.val_pairs.is_none() =>
        {
            return Err(Error::Config(
                "metric-based selection needs a validation set and pairs".into(),
            ))
        }
        _ => {}
    }

    let n = rs.train_data.len();
    let batch = rs.hyper.batch_size.max(1);
    let mut history = Vec::new();
    let mut best: Option<(f64, Model, Option<SplitState>)> = None;

    for epoch in rs.start_epoch..rs.total_epochs {
        let started = Instant::now();
        let lr = effective_lr(rs.hyper, epoch);
        let mut rng = epoch_rng(rs.hyper.seed, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut stats = EpochStats::new();

        for chunk in order.chunks(batch) {
            let (images, targets) =
                assemble_train_batch(rs.train_data, chunk, &rs.preproc, &mut rng)?;
            match &mut kind {
                StepKind::Plain { row_weights } => {
                    let weights = match row_weights {
                        Some(wm) => Array2::from_shape_fn(
                            (chunk.len(), wm.ncols()),
                            |(r, c)| wm[[chunk[r], c]],
                        ),
                        None => Array2::from_elem(targets.dim(), 1.0),
                    };
                    let (l, grads, _) = bce_objective(&model, &images, &targets, &weights);
                    guard_finite(l, &grads, epoch)?;
                    model.apply_update(
                        &grads,
                        &mut velocity,
                        lr,
                        rs.hyper.momentum,
                        rs.hyper.weight_decay,
                    );
                    stats.bce_sum += l * chunk.len() as f64;
                    stats.bce_count += chunk.len();
                }
                StepKind::Cam { pre, pairs, opts } => {
                    let (co, other) = partition_batch_cooccur(&targets, pairs);
                    if !co.is_empty() {
                        let (si, st) = take_rows(&images, &targets, &co);
                        let (terms, grads) = cam_objective(&model, pre, &si, &st, pairs, opts);
                        guard_finite(terms.total, &grads, epoch)?;
                        model.apply_update(
                            &grads,
                            &mut velocity,
                            lr,
                            rs.hyper.momentum,
                            rs.hyper.weight_decay,
                        );
                        stats.bce_sum += terms.bce * co.len() as f64;
                        stats.bce_count += co.len();
                        stats.overlap_sum += terms.overlap;
                        stats.regularization_sum += terms.regularization;
                        stats.cam_batches += 1;
                    }
                    if !other.is_empty() {
                        let (si, st) = take_rows(&images, &targets, &other);
                        let ones = Array2::from_elem(st.dim(), 1.0);
                        let (l, grads, _) = bce_objective(&model, &si, &st, &ones);
                        guard_finite(l, &grads, epoch)?;
                        model.apply_update(
                            &grads,
                            &mut velocity,
                            lr,
                            rs.hyper.momentum,
                            rs.hyper.weight_decay,
                        );
                        stats.bce_sum += l * other.len() as f64;
                        stats.bce_count += other.len();
                    }
                }
                StepKind::FeatureSplit {
                    split,
                    pairs,
                    class_weights,
                } => {
                    let offset = split.context_offset();
                    let mask = exclusive_mask(&targets, pairs);
                    let weights = broadcast_class_weights(class_weights, chunk.len());
                    let (l, grads, mean_xs) = feature_split_objective(
                        &model,
                        &split.o_rows,
                        &split.s_rows,
                        &offset,
                        &images,
                        &targets,
                        &mask,
                        &weights,
                    );
                    guard_finite(l, &grads, epoch)?;
                    model.apply_update(
                        &grads,
                        &mut velocity,
                        lr,
                        rs.hyper.momentum,
                        rs.hyper.weight_decay,
                    );
                    // use-then-update: the offset above came from the
                    // previous batches' history
                    split.update_xs_history(mean_xs);
                    split.head = model.head.clone();
                    stats.bce_sum += l * chunk.len() as f64;
                    stats.bce_count += chunk.len();
                }
            }
        }

        let loss_bce = stats.bce_sum / stats.bce_count.max(1) as f64;
        let (loss_overlap, loss_regularization) = if stats.cam_batches > 0 {
            (
                Some(stats.overlap_sum / stats.cam_batches as f64),
                Some(stats.regularization_sum / stats.cam_batches as f64),
            )
        } else {
            (None, None)
        };

        let val_loss = match &rs.val_loss_data {
            Some(v) => Some(validation_loss(&model, v, &rs.preproc, batch)?),
            None => None,
        };
        let (val_exclusive, val_cooccur) = match (rs.val_metric_data, rs.val_pairs) {
            (Some(v), Some(pairs)) if !pairs.is_empty() => {
                let preds = eval::predict_scores(
                    &model,
                    rs.split_biased.as_ref(),
                    v,
                    &rs.preproc,
                    batch,
                )?;
                let report = eval::evaluate(&preds, v, pairs, eval::MetricKind::MAp, None)?;
                (report.aggregates.exclusive, report.aggregates.cooccur)
            }
            _ => (None, None),
        };

        let improved = match rs.selection {
            SelectionMode::Last => None,
            SelectionMode::LowestValLoss => val_loss.map(|v| -v),
            SelectionMode::BestExclusive => val_exclusive,
            SelectionMode::BestExclusivePlusCooccur => match (val_exclusive, val_cooccur) {
                (Some(e), Some(c)) => Some(e + c),
                (Some(e), None) => Some(e),
                _ => None,
            },
        };
        if let Some(score) = improved {
            if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
                best = Some((score, model.clone(), kind.split_state()));
            }
        }

        let lambda_terms = match &kind {
            StepKind::Cam { opts, .. } => Some((opts.lambda1, opts.lambda2)),
            _ => None,
        };
        let loss_total = loss_bce
            + lambda_terms.map_or(0.0, |(l1, l2)| {
                l1 * loss_overlap.unwrap_or(0.0) + l2 * loss_regularization.unwrap_or(0.0)
            });

        history.push(EpochRecord {
            epoch,
            lr,
            loss_total,
            loss_bce,
            loss_overlap,
            loss_regularization,
            seconds: started.elapsed().as_secs_f64(),
            val_loss,
            val_exclusive,
            val_cooccur,
        });
    }

    let (final_model, final_split) = match (rs.selection, best) {
        (SelectionMode::Last, _) | (_, None) => {
            let split = kind.split_state();
            (model, split)
        }
        (_, Some((_, m, s))) => (m, s),
    };

    let trained = TrainedModel {
        model: final_model,
        model_config: rs.model_config,
        category_names: rs.category_names,
        split: final_split,
        split_biased: rs.split_biased,
        epoch: rs.total_epochs,
        seed: rs.hyper.seed,
    };
    trained.validate()?;
    Ok(TrainResult {
        checkpoint: Checkpoint {
            trained,
            optimizer: Some(velocity),
        },
        history,
    })
}

/// Stage-1 training: plain BCE with the standard recipe. `resume` continues
/// an interrupted run and reproduces the uninterrupted trajectory.
pub fn train_standard(
    ctx: &TrainContext<'_>,
    spec: &MethodSpec,
    resume: Option<Checkpoint>,
) -> Result<TrainResult> {
    if spec.name != MethodName::Standard {
        return Err(Error::Config(format!(
            "train_standard runs the standard recipe, got {:?}",
            spec.name.as_str()
        )));
    }
    let names: Vec<String> = ctx.dataset.category_names().to_vec();
    let (model, velocity, start_epoch) = match resume {
        Some(ck) => {
            if ck.trained.category_names != names {
                return Err(Error::Checkpoint(
                    "checkpoint categories do not match the dataset".into(),
                ));
            }
            let velocity = ck
                .optimizer
                .unwrap_or_else(|| ModelGrads::zeros_like(&ck.trained.model));
            (ck.trained.model, velocity, ck.trained.epoch)
        }
        None => {
            let model = Model::new(ctx.model_config, names.len(), spec.hyper.seed)?;
            let velocity = ModelGrads::zeros_like(&model);
            (model, velocity, 0)
        }
    };
    run_loop(
        model,
        velocity,
        StepKind::Plain { row_weights: None },
        RunSpec {
            train_data: ctx.dataset,
            val_loss_data: ctx.val.cloned(),
            val_metric_data: ctx.val,
            val_pairs: ctx.val_pairs,
            preproc: ctx.preproc,
            hyper: &spec.hyper,
            selection: ctx.selection,
            category_names: names,
            model_config: ctx.model_config.clone(),
            split_biased: None,
            start_epoch,
            total_epochs: spec.hyper.epochs,
        },
    )
}

/// Stage-2 training on top of a standard checkpoint. `split_biased` ignores
/// the checkpoint and trains from scratch with an extended head.
pub fn train_stage2(
    spec: &MethodSpec,
    standard: &TrainedModel,
    ctx: &TrainContext<'_>,
    pairs: &[BiasedPair],
) -> Result<TrainResult> {
    let names: Vec<String> = ctx.dataset.category_names().to_vec();
    if spec.name != MethodName::SplitBiased {
        standard.validate()?;
        if standard.category_names != names {
            return Err(Error::Checkpoint(
                "standard checkpoint categories do not match the dataset".into(),
            ));
        }
        if standard.split_biased.is_some() {
            return Err(Error::Checkpoint(
                "stage-2 training must start from a plain standard checkpoint".into(),
            ));
        }
    }
    let pair_idx: Vec<(usize, usize)> = pairs.iter().map(|p| (p.b, p.c)).collect();

    let mut train_owned: Option<LabeledDataset> = None;
    let mut val_loss_data: Option<LabeledDataset> = ctx.val.cloned();
    let mut split_biased = None;
    let mut model = standard.model.clone();
    let mut model_config = standard.model_config.clone();
    let mut kind = StepKind::Plain { row_weights: None };

    match spec.name {
        MethodName::Standard => {
            if spec.uses_alpha_weights() {
                let class_w =
                    alpha_class_weights(ctx.dataset, &pair_idx, spec.hyper.alpha_min)?;
                let n = ctx.dataset.len();
                kind = StepKind::Plain {
                    row_weights: Some(broadcast_class_weights(&class_w, n)),
                };
            }
        }
        MethodName::RemoveLabels | MethodName::RemoveImages => {
            let outcome = apply_baseline_transform(
                spec.name,
                ctx.dataset,
                pairs,
                spec.hyper.weight_factor,
                spec.hyper.beta,
                spec.options.split_biased_remap,
            )?;
            let TransformOutcome::Dataset(d) = outcome else {
                unreachable!("these methods produce datasets")
            };
            train_owned = Some(d);
        }
        MethodName::Weighted | MethodName::NegativePenalty | MethodName::ClassBalancing => {
            let outcome = apply_baseline_transform(
                spec.name,
                ctx.dataset,
                pairs,
                spec.hyper.weight_factor,
                spec.hyper.beta,
                spec.options.split_biased_remap,
            )?;
            let TransformOutcome::Weights(w) = outcome else {
                unreachable!("these methods produce weights")
            };
            kind = StepKind::Plain {
                row_weights: Some(w),
            };
        }
        MethodName::SplitBiased => {
            let outcome = apply_baseline_transform(
                spec.name,
                ctx.dataset,
                pairs,
                spec.hyper.weight_factor,
                spec.hyper.beta,
                spec.options.split_biased_remap,
            )?;
            let TransformOutcome::SplitBiased { dataset, mapping } = outcome else {
                unreachable!("split_biased produces the extended dataset")
            };
            model_config = ctx.model_config.clone();
            model = Model::new(
                ctx.model_config,
                dataset.num_categories(),
                spec.hyper.seed,
            )?;
            if let Some(val) = ctx.val {
                let out = apply_baseline_transform(
                    spec.name,
                    val,
                    pairs,
                    spec.hyper.weight_factor,
                    spec.hyper.beta,
                    spec.options.split_biased_remap,
                )?;
                let TransformOutcome::SplitBiased { dataset: v, .. } = out else {
                    unreachable!()
                };
                val_loss_data = Some(v);
            }
            train_owned = Some(dataset);
            split_biased = Some(mapping);
        }
        MethodName::CamBased => {
            if pairs.is_empty() {
                return Err(Error::Config(
                    "cam_based needs a non-empty pair list".into(),
                ));
            }
            kind = StepKind::Cam {
                pre: Box::new(standard.model.clone()),
                pairs: pair_idx.clone(),
                opts: CamLossOptions {
                    lambda1: spec.hyper.lambda1,
                    lambda2: spec.hyper.lambda2,
                    normalize: spec.options.cam_normalize,
                    reduction: spec.options.cam_reduction,
                },
            };
        }
        MethodName::FeatureSplit => {
            let d = model.feature_dim();
            let d_o = spec.hyper.d_o.unwrap_or(d / 2);
            let split = split_head(
                model.head.clone(),
                spec.options.split_mode,
                d_o,
                spec.hyper.seed,
            )?;
            let class_weights = if spec.uses_alpha_weights() {
                alpha_class_weights(ctx.dataset, &pair_idx, spec.hyper.alpha_min)?
            } else {
                Array1::from_elem(names.len(), 1.0)
            };
            kind = StepKind::FeatureSplit {
                split: Box::new(split),
                pairs: pair_idx.clone(),
                class_weights,
            };
        }
    }

    let velocity = ModelGrads::zeros_like(&model);
    let train_data = train_owned.as_ref().unwrap_or(ctx.dataset);
    run_loop(
        model,
        velocity,
        kind,
        RunSpec {
            train_data,
            val_loss_data,
            val_metric_data: ctx.val,
            val_pairs: ctx.val_pairs,
            preproc: ctx.preproc,
            hyper: &spec.hyper,
            selection: ctx.selection,
            category_names: names,
            model_config,
            split_biased,
            start_epoch: 0,
            total_epochs: spec.hyper.epochs,
        },
    )
}
