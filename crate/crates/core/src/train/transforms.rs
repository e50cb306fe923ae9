//! Training-set transforms behind the strong baselines: label/image removal,
//! per-sample loss weights, the split-biased label algebra, the skewness
//! weight α, and class-balancing group weights.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bias::BiasedPair;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};

/// α = max(α_min, cooccur / exclusive). Unusable when no exclusive images
/// exist.
pub fn alpha_from_counts(cooccur: usize, exclusive: usize, alpha_min: f64) -> Result<f64> {
    if exclusive == 0 {
        return Err(Error::Data(
            "alpha undefined: the pair has no exclusive images".into(),
        ));
    }
    Ok((cooccur as f64 / exclusive as f64).max(alpha_min))
}

/// α of a pair computed from co-occurrence counts on the given (training)
/// split.
pub fn compute_alpha(d: &LabeledDataset, b: usize, c: usize, alpha_min: f64) -> Result<f64> {
    let mut cooccur = 0usize;
    let mut exclusive = 0usize;
    for i in 0..d.len() {
        if d.label(i, b) == 0 {
            continue;
        }
        if d.label(i, c) == 1 {
            cooccur += 1;
        } else {
            exclusive += 1;
        }
    }
    alpha_from_counts(cooccur, exclusive, alpha_min)
}

/// Per-class weight vector for the α-weighted BCE: each pair's target
/// class b gets its α (max over pairs if a target repeats), everything
/// else weight 1.
pub fn alpha_class_weights(
    d: &LabeledDataset,
    pairs: &[(usize, usize)],
    alpha_min: f64,
) -> Result<ndarray::Array1<f64>> {
    let mut weights: ndarray::Array1<f64> = ndarray::Array1::from_elem(d.num_categories(), 1.0);
    for &(b, c) in pairs {
        if b >= d.num_categories() || c >= d.num_categories() {
            return Err(Error::Data(format!(
                "pair ({b}, {c}) references a missing category"
            )));
        }
        let alpha = compute_alpha(d, b, c, alpha_min)?;
        weights[b] = weights[b].max(alpha);
    }
    Ok(weights)
}

/// Effective-number class-balancing weight (1 - β) / (1 - β^n). Empty
/// groups get weight zero (they contribute no samples anyway).
pub fn class_balancing_weight(beta: f64, n: usize) -> Result<f64> {
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::Config(format!("beta must be in (0, 1), got {beta}")));
    }
    if n == 0 {
        return Ok(0.0);
    }
    Ok((1.0 - beta) / (1.0 - beta.powi(n as i32)))
}

/// The nine training methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Standard,
    RemoveLabels,
    RemoveImages,
    SplitBiased,
    Weighted,
    NegativePenalty,
    ClassBalancing,
    CamBased,
    FeatureSplit,
}

impl MethodName {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodName::Standard => "standard",
            MethodName::RemoveLabels => "remove_labels",
            MethodName::RemoveImages => "remove_images",
            MethodName::SplitBiased => "split_biased",
            MethodName::Weighted => "weighted",
            MethodName::NegativePenalty => "negative_penalty",
            MethodName::ClassBalancing => "class_balancing",
            MethodName::CamBased => "cam_based",
            MethodName::FeatureSplit => "feature_split",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "standard" => MethodName::Standard,
            "remove_labels" => MethodName::RemoveLabels,
            "remove_images" => MethodName::RemoveImages,
            "split_biased" => MethodName::SplitBiased,
            "weighted" => MethodName::Weighted,
            "negative_penalty" => MethodName::NegativePenalty,
            "class_balancing" => MethodName::ClassBalancing,
            "cam_based" => MethodName::CamBased,
            "feature_split" => MethodName::FeatureSplit,
            other => return Err(Error::Config(format!("unknown method {other:?}"))),
        })
    }

    pub fn all() -> [MethodName; 9] {
        [
            MethodName::Standard,
            MethodName::RemoveLabels,
            MethodName::RemoveImages,
            MethodName::SplitBiased,
            MethodName::Weighted,
            MethodName::NegativePenalty,
            MethodName::ClassBalancing,
            MethodName::CamBased,
            MethodName::FeatureSplit,
        ]
    }
}

/// How a split-biased model's (b\c, b∩c) score columns fold back into a
/// single score for b at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitBiasedRemap {
    /// score(b) = max(score(b\c), score(b∩c)); preserves ranking semantics.
    #[default]
    Max,
    /// score(b) = min(1, score(b\c) + score(b∩c)).
    SumCapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBiasedEntry {
    pub b: usize,
    pub c: usize,
    /// Column of the added b∩c class in the extended label space.
    pub extra_col: usize,
}

/// Metadata tying a split-biased model's extended output space back to the
/// original vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBiasedMapping {
    pub original_m: usize,
    pub entries: Vec<SplitBiasedEntry>,
    #[serde(default)]
    pub remap: SplitBiasedRemap,
}

impl SplitBiasedMapping {
    pub fn extended_m(&self) -> usize {
        self.original_m + self.entries.len()
    }

    pub fn validate(&self, original_m: usize, extended_m: usize) -> Result<()> {
        if self.original_m != original_m || self.extended_m() != extended_m {
            return Err(Error::Checkpoint(format!(
                "split-biased mapping covers {} -> {} categories, expected {original_m} -> {extended_m}",
                self.original_m,
                self.extended_m()
            )));
        }
        for e in &self.entries {
            if e.b >= original_m || e.c >= original_m {
                return Err(Error::Checkpoint(format!(
                    "split-biased entry ({}, {}) out of range",
                    e.b, e.c
                )));
            }
            if e.extra_col < original_m || e.extra_col >= extended_m {
                return Err(Error::Checkpoint(format!(
                    "split-biased extra column {} out of range",
                    e.extra_col
                )));
            }
        }
        Ok(())
    }

    /// Folds an N×(M+P) probability matrix back to N×M.
    pub fn remap_probabilities(&self, scores: &Array2<f64>) -> Result<Array2<f64>> {
        if scores.ncols() != self.extended_m() {
            return Err(Error::Shape(format!(
                "expected {} score columns, got {}",
                self.extended_m(),
                scores.ncols()
            )));
        }
        let mut out = scores
            .slice(ndarray::s![.., ..self.original_m])
            .to_owned();
        for e in &self.entries {
            for i in 0..out.nrows() {
                let extra = scores[[i, e.extra_col]];
                out[[i, e.b]] = match self.remap {
                    SplitBiasedRemap::Max => out[[i, e.b]].max(extra),
                    SplitBiasedRemap::SumCapped => (out[[i, e.b]] + extra).min(1.0),
                };
            }
        }
        Ok(out)
    }
}

/// Output of [`apply_baseline_transform`].
#[derive(Debug, Clone)]
pub enum TransformOutcome {
    /// The method trains on the dataset as-is.
    Unchanged,
    /// The method trains on a modified dataset.
    Dataset(LabeledDataset),
    /// The method trains on the original dataset with per-sample-per-class
    /// loss weights (rows aligned with the dataset).
    Weights(Array2<f64>),
    /// Split-biased: extended label space plus the fold-back mapping.
    SplitBiased {
        dataset: LabeledDataset,
        mapping: SplitBiasedMapping,
    },
}

fn check_pairs(d: &LabeledDataset, pairs: &[BiasedPair]) -> Result<()> {
    let m = d.num_categories();
    for p in pairs {
        if p.b >= m || p.c >= m {
            return Err(Error::Data(format!(
                "pair ({}, {}) references a missing category (dataset has {m})",
                p.b, p.c
            )));
        }
    }
    Ok(())
}

/// Materializes the training-set transform of a strong baseline.
pub fn apply_baseline_transform(
    method: MethodName,
    d: &LabeledDataset,
    pairs: &[BiasedPair],
    weight_factor: f64,
    beta: f64,
    remap: SplitBiasedRemap,
) -> Result<TransformOutcome> {
    check_pairs(d, pairs)?;
    let n = d.len();
    let m = d.num_categories();
    match method {
        MethodName::Standard | MethodName::CamBased | MethodName::FeatureSplit => {
            Ok(TransformOutcome::Unchanged)
        }

        MethodName::RemoveLabels => {
            let mut labels = d.labels().clone();
            for p in pairs {
                for i in 0..n {
                    if labels[[i, p.b]] == 1 && labels[[i, p.c]] == 1 {
                        labels[[i, p.c]] = 0;
                    }
                }
            }
            Ok(TransformOutcome::Dataset(
                d.with_labels(labels, d.category_names().to_vec())?,
            ))
        }

        MethodName::RemoveImages => {
            let keep: Vec<usize> = (0..n)
                .filter(|&i| {
                    !pairs
                        .iter()
                        .any(|p| d.label(i, p.b) == 1 && d.label(i, p.c) == 1)
                })
                .collect();
            if keep.is_empty() {
                return Err(Error::Data(
                    "remove_images would drop every training image".into(),
                ));
            }
            Ok(TransformOutcome::Dataset(d.subset(&keep, d.split_tag())?))
        }

        MethodName::SplitBiased => {
            for (i, p) in pairs.iter().enumerate() {
                if pairs[..i].iter().any(|q| q.b == p.b) {
                    return Err(Error::Data(format!(
                        "split_biased needs distinct target categories; {} repeats",
                        p.b
                    )));
                }
            }
            let mut labels = Array2::zeros((n, m + pairs.len()));
            labels
                .slice_mut(ndarray::s![.., ..m])
                .assign(d.labels());
            let mut names = d.category_names().to_vec();
            let mut entries = Vec::with_capacity(pairs.len());
            for (k, p) in pairs.iter().enumerate() {
                let extra_col = m + k;
                names.push(format!(
                    "{}+{}",
                    d.category_names()[p.b],
                    d.category_names()[p.c]
                ));
                for i in 0..n {
                    if d.label(i, p.b) == 1 && d.label(i, p.c) == 1 {
                        labels[[i, extra_col]] = 1;
                        labels[[i, p.b]] = 0; // b column now means b \ c
                    }
                }
                entries.push(SplitBiasedEntry {
                    b: p.b,
                    c: p.c,
                    extra_col,
                });
            }
            Ok(TransformOutcome::SplitBiased {
                dataset: d.with_labels(labels, names)?,
                mapping: SplitBiasedMapping {
                    original_m: m,
                    entries,
                    remap,
                },
            })
        }

        MethodName::Weighted => {
            let mut weights = Array2::from_elem((n, m), 1.0);
            for p in pairs {
                for i in 0..n {
                    if d.label(i, p.b) == 1 && d.label(i, p.c) == 0 {
                        weights[[i, p.b]] = weight_factor;
                    }
                }
            }
            Ok(TransformOutcome::Weights(weights))
        }

        MethodName::NegativePenalty => {
            let mut weights = Array2::from_elem((n, m), 1.0);
            for p in pairs {
                for i in 0..n {
                    if d.label(i, p.b) == 1 && d.label(i, p.c) == 0 {
                        weights[[i, p.c]] = weight_factor;
                    }
                }
            }
            Ok(TransformOutcome::Weights(weights))
        }

        MethodName::ClassBalancing => {
            let mut weights = Array2::from_elem((n, m), 1.0);
            for p in pairs {
                let mut counts = [0usize; 3]; // cooccur, exclusive, other
                for i in 0..n {
                    counts[group_of(d, i, p)] += 1;
                }
                let group_weights = [
                    class_balancing_weight(beta, counts[0])?,
                    class_balancing_weight(beta, counts[1])?,
                    class_balancing_weight(beta, counts[2])?,
                ];
                for i in 0..n {
                    weights[[i, p.b]] = group_weights[group_of(d, i, p)];
                }
            }
            Ok(TransformOutcome::Weights(weights))
        }
    }
}

fn group_of(d: &LabeledDataset, i: usize, p: &BiasedPair) -> usize {
    match (d.label(i, p.b), d.label(i, p.c)) {
        (1, 1) => 0,
        (1, 0) => 1,
        _ => 2,
    }
}
