//! Evaluation protocol: per-pair "exclusive"/"co-occur" test distributions,
//! per-category average precision and top-3 recall, report aggregation,
//! W_o/W_s cosine similarity, and cross-dataset evaluation.

use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::bias::{BiasedPair, PredictionMatrix};
use crate::data::preprocess::PreprocessConfig;
use crate::data::{image_sets_for_pair, LabeledDataset, PairImageSets};
use crate::error::{Error, Result};
use crate::model::head::{ClassifierHead, SplitClassifierHead};
use crate::model::{split_head, Model, SplitMode};
use crate::train::batching::assemble_eval_batch;
use crate::train::loss::sigmoid;
use crate::train::transforms::SplitBiasedMapping;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    MAp,
    Top3Recall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionKind {
    /// Exclusive images (b without c) plus all images without b.
    Exclusive,
    /// Co-occurring images (b with c) plus all images without b.
    Cooccur,
}

/// Ordered image-id list of one evaluation distribution.
pub fn build_distribution(sets: &PairImageSets, kind: DistributionKind) -> Vec<String> {
    let positives = match kind {
        DistributionKind::Exclusive => &sets.exclusive_ids,
        DistributionKind::Cooccur => &sets.cooccur_ids,
    };
    // BTreeSet unions keep the order deterministic (lexicographic ids)
    positives.union(&sets.other_ids).cloned().collect()
}

/// Non-interpolated average precision: rank by descending score (ties by
/// ascending image id), then average the precision at each positive.
/// `None` when the distribution has no positive labels.
pub fn average_precision(scores: &[f64], labels: &[u8], ids: &[String]) -> Option<f64> {
    assert!(scores.len() == labels.len() && labels.len() == ids.len());
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores are finite")
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (rank0, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            ap += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Some(ap / positives as f64)
}

/// Fraction of b-positive rows whose score for b ranks in that row's top-3
/// categories (ties broken by ascending category index). `None` when there
/// are no positives.
pub fn top3_recall(scores: &Array2<f64>, labels_b: &[u8], b: usize) -> Option<f64> {
    assert_eq!(scores.nrows(), labels_b.len());
    let mut positives = 0usize;
    let mut hits = 0usize;
    for (i, &label) in labels_b.iter().enumerate() {
        if label != 1 {
            continue;
        }
        positives += 1;
        let row = scores.row(i);
        let sb = row[b];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &s)| s > sb || (s == sb && j < b))
            .count();
        if rank < 3 {
            hits += 1;
        }
    }
    if positives == 0 {
        None
    } else {
        Some(hits as f64 / positives as f64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairReport {
    pub b: usize,
    pub c: usize,
    pub b_name: String,
    pub c_name: String,
    pub exclusive: Option<f64>,
    pub cooccur: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryReport {
    pub index: usize,
    pub name: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Aggregates {
    pub exclusive: Option<f64>,
    pub cooccur: Option<f64>,
    pub all: Option<f64>,
    pub non_biased: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric_kind: MetricKind,
    pub per_pair: Vec<PairReport>,
    /// Per-category metric over the full test set.
    pub per_category: Vec<CategoryReport>,
    pub aggregates: Aggregates,
    pub warnings: Vec<String>,
}

fn mean_of_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

fn metric_on_rows(
    preds: &PredictionMatrix,
    d: &LabeledDataset,
    rows: &[usize],
    ids: &[String],
    b: usize,
    kind: MetricKind,
) -> Option<f64> {
    match kind {
        MetricKind::MAp => {
            let scores: Vec<f64> = rows.iter().map(|&i| preds.scores()[[i, b]]).collect();
            let labels: Vec<u8> = rows.iter().map(|&i| d.label(i, b)).collect();
            average_precision(&scores, &labels, ids)
        }
        MetricKind::Top3Recall => {
            let m = d.num_categories();
            let sub = Array2::from_shape_fn((rows.len(), m), |(r, c)| {
                preds.scores()[[rows[r], c]]
            });
            let labels: Vec<u8> = rows.iter().map(|&i| d.label(i, b)).collect();
            top3_recall(&sub, &labels, b)
        }
    }
}

/// Full evaluation: per-pair metrics on both distributions, aggregates over
/// pairs, and all/non-biased aggregates over the entire test set.
pub fn evaluate(
    preds: &PredictionMatrix,
    d: &LabeledDataset,
    pairs: &[BiasedPair],
    kind: MetricKind,
    non_biased: Option<&[usize]>,
) -> Result<EvalReport> {
    let mut warnings = Vec::new();
    let mut per_pair = Vec::with_capacity(pairs.len());
    for p in pairs {
        // partitions are re-derived on the evaluation split
        let sets = image_sets_for_pair(d, p.b, p.c)?;
        let mut dist_metric = |dist_kind| -> Result<Option<f64>> {
            let ids = build_distribution(&sets, dist_kind);
            let rows: Vec<usize> = ids
                .iter()
                .map(|id| {
                    d.index_of(id)
                        .ok_or_else(|| Error::Data(format!("unknown image id {id:?}")))
                })
                .collect::<Result<_>>()?;
            Ok(metric_on_rows(preds, d, &rows, &ids, p.b, kind))
        };
        let exclusive = dist_metric(DistributionKind::Exclusive)?;
        let cooccur = dist_metric(DistributionKind::Cooccur)?;
        if exclusive.is_none() {
            warnings.push(format!(
                "pair ({}, {}): no positives in the exclusive distribution",
                p.b, p.c
            ));
        }
        if cooccur.is_none() {
            warnings.push(format!(
                "pair ({}, {}): no positives in the co-occur distribution",
                p.b, p.c
            ));
        }
        per_pair.push(PairReport {
            b: p.b,
            c: p.c,
            b_name: d.category_names()[p.b].clone(),
            c_name: d.category_names()[p.c].clone(),
            exclusive,
            cooccur,
        });
    }

    let all_rows: Vec<usize> = (0..d.len()).collect();
    let all_ids: Vec<String> = (0..d.len()).map(|i| d.image_id(i).to_owned()).collect();
    let mut per_category = Vec::with_capacity(d.num_categories());
    for c in 0..d.num_categories() {
        let value = metric_on_rows(preds, d, &all_rows, &all_ids, c, kind);
        if value.is_none() {
            warnings.push(format!(
                "category {} ({}) has no positives in the test set",
                c,
                d.category_names()[c]
            ));
        }
        per_category.push(CategoryReport {
            index: c,
            name: d.category_names()[c].clone(),
            value,
        });
    }

    let non_biased_mean = match non_biased {
        Some(set) => {
            for &c in set {
                if c >= d.num_categories() {
                    return Err(Error::Config(format!(
                        "non-biased set lists category {c}, dataset has {}",
                        d.num_categories()
                    )));
                }
            }
            mean_of_defined(set.iter().map(|&c| per_category[c].value))
        }
        None => None,
    };

    let aggregates = Aggregates {
        exclusive: mean_of_defined(per_pair.iter().map(|p| p.exclusive)),
        cooccur: mean_of_defined(per_pair.iter().map(|p| p.cooccur)),
        all: mean_of_defined(per_category.iter().map(|c| c.value)),
        non_biased: non_biased_mean,
    };

    Ok(EvalReport {
        metric_kind: kind,
        per_pair,
        per_category,
        aggregates,
        warnings,
    })
}

impl EvalReport {
    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))
    }

    /// One row per pair: `b,c,exclusive,cooccur` (names as identifiers,
    /// excluded metrics as empty fields).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("b,c,exclusive,cooccur\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.per_pair {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.b_name,
                p.c_name,
                fmt(p.exclusive),
                fmt(p.cooccur)
            ));
        }
        out
    }

    pub fn save(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json_string()? + "\n")
            .map_err(|e| Error::io(json_path, e))?;
        std::fs::write(csv_path, self.to_csv_string()).map_err(|e| Error::io(csv_path, e))
    }
}

/// Sigmoid probabilities of a model over a dataset in the train-time
/// category space (before any split-biased folding), (N, M_model).
fn predict_probs_raw(
    model: &Model,
    d: &LabeledDataset,
    preproc: &PreprocessConfig,
    batch_size: usize,
) -> Result<Array2<f64>> {
    let n = d.len();
    let mut probs = Array2::zeros((n, model.num_categories()));
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (images, _) = assemble_eval_batch(d, chunk, preproc)?;
        let fwd = model.forward(&images);
        for (row, &i) in chunk.iter().enumerate() {
            for c in 0..model.num_categories() {
                probs[[i, c]] = sigmoid(fwd.scores[[row, c]]);
            }
        }
    }
    Ok(probs)
}

/// Deterministic inference over a dataset: eval preprocessing, sigmoid
/// scores, and split-biased fold-back when a mapping is present.
pub fn predict_scores(
    model: &Model,
    mapping: Option<&SplitBiasedMapping>,
    d: &LabeledDataset,
    preproc: &PreprocessConfig,
    batch_size: usize,
) -> Result<PredictionMatrix> {
    let probs = predict_probs_raw(model, d, preproc, batch_size)?;
    let probs = match mapping {
        Some(m) => m.remap_probabilities(&probs)?,
        None => probs,
    };
    PredictionMatrix::from_scores(probs, d)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CosineReport {
    /// (target category, cosine) per pair; `None` when a weight column had
    /// zero norm.
    pub per_target: Vec<(usize, Option<f64>)>,
    pub mean: Option<f64>,
    pub warnings: Vec<String>,
}

/// Mean cosine similarity between W_o[:, b] and W_s[:, b] over the pairs'
/// target categories. Models without a split get a seeded random half
/// split first. Requires equally sized subspaces.
pub fn cosine_similarity_report(
    head: &ClassifierHead,
    split: Option<&SplitClassifierHead>,
    pairs: &[BiasedPair],
    seed: u64,
) -> Result<CosineReport> {
    let owned;
    let split = match split {
        Some(s) => s,
        None => {
            let d = head.feature_dim();
            if d % 2 != 0 {
                return Err(Error::Config(format!(
                    "random half split needs an even feature dim, got {d}"
                )));
            }
            owned = split_head(head.clone(), SplitMode::Random, d / 2, seed)?;
            &owned
        }
    };
    if split.d_o() != split.d_s() {
        return Err(Error::Config(format!(
            "cosine comparison needs equal subspaces, got {} and {}",
            split.d_o(),
            split.d_s()
        )));
    }
    let w_o = split.w_o();
    let w_s = split.w_s();
    let mut warnings = Vec::new();
    let mut per_target = Vec::with_capacity(pairs.len());
    for p in pairs {
        let co = w_o.column(p.b);
        let cs = w_s.column(p.b);
        let no = co.dot(&co).sqrt();
        let ns = cs.dot(&cs).sqrt();
        if no == 0.0 || ns == 0.0 {
            warnings.push(format!("category {} has a zero-norm weight column", p.b));
            per_target.push((p.b, None));
        } else {
            per_target.push((p.b, Some(co.dot(&cs) / (no * ns))));
        }
    }
    let mean = mean_of_defined(per_target.iter().map(|&(_, v)| v));
    Ok(CosineReport {
        per_target,
        mean,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossDatasetReport {
    pub per_category: Vec<(String, Option<f64>)>,
    pub mean: Option<f64>,
}

/// Evaluates train-space predictions on an external dataset over the
/// categories shared between the external vocabulary and the pairs' target
/// categories. AP is computed on the full external test set.
pub fn cross_dataset_evaluate(
    probs_train_space: &Array2<f64>,
    train_names: &[String],
    external: &LabeledDataset,
    pairs: &[BiasedPair],
) -> Result<CrossDatasetReport> {
    if probs_train_space.nrows() != external.len() {
        return Err(Error::Shape(format!(
            "{} prediction rows for {} external images",
            probs_train_space.nrows(),
            external.len()
        )));
    }
    let mut overlap: Vec<(String, usize, usize)> = Vec::new(); // (name, train col, ext col)
    for p in pairs {
        let name = &train_names[p.b];
        if let Some(ext_col) = external.category_index(name) {
            if !overlap.iter().any(|(n, _, _)| n == name) {
                overlap.push((name.clone(), p.b, ext_col));
            }
        }
    }
    if overlap.is_empty() {
        return Err(Error::Data(
            "no overlap between the pairs' target categories and the external dataset".into(),
        ));
    }
    let ids: Vec<String> = (0..external.len())
        .map(|i| external.image_id(i).to_owned())
        .collect();
    let mut per_category = Vec::with_capacity(overlap.len());
    for (name, train_col, ext_col) in overlap {
        let scores: Vec<f64> = probs_train_space
            .column(train_col)
            .iter()
            .copied()
            .collect();
        let labels: Vec<u8> = external
            .labels()
            .column(ext_col)
            .iter()
            .copied()
            .collect();
        per_category.push((name, average_precision(&scores, &labels, &ids)));
    }
    let mean = mean_of_defined(per_category.iter().map(|(_, v)| *v));
    Ok(CrossDatasetReport { per_category, mean })
}

/// Model-driven cross-dataset evaluation (no fine-tuning): predict on the
/// external images with the train-space model, then align by name.
pub fn cross_dataset_evaluate_model(
    model: &Model,
    mapping: Option<&SplitBiasedMapping>,
    train_names: &[String],
    external: &LabeledDataset,
    pairs: &[BiasedPair],
    preproc: &PreprocessConfig,
    batch_size: usize,
) -> Result<CrossDatasetReport> {
    let probs = predict_probs_raw(model, external, preproc, batch_size)?;
    let probs = match mapping {
        Some(m) => m.remap_probabilities(&probs)?,
        None => probs,
    };
    cross_dataset_evaluate(&probs, train_names, external, pairs)
}

/// Per-image score matrix stacked over the full dataset, aligned to rows;
/// convenience used by tests and bindings.
pub fn probabilities_from_labels(d: &LabeledDataset) -> PredictionMatrix {
    let probs = d.labels().mapv(|v| v as f64);
    PredictionMatrix::from_scores(probs, d).expect("labels are valid probabilities")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetItem, ImageSource, SplitTag};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::collections::BTreeSet;

    fn dataset(labels: Array2<u8>) -> LabeledDataset {
        let n = labels.nrows();
        let m = labels.ncols();
        let items = (0..n)
            .map(|i| DatasetItem {
                image_id: format!("im{i:04}"),
                image: ImageSource::None,
            })
            .collect();
        LabeledDataset::new(
            items,
            labels,
            (0..m).map(|c| format!("cat{c}")).collect(),
            SplitTag::Test,
        )
        .unwrap()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("im{i:04}")).collect()
    }

    /// O(N^2) oracle: precision at each positive computed by pairwise rank
    /// counting under the (score desc, id asc) order.
    fn ap_oracle(scores: &[f64], labels: &[u8], ids: &[String]) -> Option<f64> {
        let positives = labels.iter().filter(|&&l| l == 1).count();
        if positives == 0 {
            return None;
        }
        let n = scores.len();
        let mut ap = 0.0;
        for p in 0..n {
            if labels[p] != 1 {
                continue;
            }
            let before = |i: usize| {
                scores[i] > scores[p] || (scores[i] == scores[p] && ids[i] < ids[p])
            };
            let rank = (0..n).filter(|&i| before(i)).count() + 1;
            let hits = (0..n)
                .filter(|&i| labels[i] == 1 && (before(i) || i == p))
                .count();
            ap += hits as f64 / rank as f64;
        }
        Some(ap / positives as f64)
    }

    #[test]
    fn perfect_ranking_gives_ap_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1, 1, 0, 0];
        let v = average_precision(&scores, &labels, &ids(4)).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn one_positive_ranked_second_gives_half() {
        let scores = [0.9, 0.5];
        let labels = [0, 1];
        let v = average_precision(&scores, &labels, &ids(2)).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn ap_matches_brute_force_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.random_range(2..60);
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0..8) as f64) / 8.0) // many ties
                .collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            let ids = ids(n);
            match (average_precision(&scores, &labels, &ids), ap_oracle(&scores, &labels, &ids)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-10, "{a} vs {b}"),
                (None, None) => {}
                other => panic!("definedness mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn ap_invariant_under_monotone_transform() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let n = 40;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
        let transformed: Vec<f64> = scores.iter().map(|&s| 2.0 * s + 1.0).collect();
        let ids = ids(n);
        assert_eq!(
            average_precision(&scores, &labels, &ids),
            average_precision(&transformed, &labels, &ids)
        );
    }

    #[test]
    fn top3_with_three_categories_is_always_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let scores = Array2::from_shape_fn((10, 3), |_| rng.random_range(0.0..1.0));
        let labels = vec![1u8; 10];
        assert_eq!(top3_recall(&scores, &labels, 1), Some(1.0));
    }

    #[test]
    fn top3_worst_case_is_zero() {
        let mut scores = Array2::from_elem((1, 5), 0.9);
        scores[[0, 2]] = 0.1;
        let labels = vec![1u8];
        assert_eq!(top3_recall(&scores, &labels, 2), Some(0.0));
    }

    #[test]
    fn top3_matches_per_row_sort_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let scores = Array2::from_shape_fn((50, 10), |_| {
            (rng.random_range(0..12) as f64) / 12.0
        });
        let labels: Vec<u8> = (0..50).map(|_| rng.random_range(0..2) as u8).collect();
        for b in 0..10 {
            let oracle = {
                let mut positives = 0;
                let mut hits = 0;
                for i in 0..50 {
                    if labels[i] != 1 {
                        continue;
                    }
                    positives += 1;
                    let mut cats: Vec<usize> = (0..10).collect();
                    cats.sort_by(|&x, &y| {
                        scores[[i, y]]
                            .partial_cmp(&scores[[i, x]])
                            .unwrap()
                            .then(x.cmp(&y))
                    });
                    if cats[..3].contains(&b) {
                        hits += 1;
                    }
                }
                if positives == 0 {
                    None
                } else {
                    Some(hits as f64 / positives as f64)
                }
            };
            assert_eq!(top3_recall(&scores, &labels, b), oracle);
        }
    }

    #[test]
    fn top3_invariant_under_per_row_monotone_transform() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let scores = Array2::from_shape_fn((20, 6), |_| rng.random_range(0.0..1.0));
        let transformed = scores.mapv(|v| v.powi(3) * 4.0 - 1.0);
        let labels: Vec<u8> = (0..20).map(|_| rng.random_range(0..2) as u8).collect();
        for b in 0..6 {
            assert_eq!(
                top3_recall(&scores, &labels, b),
                top3_recall(&transformed, &labels, b)
            );
        }
    }

    #[test]
    fn distributions_share_exactly_the_other_set() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let labels = Array2::from_shape_fn((30, 4), |_| rng.random_range(0..2) as u8);
        let d = dataset(labels);
        let sets = image_sets_for_pair(&d, 0, 1).unwrap();
        let excl: BTreeSet<String> =
            build_distribution(&sets, DistributionKind::Exclusive).into_iter().collect();
        let co: BTreeSet<String> =
            build_distribution(&sets, DistributionKind::Cooccur).into_iter().collect();
        let shared: BTreeSet<String> = excl.intersection(&co).cloned().collect();
        assert_eq!(shared, sets.other_ids);
        let sym: BTreeSet<String> = excl.symmetric_difference(&co).cloned().collect();
        let expect: BTreeSet<String> = sets
            .exclusive_ids
            .union(&sets.cooccur_ids)
            .cloned()
            .collect();
        assert_eq!(sym, expect);
        // |excl-dist| + |cooccur-dist| = N + |other|
        assert_eq!(excl.len() + co.len(), d.len() + sets.other_ids.len());
    }

    #[test]
    fn oracle_perfect_predictions_score_one_everywhere() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut labels = Array2::from_shape_fn((25, 3), |_| rng.random_range(0..2) as u8);
        // make sure both distributions of the pair are populated
        labels[[0, 0]] = 1;
        labels[[0, 1]] = 1;
        labels[[1, 0]] = 1;
        labels[[1, 1]] = 0;
        let d = dataset(labels);
        let preds = probabilities_from_labels(&d);
        let pairs = vec![BiasedPair {
            b: 0,
            c: 1,
            bias_value: 2.0,
            sets: image_sets_for_pair(&d, 0, 1).unwrap(),
        }];
        let report = evaluate(&preds, &d, &pairs, MetricKind::MAp, Some(&[2])).unwrap();
        assert_eq!(report.per_pair[0].exclusive, Some(1.0));
        assert_eq!(report.per_pair[0].cooccur, Some(1.0));
        assert_eq!(report.aggregates.exclusive, Some(1.0));
        assert_eq!(report.aggregates.all, Some(1.0));
        assert_eq!(report.aggregates.non_biased, Some(1.0));
    }

    #[test]
    fn aggregates_equal_means_of_constituents() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut labels = Array2::from_shape_fn((40, 5), |_| rng.random_range(0..2) as u8);
        for (i, row) in [(0, [1u8, 1]), (1, [1, 0])] {
            labels[[i, 0]] = row[0];
            labels[[i, 1]] = row[1];
        }
        let d = dataset(labels);
        let scores = Array2::from_shape_fn((40, 5), |_| rng.random_range(0.0..1.0));
        let preds = PredictionMatrix::from_scores(scores, &d).unwrap();
        let pairs: Vec<BiasedPair> = [(0usize, 1usize), (2, 3)]
            .iter()
            .map(|&(b, c)| BiasedPair {
                b,
                c,
                bias_value: 1.5,
                sets: image_sets_for_pair(&d, b, c).unwrap(),
            })
            .collect();
        let report = evaluate(&preds, &d, &pairs, MetricKind::MAp, None).unwrap();
        let excl: Vec<f64> = report.per_pair.iter().filter_map(|p| p.exclusive).collect();
        if !excl.is_empty() {
            let mean = excl.iter().sum::<f64>() / excl.len() as f64;
            assert!((report.aggregates.exclusive.unwrap() - mean).abs() < 1e-10);
        }
        let all: Vec<f64> = report.per_category.iter().filter_map(|c| c.value).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!((report.aggregates.all.unwrap() - mean).abs() < 1e-10);
    }

    #[test]
    fn csv_has_one_row_per_pair() {
        let labels = ndarray::array![[1u8, 1, 0], [1, 0, 0], [0, 1, 1]];
        let d = dataset(labels);
        let preds = probabilities_from_labels(&d);
        let pairs = vec![BiasedPair {
            b: 0,
            c: 1,
            bias_value: 2.0,
            sets: image_sets_for_pair(&d, 0, 1).unwrap(),
        }];
        let report = evaluate(&preds, &d, &pairs, MetricKind::MAp, None).unwrap();
        let csv = report.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "b,c,exclusive,cooccur");
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("cat0,cat1,"));
    }

    #[test]
    fn cosine_similarity_identity_orthogonal_and_oracle() {
        use crate::model::head::split_head as make_split;
        // identical halves -> cosine 1
        let mut w = Array2::zeros((4, 2));
        for m in 0..2 {
            w[[0, m]] = 0.5 + m as f64;
            w[[1, m]] = -1.0;
            w[[2, m]] = 0.5 + m as f64;
            w[[3, m]] = -1.0;
        }
        let head = ClassifierHead {
            weight: w,
            bias: None,
        };
        let split = make_split(head.clone(), SplitMode::Middle, 2, 0).unwrap();
        let d = dataset(ndarray::array![[1u8, 1], [1, 0], [0, 0]]);
        let pairs = vec![BiasedPair {
            b: 0,
            c: 1,
            bias_value: 2.0,
            sets: image_sets_for_pair(&d, 0, 1).unwrap(),
        }];
        let rep = cosine_similarity_report(&head, Some(&split), &pairs, 0).unwrap();
        assert!((rep.mean.unwrap() - 1.0).abs() < 1e-12);

        // orthogonal halves -> cosine 0
        let mut w = Array2::zeros((4, 2));
        w[[0, 0]] = 1.0; // o half: (1, 0)
        w[[3, 0]] = 1.0; // s half: (0, 1)
        let head = ClassifierHead {
            weight: w,
            bias: None,
        };
        let split = make_split(head.clone(), SplitMode::Middle, 2, 0).unwrap();
        let rep = cosine_similarity_report(&head, Some(&split), &pairs, 0).unwrap();
        assert_eq!(rep.mean, Some(0.0));

        // random head vs direct dot/norm oracle
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let w = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let head = ClassifierHead {
            weight: w.clone(),
            bias: None,
        };
        let split = make_split(head.clone(), SplitMode::Middle, 3, 0).unwrap();
        let rep = cosine_similarity_report(&head, Some(&split), &pairs, 0).unwrap();
        let (mut dot, mut no, mut ns) = (0.0, 0.0, 0.0);
        for k in 0..3 {
            dot += w[[k, 0]] * w[[k + 3, 0]];
            no += w[[k, 0]] * w[[k, 0]];
            ns += w[[k + 3, 0]] * w[[k + 3, 0]];
        }
        let oracle = dot / (no.sqrt() * ns.sqrt());
        assert!((rep.mean.unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn cross_dataset_alignment_matches_manual_columns() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        // external dataset with reordered vocabulary
        let labels = Array2::from_shape_fn((20, 3), |_| rng.random_range(0..2) as u8);
        let items = (0..20)
            .map(|i| DatasetItem {
                image_id: format!("ext{i:03}"),
                image: ImageSource::None,
            })
            .collect();
        let external = LabeledDataset::new(
            items,
            labels,
            vec!["car".into(), "bus".into(), "skateboard".into()],
            SplitTag::Test,
        )
        .unwrap();

        let train_names: Vec<String> =
            vec!["skateboard".into(), "person".into(), "bus".into(), "car".into()];
        let probs = Array2::from_shape_fn((20, 4), |_| rng.random_range(0.0..1.0));
        let train_d = |b| BiasedPair {
            b,
            c: 1,
            bias_value: 2.0,
            sets: PairImageSets {
                pair: (b, 1),
                cooccur_ids: BTreeSet::new(),
                exclusive_ids: BTreeSet::new(),
                other_ids: BTreeSet::new(),
            },
        };
        let pairs = vec![train_d(0), train_d(2), train_d(3)];
        let report = cross_dataset_evaluate(&probs, &train_names, &external, &pairs).unwrap();
        assert_eq!(report.per_category.len(), 3);

        let ids: Vec<String> = (0..20).map(|i| format!("ext{i:03}")).collect();
        for (name, value) in &report.per_category {
            let train_col = train_names.iter().position(|n| n == name).unwrap();
            let ext_col = external.category_index(name).unwrap();
            let scores: Vec<f64> = probs.column(train_col).iter().copied().collect();
            let labels: Vec<u8> = external.labels().column(ext_col).iter().copied().collect();
            assert_eq!(*value, average_precision(&scores, &labels, &ids));
        }

        // empty intersection errors
        let no_overlap = vec![train_d(1)];
        assert!(cross_dataset_evaluate(&probs, &train_names, &external, &no_overlap).is_err());
    }
}
