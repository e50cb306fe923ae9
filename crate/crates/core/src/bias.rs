//! Prediction-ratio bias between category pairs and top-K biased pair
//! identification.
//!
//! The bias of category `b` with respect to `z` is the ratio of the mean
//! predicted probability of `b` over images containing both `b` and `z` to
//! the mean over images containing `b` without `z`. The score is
//! directional: `bias(b, z)` and `bias(z, b)` are independent quantities.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{image_sets_for_pair, LabeledDataset, PairImageSets};
use crate::error::{Error, Result};

/// N×M prediction scores in [0, 1], row-aligned with a dataset.
#[derive(Debug, Clone)]
pub struct PredictionMatrix {
    scores: Array2<f64>,
}

impl PredictionMatrix {
    pub fn from_scores(scores: Array2<f64>, dataset: &LabeledDataset) -> Result<Self> {
        if scores.dim() != (dataset.len(), dataset.num_categories()) {
            return Err(Error::Shape(format!(
                "prediction matrix is {:?}, dataset is {}×{}",
                scores.dim(),
                dataset.len(),
                dataset.num_categories()
            )));
        }
        if scores.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::Data(
                "prediction scores must be finite values in [0, 1]".into(),
            ));
        }
        Ok(Self { scores })
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }
}

/// Mean of `scores[i][b]` over the given image ids.
pub fn mean_prediction(
    preds: &PredictionMatrix,
    dataset: &LabeledDataset,
    ids: &BTreeSet<String>,
    b: usize,
) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::Data(format!(
            "mean prediction of category {b} over an empty id set"
        )));
    }
    let mut sum = 0.0;
    for id in ids {
        let row = dataset
            .index_of(id)
            .ok_or_else(|| Error::Data(format!("unknown image id {id:?}")))?;
        sum += preds.scores[[row, b]];
    }
    Ok(sum / ids.len() as f64)
}

/// bias(b, z): mean prediction of b with z present over mean prediction of
/// b with z absent. Fails with [`Error::UndefinedBias`] when either image
/// set is empty or the denominator mean is zero.
pub fn bias(
    preds: &PredictionMatrix,
    dataset: &LabeledDataset,
    b: usize,
    z: usize,
) -> Result<f64> {
    if b == z {
        return Err(Error::Data(format!("bias requires two distinct categories, got {b}")));
    }
    let mut with_sum = 0.0;
    let mut with_n = 0usize;
    let mut without_sum = 0.0;
    let mut without_n = 0usize;
    for i in 0..dataset.len() {
        if dataset.label(i, b) == 0 {
            continue;
        }
        if dataset.label(i, z) == 1 {
            with_sum += preds.scores[[i, b]];
            with_n += 1;
        } else {
            without_sum += preds.scores[[i, b]];
            without_n += 1;
        }
    }
    let undefined = |reason: &str| Error::UndefinedBias {
        b,
        z,
        reason: reason.to_owned(),
    };
    if with_n == 0 {
        return Err(undefined("no images contain b with z"));
    }
    if without_n == 0 {
        return Err(undefined("no images contain b without z"));
    }
    let denom = without_sum / without_n as f64;
    if denom == 0.0 {
        return Err(undefined("mean prediction without z is zero"));
    }
    Ok((with_sum / with_n as f64) / denom)
}

/// A biased category pair: target `b`, its most biasing context `c`, the
/// bias value, and the image partition behind it.
#[derive(Debug, Clone)]
pub struct BiasedPair {
    pub b: usize,
    pub c: usize,
    pub bias_value: f64,
    pub sets: PairImageSets,
}

/// Result of [`identify_pairs`]. `fewer_than_requested` flags that fewer
/// than K categories were eligible.
#[derive(Debug, Clone)]
pub struct IdentifiedPairs {
    pub pairs: Vec<BiasedPair>,
    pub fewer_than_requested: bool,
}

/// Finds, for each candidate target b, the context z maximizing bias(b, z)
/// among contexts co-occurring with b at least `cooccur_threshold` of the
/// time, then returns the K pairs with the highest bias values (one pair
/// per b, descending bias, ties broken by the lower category index).
pub fn identify_pairs(
    preds: &PredictionMatrix,
    dataset: &LabeledDataset,
    k: usize,
    cooccur_threshold: f64,
    candidate_restriction: Option<&[usize]>,
) -> Result<IdentifiedPairs> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if !(cooccur_threshold > 0.0 && cooccur_threshold <= 1.0) {
        return Err(Error::Config(format!(
            "co-occurrence threshold must be in (0, 1], got {cooccur_threshold}"
        )));
    }
    let m = dataset.num_categories();
    let candidates: Vec<usize> = match candidate_restriction {
        Some(list) => {
            for &b in list {
                if b >= m {
                    return Err(Error::Config(format!(
                        "candidate restriction lists category {b}, dataset has {m}"
                    )));
                }
            }
            list.to_vec()
        }
        None => (0..m).collect(),
    };

    let mut found = Vec::new();
    for &b in &candidates {
        let occur_b = dataset.occurrences(b);
        if occur_b == 0 {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for z in 0..m {
            if z == b {
                continue;
            }
            let cooccur = (0..dataset.len())
                .filter(|&i| dataset.label(i, b) == 1 && dataset.label(i, z) == 1)
                .count();
            if (cooccur as f64) / (occur_b as f64) < cooccur_threshold {
                continue;
            }
            match bias(preds, dataset, b, z) {
                Ok(v) => {
                    if best.map_or(true, |(bv, _)| v > bv) {
                        best = Some((v, z));
                    }
                }
                Err(Error::UndefinedBias { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        if let Some((value, c)) = best {
            found.push(BiasedPair {
                b,
                c,
                bias_value: value,
                sets: image_sets_for_pair(dataset, b, c)?,
            });
        }
    }

    found.sort_by(|p, q| {
        q.bias_value
            .partial_cmp(&p.bias_value)
            .expect("bias values are finite")
            .then(p.b.cmp(&q.b))
    });
    let fewer = found.len() < k;
    found.truncate(k);
    Ok(IdentifiedPairs {
        pairs: found,
        fewer_than_requested: fewer,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct PairCountsJson {
    cooccur: usize,
    exclusive: usize,
    other: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairJson {
    b: String,
    c: String,
    bias: f64,
    #[serde(default)]
    counts: Option<PairCountsJson>,
}

/// Serializes pairs as `[{b, c, bias, counts: {cooccur, exclusive, other}}]`
/// with category names as identifiers.
pub fn pairs_to_json(pairs: &[BiasedPair], dataset: &LabeledDataset) -> Result<String> {
    let records: Vec<PairJson> = pairs
        .iter()
        .map(|p| {
            let (cooccur, exclusive, other) = p.sets.counts();
            PairJson {
                b: dataset.category_names()[p.b].clone(),
                c: dataset.category_names()[p.c].clone(),
                bias: p.bias_value,
                counts: Some(PairCountsJson {
                    cooccur,
                    exclusive,
                    other,
                }),
            }
        })
        .collect();
    serde_json::to_string_pretty(&records).map_err(|e| Error::Data(e.to_string()))
}

pub fn save_pairs(pairs: &[BiasedPair], dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let json = pairs_to_json(pairs, dataset)?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Loads a pair list (possibly externally supplied) and re-derives the
/// image partitions on the given dataset. Stored counts are informational
/// and ignored.
pub fn load_pairs(path: &Path, dataset: &LabeledDataset) -> Result<Vec<BiasedPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<PairJson> = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_owned(),
        source: e,
    })?;
    records
        .into_iter()
        .map(|r| {
            let b = dataset
                .category_index(&r.b)
                .ok_or_else(|| Error::data_file(path, format!("unknown category {:?}", r.b)))?;
            let c = dataset
                .category_index(&r.c)
                .ok_or_else(|| Error::data_file(path, format!("unknown category {:?}", r.c)))?;
            if !(r.bias > 0.0) {
                return Err(Error::data_file(
                    path,
                    format!("pair ({}, {}) has non-positive bias {}", r.b, r.c, r.bias),
                ));
            }
            Ok(BiasedPair {
                b,
                c,
                bias_value: r.bias,
                sets: image_sets_for_pair(dataset, b, c)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetItem, ImageSource, SplitTag};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn dataset(labels: Array2<u8>) -> LabeledDataset {
        let n = labels.nrows();
        let m = labels.ncols();
        let items = (0..n)
            .map(|i| DatasetItem {
                image_id: format!("img{i:03}"),
                image: ImageSource::None,
            })
            .collect();
        LabeledDataset::new(
            items,
            labels,
            (0..m).map(|c| format!("cat{c}")).collect(),
            SplitTag::Val,
        )
        .unwrap()
    }

    fn preds(scores: Array2<f64>, d: &LabeledDataset) -> PredictionMatrix {
        PredictionMatrix::from_scores(scores, d).unwrap()
    }

    #[test]
    fn mean_prediction_is_arithmetic_mean() {
        let d = dataset(ndarray::array![[1u8, 0], [1, 0]]);
        let p = preds(ndarray::array![[0.2, 0.9], [0.4, 0.1]], &d);
        let ids: BTreeSet<String> = ["img000", "img001"].iter().map(|s| s.to_string()).collect();
        let v = mean_prediction(&p, &d, &ids, 0).unwrap();
        assert!((v - 0.3).abs() < 1e-15);
        let single: BTreeSet<String> = ["img001".to_string()].into();
        assert_eq!(mean_prediction(&p, &d, &single, 0).unwrap(), 0.4);
        assert!(mean_prediction(&p, &d, &BTreeSet::new(), 0).is_err());
    }

    #[test]
    fn bias_is_ratio_of_means() {
        // rows: (b,z) = (1,1), (1,1), (1,0), (1,0)
        let d = dataset(ndarray::array![[1u8, 1], [1, 1], [1, 0], [1, 0]]);
        let p = preds(
            ndarray::array![[0.5, 0.0], [0.7, 0.0], [0.2, 0.0], [0.4, 0.0]],
            &d,
        );
        let v = bias(&p, &d, 0, 1).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_scores_give_bias_one() {
        let d = dataset(ndarray::array![[1u8, 1], [1, 0], [1, 1], [1, 0]]);
        let p = preds(Array2::from_elem((4, 2), 0.42), &d);
        assert_eq!(bias(&p, &d, 0, 1).unwrap(), 1.0);
    }

    #[test]
    fn undefined_bias_cases() {
        // no exclusive images
        let d = dataset(ndarray::array![[1u8, 1], [1, 1], [0, 0]]);
        let p = preds(Array2::from_elem((3, 2), 0.5), &d);
        assert!(matches!(
            bias(&p, &d, 0, 1),
            Err(Error::UndefinedBias { .. })
        ));
        // zero denominator mean
        let d = dataset(ndarray::array![[1u8, 1], [1, 0]]);
        let p = preds(ndarray::array![[0.5, 0.5], [0.0, 0.0]], &d);
        assert!(matches!(
            bias(&p, &d, 0, 1),
            Err(Error::UndefinedBias { .. })
        ));
    }

    #[test]
    fn bias_is_directional() {
        let d = dataset(ndarray::array![[1u8, 1], [1, 0], [0, 1], [1, 1]]);
        let p = preds(
            ndarray::array![[0.9, 0.2], [0.3, 0.4], [0.5, 0.8], [0.8, 0.3]],
            &d,
        );
        let bz = bias(&p, &d, 0, 1).unwrap();
        let zb = bias(&p, &d, 1, 0).unwrap();
        assert!(bz.is_finite() && zb.is_finite());
        assert_ne!(bz, zb);
    }

    #[test]
    fn bias_values_exactly_invariant_under_halving() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let n = 40;
        let labels = Array2::from_shape_fn((n, 4), |_| rng.random_range(0..2) as u8);
        let d = dataset(labels);
        let scores = Array2::from_shape_fn((n, 4), |_| rng.random_range(0.0..1.0));
        let p1 = preds(scores.clone(), &d);
        let p2 = preds(scores.mapv(|v| v * 0.5), &d);
        for b in 0..4 {
            for z in 0..4 {
                if b == z {
                    continue;
                }
                match (bias(&p1, &d, b, z), bias(&p2, &d, b, z)) {
                    (Ok(v1), Ok(v2)) => assert_eq!(v1, v2, "bias({b},{z}) changed under scaling"),
                    (Err(_), Err(_)) => {}
                    other => panic!("definedness changed under scaling: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn identify_pairs_finds_planted_pair() {
        // Category 0 co-occurs with 1 in 95% of its images and its scores
        // are inflated in context.
        let n = 60;
        let mut labels = Array2::zeros((n, 3));
        let mut scores = Array2::from_elem((n, 3), 0.1);
        for i in 0..20 {
            labels[[i, 0]] = 1;
            if i < 19 {
                labels[[i, 1]] = 1;
                scores[[i, 0]] = 0.9;
            } else {
                scores[[i, 0]] = 0.2;
            }
        }
        for i in 20..30 {
            labels[[i, 2]] = 1;
        }
        let d = dataset(labels);
        let p = preds(scores, &d);
        let out = identify_pairs(&p, &d, 1, 0.2, None).unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!((out.pairs[0].b, out.pairs[0].c), (0, 1));
        assert!(out.pairs[0].bias_value > 1.0);
    }

    #[test]
    fn threshold_one_with_no_constant_context_is_empty() {
        let d = dataset(ndarray::array![[1u8, 1], [1, 0], [0, 1], [1, 1]]);
        let p = preds(Array2::from_elem((4, 2), 0.5), &d);
        let out = identify_pairs(&p, &d, 3, 1.0, None).unwrap();
        assert!(out.pairs.is_empty());
        assert!(out.fewer_than_requested);
    }

    #[test]
    fn pairs_json_roundtrip() {
        let d = dataset(ndarray::array![[1u8, 1], [1, 0], [0, 1], [0, 0]]);
        let pairs = vec![BiasedPair {
            b: 0,
            c: 1,
            bias_value: 2.5,
            sets: image_sets_for_pair(&d, 0, 1).unwrap(),
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.json");
        save_pairs(&pairs, &d, &path).unwrap();
        let loaded = load_pairs(&path, &d).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!((loaded[0].b, loaded[0].c), (0, 1));
        assert_eq!(loaded[0].bias_value, 2.5);
        assert_eq!(loaded[0].sets, pairs[0].sets);
        // external lists may omit counts
        let path2 = dir.path().join("external.json");
        std::fs::write(&path2, r#"[{"b": "cat0", "c": "cat1", "bias": 1.5}]"#).unwrap();
        let loaded = load_pairs(&path2, &d).unwrap();
        assert_eq!((loaded[0].b, loaded[0].c, loaded[0].bias_value), (0, 1, 1.5));
    }
}
