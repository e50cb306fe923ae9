//! Datasets, label matrices, train/val splitting, and per-pair image
//! partitions.
//!
//! A [`LabeledDataset`] is an ordered list of image records aligned with an
//! N×M binary label matrix. Item order is lexicographic by image id
//! everywhere, which makes every downstream seeded operation reproducible.

pub mod formats;
pub mod preprocess;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// Pixel payload of one dataset item.
///
/// Synthetic datasets carry pixels in memory, file-backed datasets load
/// lazily (cached after the first decode), and label-only datasets carry
/// nothing.
#[derive(Debug, Clone)]
pub enum ImageSource {
    Loaded(Arc<Array3<f64>>),
    File {
        path: PathBuf,
        cache: Arc<OnceLock<Arc<Array3<f64>>>>,
    },
    None,
}

impl ImageSource {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        ImageSource::File {
            path: path.into(),
            cache: Arc::new(OnceLock::new()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub image_id: String,
    pub image: ImageSource,
}

/// Ordered image records plus an N×M binary label matrix.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    items: Vec<DatasetItem>,
    labels: Array2<u8>,
    category_names: Vec<String>,
    split_tag: SplitTag,
    index: BTreeMap<String, usize>,
}

impl LabeledDataset {
    /// Builds a dataset, sorting items (and label rows) lexicographically by
    /// image id and validating the label-matrix invariants.
    pub fn new(
        items: Vec<DatasetItem>,
        labels: Array2<u8>,
        category_names: Vec<String>,
        split_tag: SplitTag,
    ) -> Result<Self> {
        if labels.nrows() != items.len() {
            return Err(Error::Shape(format!(
                "label matrix has {} rows but {} items",
                labels.nrows(),
                items.len()
            )));
        }
        if labels.ncols() != category_names.len() {
            return Err(Error::Shape(format!(
                "label matrix has {} columns but {} category names",
                labels.ncols(),
                category_names.len()
            )));
        }
        if category_names.len() < 2 {
            return Err(Error::Data(format!(
                "need at least 2 categories, got {}",
                category_names.len()
            )));
        }
        {
            let mut seen = BTreeSet::new();
            for name in &category_names {
                if !seen.insert(name.as_str()) {
                    return Err(Error::Data(format!("duplicate category name: {name:?}")));
                }
            }
        }
        if labels.iter().any(|&v| v > 1) {
            return Err(Error::Data("label matrix must contain only 0/1".into()));
        }

        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by(|&a, &b| items[a].image_id.cmp(&items[b].image_id));

        let mut sorted_items = Vec::with_capacity(items.len());
        let mut sorted_labels = Array2::zeros((labels.nrows(), labels.ncols()));
        let mut by_index = items.into_iter().map(Some).collect::<Vec<_>>();
        for (row, &src) in order.iter().enumerate() {
            sorted_items.push(by_index[src].take().expect("each item moved once"));
            sorted_labels.row_mut(row).assign(&labels.row(src));
        }

        let mut index = BTreeMap::new();
        for (i, item) in sorted_items.iter().enumerate() {
            if index.insert(item.image_id.clone(), i).is_some() {
                return Err(Error::Data(format!(
                    "duplicate image id: {:?}",
                    item.image_id
                )));
            }
        }

        Ok(Self {
            items: sorted_items,
            labels: sorted_labels,
            category_names,
            split_tag,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_categories(&self) -> usize {
        self.category_names.len()
    }

    pub fn category_names(&self) -> &[String] {
        &self.category_names
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.category_names.iter().position(|n| n == name)
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    pub fn label(&self, item: usize, category: usize) -> u8 {
        self.labels[[item, category]]
    }

    pub fn items(&self) -> &[DatasetItem] {
        &self.items
    }

    pub fn image_id(&self, item: usize) -> &str {
        &self.items[item].image_id
    }

    pub fn index_of(&self, image_id: &str) -> Option<usize> {
        self.index.get(image_id).copied()
    }

    pub fn split_tag(&self) -> SplitTag {
        self.split_tag
    }

    /// Number of items in which `category` occurs.
    pub fn occurrences(&self, category: usize) -> usize {
        self.labels
            .column(category)
            .iter()
            .filter(|&&v| v == 1)
            .count()
    }

    /// Decodes (or fetches from cache) the pixels of one item as a CHW array
    /// with values in [0, 1].
    pub fn load_image(&self, item: usize) -> Result<Arc<Array3<f64>>> {
        match &self.items[item].image {
            ImageSource::Loaded(arr) => Ok(arr.clone()),
            ImageSource::File { path, cache } => {
                if let Some(arr) = cache.get() {
                    return Ok(arr.clone());
                }
                let arr = Arc::new(formats::read_image(path)?);
                Ok(cache.get_or_init(|| arr).clone())
            }
            ImageSource::None => Err(Error::Data(format!(
                "item {:?} has no image payload",
                self.items[item].image_id
            ))),
        }
    }

    pub fn has_images(&self) -> bool {
        self.items
            .iter()
            .all(|it| !matches!(it.image, ImageSource::None))
    }

    /// Dataset restricted to `indices` (rows are re-sorted by image id).
    pub fn subset(&self, indices: &[usize], split_tag: SplitTag) -> Result<LabeledDataset> {
        let mut items = Vec::with_capacity(indices.len());
        let mut labels = Array2::zeros((indices.len(), self.num_categories()));
        for (row, &i) in indices.iter().enumerate() {
            items.push(self.items[i].clone());
            labels.row_mut(row).assign(&self.labels.row(i));
        }
        LabeledDataset::new(items, labels, self.category_names.clone(), split_tag)
    }

    /// Same items, different label matrix and category vocabulary. Used by
    /// the training-set transforms.
    pub fn with_labels(
        &self,
        labels: Array2<u8>,
        category_names: Vec<String>,
    ) -> Result<LabeledDataset> {
        LabeledDataset::new(
            self.items.clone(),
            labels,
            category_names,
            self.split_tag,
        )
    }
}

/// Partition of a dataset induced by one biased category pair (b, c):
/// images containing both, images containing b without c, and images
/// without b. The three sets are disjoint and cover the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairImageSets {
    pub pair: (usize, usize),
    pub cooccur_ids: BTreeSet<String>,
    pub exclusive_ids: BTreeSet<String>,
    pub other_ids: BTreeSet<String>,
}

impl PairImageSets {
    pub fn counts(&self) -> (usize, usize, usize) {
        (
            self.cooccur_ids.len(),
            self.exclusive_ids.len(),
            self.other_ids.len(),
        )
    }
}

/// Splits a dataset's image ids into co-occurring / exclusive / other sets
/// for the pair (b, c).
pub fn image_sets_for_pair(d: &LabeledDataset, b: usize, c: usize) -> Result<PairImageSets> {
    if b == c {
        return Err(Error::Data(format!("pair categories must differ, got ({b}, {c})")));
    }
    let m = d.num_categories();
    if b >= m || c >= m {
        return Err(Error::Data(format!(
            "pair ({b}, {c}) out of range for {m} categories"
        )));
    }
    let mut sets = PairImageSets {
        pair: (b, c),
        cooccur_ids: BTreeSet::new(),
        exclusive_ids: BTreeSet::new(),
        other_ids: BTreeSet::new(),
    };
    for i in 0..d.len() {
        let id = d.image_id(i).to_owned();
        match (d.label(i, b), d.label(i, c)) {
            (1, 1) => sets.cooccur_ids.insert(id),
            (1, 0) => sets.exclusive_ids.insert(id),
            _ => sets.other_ids.insert(id),
        };
    }
    Ok(sets)
}

/// Element-wise OR of two label sources over the union vocabulary.
///
/// Both datasets must cover exactly the same image ids. The merged category
/// order is `a`'s categories followed by `b`'s categories that `a` lacks;
/// the merged dataset keeps `a`'s split tag and image payloads (falling back
/// to `b`'s payload where `a` has none).
pub fn merge_label_sources(a: &LabeledDataset, b: &LabeledDataset) -> Result<LabeledDataset> {
    let ids_a: BTreeSet<&str> = a.items.iter().map(|it| it.image_id.as_str()).collect();
    let ids_b: BTreeSet<&str> = b.items.iter().map(|it| it.image_id.as_str()).collect();
    if ids_a != ids_b {
        let only_a: Vec<&&str> = ids_a.difference(&ids_b).collect();
        let only_b: Vec<&&str> = ids_b.difference(&ids_a).collect();
        return Err(Error::Data(format!(
            "image id sets differ; only in first: {only_a:?}, only in second: {only_b:?}"
        )));
    }

    let mut names = a.category_names.clone();
    // column of each of b's categories in the merged vocabulary
    let mut b_col_in_merged = Vec::with_capacity(b.num_categories());
    for name in &b.category_names {
        match a.category_index(name) {
            Some(col) => b_col_in_merged.push(col),
            None => {
                b_col_in_merged.push(names.len());
                names.push(name.clone());
            }
        }
    }

    let n = a.len();
    let mut labels = Array2::zeros((n, names.len()));
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let id = a.image_id(i);
        let j = b.index_of(id).expect("id sets verified equal");
        for col in 0..a.num_categories() {
            labels[[i, col]] = a.label(i, col);
        }
        for (bcol, &mcol) in b_col_in_merged.iter().enumerate() {
            labels[[i, mcol]] |= b.label(j, bcol);
        }
        let image = match &a.items[i].image {
            ImageSource::None => b.items[j].image.clone(),
            src => src.clone(),
        };
        items.push(DatasetItem {
            image_id: id.to_owned(),
            image,
        });
    }
    LabeledDataset::new(items, labels, names, a.split_tag)
}

/// Seeded random train/val partition with `|train| = round(fraction * N)`.
pub fn partition_train_val(
    d: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = d.len();
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Data(format!(
            "degenerate split: {n_train} train / {} val items",
            n - n_train
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let mut train_idx = indices[..n_train].to_vec();
    let mut val_idx = indices[n_train..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((
        d.subset(&train_idx, SplitTag::Train)?,
        d.subset(&val_idx, SplitTag::Val)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn dataset_from_labels(rows: &[(&str, Vec<u8>)], names: &[&str]) -> LabeledDataset {
        let labels = Array2::from_shape_vec(
            (rows.len(), names.len()),
            rows.iter().flat_map(|(_, r)| r.clone()).collect(),
        )
        .unwrap();
        let items = rows
            .iter()
            .map(|(id, _)| DatasetItem {
                image_id: (*id).to_owned(),
                image: ImageSource::None,
            })
            .collect();
        LabeledDataset::new(
            items,
            labels,
            names.iter().map(|s| s.to_string()).collect(),
            SplitTag::Test,
        )
        .unwrap()
    }

    #[test]
    fn items_sorted_by_image_id() {
        let d = dataset_from_labels(
            &[("b", vec![1, 0]), ("a", vec![0, 1]), ("c", vec![1, 1])],
            &["x", "y"],
        );
        assert_eq!(d.image_id(0), "a");
        assert_eq!(d.image_id(1), "b");
        assert_eq!(d.image_id(2), "c");
        // label rows moved with their items
        assert_eq!(d.labels().row(0).to_vec(), vec![0, 1]);
        assert_eq!(d.labels().row(1).to_vec(), vec![1, 0]);
    }

    #[test]
    fn rejects_bad_matrices() {
        let items = vec![DatasetItem {
            image_id: "a".into(),
            image: ImageSource::None,
        }];
        let err = LabeledDataset::new(
            items.clone(),
            array![[2u8, 0]],
            vec!["x".into(), "y".into()],
            SplitTag::Train,
        );
        assert!(err.is_err());
        let err = LabeledDataset::new(
            items,
            array![[1u8, 0]],
            vec!["x".into(), "x".into()],
            SplitTag::Train,
        );
        assert!(err.is_err());
    }

    #[test]
    fn pair_sets_match_definition() {
        let d = dataset_from_labels(
            &[("i0", vec![1, 1]), ("i1", vec![1, 0]), ("i2", vec![0, 1])],
            &["b", "c"],
        );
        let sets = image_sets_for_pair(&d, 0, 1).unwrap();
        assert_eq!(sets.cooccur_ids, BTreeSet::from(["i0".to_owned()]));
        assert_eq!(sets.exclusive_ids, BTreeSet::from(["i1".to_owned()]));
        assert_eq!(sets.other_ids, BTreeSet::from(["i2".to_owned()]));
    }

    #[test]
    fn pair_sets_degenerate_category() {
        let d = dataset_from_labels(
            &[("i0", vec![0, 1]), ("i1", vec![0, 0])],
            &["b", "c"],
        );
        let sets = image_sets_for_pair(&d, 0, 1).unwrap();
        assert!(sets.cooccur_ids.is_empty());
        assert!(sets.exclusive_ids.is_empty());
        assert_eq!(sets.other_ids.len(), 2);
    }

    #[test]
    fn merge_takes_union_of_labels() {
        let a = dataset_from_labels(&[("x", vec![1, 0]), ("y", vec![0, 0])], &["cup", "bowl"]);
        let b = dataset_from_labels(
            &[("x", vec![1, 0]), ("y", vec![0, 1])],
            &["dining table", "bowl"],
        );
        let merged = merge_label_sources(&a, &b).unwrap();
        assert_eq!(
            merged.category_names(),
            &["cup", "bowl", "dining table"]
        );
        let x = merged.index_of("x").unwrap();
        assert_eq!(merged.label(x, 0), 1); // cup from a
        assert_eq!(merged.label(x, 2), 1); // dining table from b
        let y = merged.index_of("y").unwrap();
        assert_eq!(merged.label(y, 1), 1); // bowl from b
    }

    #[test]
    fn merge_rejects_disjoint_id_sets() {
        let a = dataset_from_labels(&[("x", vec![1, 0]), ("y", vec![0, 1])], &["p", "q"]);
        let b = dataset_from_labels(&[("u", vec![1, 0]), ("v", vec![0, 1])], &["p", "q"]);
        let err = merge_label_sources(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("x") && msg.contains("u"), "{msg}");
    }

    #[test]
    fn split_sizes_and_determinism() {
        let rows: Vec<(String, Vec<u8>)> = (0..10)
            .map(|i| (format!("img{i:02}"), vec![(i % 2) as u8, 1 - (i % 2) as u8]))
            .collect();
        let rows_ref: Vec<(&str, Vec<u8>)> =
            rows.iter().map(|(s, v)| (s.as_str(), v.clone())).collect();
        let d = dataset_from_labels(&rows_ref, &["a", "b"]);
        let (tr, va) = partition_train_val(&d, 0.8, 7).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        let (tr2, va2) = partition_train_val(&d, 0.8, 7).unwrap();
        let ids = |ds: &LabeledDataset| {
            ds.items()
                .iter()
                .map(|i| i.image_id.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(&tr), ids(&tr2));
        assert_eq!(ids(&va), ids(&va2));
        // disjoint and exhaustive
        let mut all: Vec<String> = ids(&tr).into_iter().chain(ids(&va)).collect();
        all.sort();
        assert_eq!(all, (0..10).map(|i| format!("img{i:02}")).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_degenerate() {
        let d = dataset_from_labels(&[("a", vec![1, 0]), ("b", vec![0, 1])], &["x", "y"]);
        assert!(partition_train_val(&d, 0.1, 0).is_err());
        assert!(partition_train_val(&d, 1.0, 0).is_err());
    }
}
