//! Batch assembly and co-occurrence partitioning.

use ndarray::{Array2, Array4};
use rand::Rng;

use crate::data::preprocess::{preprocess_eval, preprocess_train, PreprocessConfig};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};

/// Splits batch rows into a co-occurrence sub-batch (any pair has both
/// labels set) and the rest.
pub fn partition_batch_cooccur(
    targets: &Array2<f64>,
    pairs: &[(usize, usize)],
) -> (Vec<usize>, Vec<usize>) {
    let mut cooccur = Vec::new();
    let mut other = Vec::new();
    for i in 0..targets.nrows() {
        let hit = pairs
            .iter()
            .any(|&(b, c)| targets[[i, b]] == 1.0 && targets[[i, c]] == 1.0);
        if hit {
            cooccur.push(i);
        } else {
            other.push(i);
        }
    }
    (cooccur, other)
}

/// A sample is exclusive when some pair's target is present without its
/// context.
pub fn exclusive_mask(targets: &Array2<f64>, pairs: &[(usize, usize)]) -> Vec<bool> {
    (0..targets.nrows())
        .map(|i| {
            pairs
                .iter()
                .any(|&(b, c)| targets[[i, b]] == 1.0 && targets[[i, c]] == 0.0)
        })
        .collect()
}

fn stack_images(processed: Vec<ndarray::Array3<f64>>) -> Result<Array4<f64>> {
    let (c, h, w) = processed[0].dim();
    let mut out = Array4::zeros((processed.len(), c, h, w));
    for (i, img) in processed.into_iter().enumerate() {
        if img.dim() != (c, h, w) {
            return Err(Error::Shape(format!(
                "inconsistent image shapes in batch: {:?} vs {:?}",
                img.dim(),
                (c, h, w)
            )));
        }
        out.index_axis_mut(ndarray::Axis(0), i).assign(&img);
    }
    Ok(out)
}

fn gather_targets(d: &LabeledDataset, indices: &[usize]) -> Array2<f64> {
    let m = d.num_categories();
    Array2::from_shape_fn((indices.len(), m), |(row, col)| {
        d.label(indices[row], col) as f64
    })
}

/// Loads and augments a training batch.
pub fn assemble_train_batch(
    d: &LabeledDataset,
    indices: &[usize],
    preproc: &PreprocessConfig,
    rng: &mut impl Rng,
) -> Result<(Array4<f64>, Array2<f64>)> {
    let mut processed = Vec::with_capacity(indices.len());
    for &i in indices {
        let img = d.load_image(i)?;
        processed.push(preprocess_train(&img, preproc, rng));
    }
    Ok((stack_images(processed)?, gather_targets(d, indices)))
}

/// Loads a batch through the deterministic evaluation pipeline.
pub fn assemble_eval_batch(
    d: &LabeledDataset,
    indices: &[usize],
    preproc: &PreprocessConfig,
) -> Result<(Array4<f64>, Array2<f64>)> {
    let mut processed = Vec::with_capacity(indices.len());
    for &i in indices {
        let img = d.load_image(i)?;
        processed.push(preprocess_eval(&img, preproc));
    }
    Ok((stack_images(processed)?, gather_targets(d, indices)))
}

/// Rows `idx` of an image batch and its targets.
pub fn take_rows(
    images: &Array4<f64>,
    targets: &Array2<f64>,
    idx: &[usize],
) -> (Array4<f64>, Array2<f64>) {
    let (_, c, h, w) = images.dim();
    let mut sub_images = Array4::zeros((idx.len(), c, h, w));
    let mut sub_targets = Array2::zeros((idx.len(), targets.ncols()));
    for (row, &i) in idx.iter().enumerate() {
        sub_images
            .index_axis_mut(ndarray::Axis(0), row)
            .assign(&images.index_axis(ndarray::Axis(0), i));
        sub_targets.row_mut(row).assign(&targets.row(i));
    }
    (sub_images, sub_targets)
}
