//! Checkpointing: a single JSON archive holding weights, split metadata,
//! the x̄_s history, optimizer state, the epoch counter, and the seed.
//!
//! Serialization is deterministic, so saving the same state twice produces
//! byte-identical files, and floats survive the round trip exactly.

use std::collections::VecDeque;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::head::{ClassifierHead, SplitClassifierHead};
use crate::model::{Model, ModelConfig, ModelGrads};
use crate::train::transforms::SplitBiasedMapping;

/// Weight-free description of a head split: which rows form the o-subspace
/// plus the running x̄_s state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitState {
    pub o_rows: Vec<usize>,
    pub history_cap: usize,
    pub xs_history: Vec<Array1<f64>>,
    pub xs_bar: Array1<f64>,
}

impl SplitState {
    pub fn from_split_head(split: &SplitClassifierHead) -> Self {
        Self {
            o_rows: split.o_rows.clone(),
            history_cap: split.history_cap,
            xs_history: split.xs_history.iter().cloned().collect(),
            xs_bar: split.xs_bar.clone(),
        }
    }

    /// Rebuilds the full split head around a classifier head.
    pub fn to_split_head(&self, head: ClassifierHead) -> Result<SplitClassifierHead> {
        let d = head.feature_dim();
        let s_rows: Vec<usize> = (0..d).filter(|i| !self.o_rows.contains(i)).collect();
        if self.o_rows.iter().any(|&r| r >= d)
            || self.o_rows.is_empty()
            || s_rows.is_empty()
            || self.o_rows.len() + s_rows.len() != d
        {
            return Err(Error::Checkpoint(format!(
                "split rows are not a proper partition of {d} feature dims"
            )));
        }
        if self.xs_bar.len() != s_rows.len() {
            return Err(Error::Checkpoint(format!(
                "xs_bar has {} dims, s-subspace has {}",
                self.xs_bar.len(),
                s_rows.len()
            )));
        }
        Ok(SplitClassifierHead {
            head,
            o_rows: self.o_rows.clone(),
            s_rows,
            history_cap: self.history_cap,
            xs_history: VecDeque::from(self.xs_history.clone()),
            xs_bar: self.xs_bar.clone(),
        })
    }
}

/// A trained model together with everything evaluation needs to interpret
/// its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: Model,
    pub model_config: ModelConfig,
    pub category_names: Vec<String>,
    /// Present for feature-split models.
    pub split: Option<SplitState>,
    /// Present for split-biased models (extra columns to fold back).
    pub split_biased: Option<SplitBiasedMapping>,
    pub epoch: usize,
    pub seed: u64,
}

impl TrainedModel {
    pub fn split_head(&self) -> Result<Option<SplitClassifierHead>> {
        match &self.split {
            Some(state) => Ok(Some(state.to_split_head(self.model.head.clone())?)),
            None => Ok(None),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut in_ch = self.model_config.input_channels;
        for (i, layer) in self.model.backbone.layers.iter().enumerate() {
            let (out, inc, kh, kw) = layer.weight.dim();
            if inc != in_ch {
                return Err(Error::Checkpoint(format!(
                    "conv layer {i} expects {inc} input channels, previous layer provides {in_ch}"
                )));
            }
            if kh != self.model_config.kernel || kw != self.model_config.kernel {
                return Err(Error::Checkpoint(format!(
                    "conv layer {i} kernel {kh}×{kw} disagrees with config {}",
                    self.model_config.kernel
                )));
            }
            if layer.bias.len() != out {
                return Err(Error::Checkpoint(format!(
                    "conv layer {i} bias length {} disagrees with {out} output channels",
                    layer.bias.len()
                )));
            }
            in_ch = out;
        }
        if in_ch != self.model.head.feature_dim() {
            return Err(Error::Checkpoint(format!(
                "backbone produces {in_ch} feature dims, head expects {}",
                self.model.head.feature_dim()
            )));
        }
        let m_ext = self.model.head.num_categories();
        let m = self.category_names.len();
        match &self.split_biased {
            None if m_ext != m => {
                return Err(Error::Checkpoint(format!(
                    "head has {m_ext} outputs but {m} category names"
                )))
            }
            Some(mapping) => mapping.validate(m, m_ext)?,
            None => {}
        }
        if let Some(split) = &self.split {
            split.to_split_head(self.model.head.clone())?;
        }
        Ok(())
    }
}

/// Everything needed to resume a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub trained: TrainedModel,
    /// SGD momentum buffers; absent for inference-only checkpoints.
    pub optimizer: Option<ModelGrads>,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let json = serde_json::to_string(ckpt).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_owned(),
        source: e,
    })?;
    ckpt.trained.validate()?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn trained(seed: u64) -> TrainedModel {
        let cfg = ModelConfig {
            input_channels: 2,
            conv_channels: vec![3, 4],
            kernel: 3,
            stride: 2,
            padding: 1,
            head_bias: true,
        };
        TrainedModel {
            model: Model::new(&cfg, 3, seed).unwrap(),
            model_config: cfg,
            category_names: vec!["a".into(), "b".into(), "c".into()],
            split: None,
            split_biased: None,
            epoch: 4,
            seed,
        }
    }

    #[test]
    fn roundtrip_restores_forward_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let t = trained(3);
        let ckpt = Checkpoint {
            optimizer: Some(ModelGrads::zeros_like(&t.model)),
            trained: t,
        };
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let images = Array4::from_shape_fn((2, 2, 8, 8), |_| rng.random_range(0.0..1.0));
        let a = ckpt.trained.model.forward(&images).scores;
        let b = loaded.trained.model.forward(&images).scores;
        assert_eq!(a, b);
        assert_eq!(loaded.trained.epoch, 4);

        // saving again is byte-stable
        let path2 = dir.path().join("ckpt2.json");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn mismatched_feature_dim_is_rejected() {
        let mut t = trained(1);
        // head no longer matches the backbone's feature dimension
        t.model.head = ClassifierHead {
            weight: Array2::zeros((7, 3)),
            bias: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        save_checkpoint(
            &Checkpoint {
                trained: t,
                optimizer: None,
            },
            &path,
        )
        .unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("feature dims"), "{err}");
    }

    #[test]
    fn corrupt_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.json");
        std::fs::write(&path, "{ nope").unwrap();
        assert!(load_checkpoint(&path).is_err());
        assert!(load_checkpoint(&dir.path().join("missing.json")).is_err());
    }
}
