//! The final linear layer and its row-wise split into a category subspace
//! (W_o) and a context subspace (W_s).
//!
//! The split keeps the exact partition identity Wᵀx = W_oᵀx_o + W_sᵀx_s for
//! every feature vector. During feature-split training the context features
//! x_s of exclusive samples are replaced by x̄_s, the running mean of x_s
//! over the last ten mini-batches.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// D×M weight matrix plus optional per-category bias.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl ClassifierHead {
    pub fn init(d: usize, m: usize, with_bias: bool, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / d as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((d, m), |_| rng.random_range(-bound..bound)),
            bias: with_bias.then(|| Array1::zeros(m)),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.dim().0
    }

    pub fn num_categories(&self) -> usize {
        self.weight.dim().1
    }

    /// ŷ = Wᵀx (+ bias) for a single feature vector.
    pub fn forward_scores(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "feature vector has {} dims, head expects {}",
                x.len(),
                self.feature_dim()
            )));
        }
        let mut scores = self.weight.t().dot(x);
        if let Some(b) = &self.bias {
            scores += b;
        }
        Ok(scores)
    }

    /// Batched scores: (B, D) -> (B, M).
    pub fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut scores = x.dot(&self.weight);
        if let Some(b) = &self.bias {
            scores += b;
        }
        scores
    }

    /// Backward of [`Self::forward_batch`]: returns (dW, dBias, dX).
    pub fn backward_batch(
        &self,
        x: &Array2<f64>,
        grad_scores: &Array2<f64>,
    ) -> (Array2<f64>, Option<Array1<f64>>, Array2<f64>) {
        let dw = x.t().dot(grad_scores);
        let db = self
            .bias
            .as_ref()
            .map(|_| grad_scores.sum_axis(ndarray::Axis(0)));
        let dx = grad_scores.dot(&self.weight.t());
        (dw, db, dx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// o-rows are the first D_o feature dimensions.
    Middle,
    /// o-rows are a seeded uniform sample of size D_o.
    Random,
}

/// A classifier head with its weight rows partitioned into W_o / W_s and
/// the running mean x̄_s of the context features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitClassifierHead {
    pub head: ClassifierHead,
    pub o_rows: Vec<usize>,
    pub s_rows: Vec<usize>,
    pub history_cap: usize,
    pub xs_history: VecDeque<Array1<f64>>,
    pub xs_bar: Array1<f64>,
}

pub const DEFAULT_XS_HISTORY: usize = 10;

/// Splits a head's weight rows into an o-subspace of size `d_o` and its
/// complement. x̄_s bootstraps as the zero vector, so the substituted
/// forward degrades to W_oᵀx_o until the first history update.
pub fn split_head(
    head: ClassifierHead,
    mode: SplitMode,
    d_o: usize,
    seed: u64,
) -> Result<SplitClassifierHead> {
    let d = head.feature_dim();
    if d_o == 0 || d_o >= d {
        return Err(Error::Config(format!(
            "subspace size must satisfy 0 < d_o < {d}, got {d_o}"
        )));
    }
    let o_rows: Vec<usize> = match mode {
        SplitMode::Middle => (0..d_o).collect(),
        SplitMode::Random => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut all: Vec<usize> = (0..d).collect();
            all.shuffle(&mut rng);
            let mut rows = all[..d_o].to_vec();
            rows.sort_unstable();
            rows
        }
    };
    let s_rows: Vec<usize> = (0..d).filter(|i| !o_rows.contains(i)).collect();
    let d_s = s_rows.len();
    Ok(SplitClassifierHead {
        head,
        o_rows,
        s_rows,
        history_cap: DEFAULT_XS_HISTORY,
        xs_history: VecDeque::new(),
        xs_bar: Array1::zeros(d_s),
    })
}

impl SplitClassifierHead {
    pub fn d_o(&self) -> usize {
        self.o_rows.len()
    }

    pub fn d_s(&self) -> usize {
        self.s_rows.len()
    }

    /// W restricted to the o-rows, (D_o, M).
    pub fn w_o(&self) -> Array2<f64> {
        gather_rows(&self.head.weight, &self.o_rows)
    }

    /// W restricted to the s-rows, (D_s, M).
    pub fn w_s(&self) -> Array2<f64> {
        gather_rows(&self.head.weight, &self.s_rows)
    }

    /// Context coordinates of a feature batch, (B, D_s).
    pub fn gather_xs(&self, x: &Array2<f64>) -> Array2<f64> {
        gather_cols(x, &self.s_rows)
    }

    /// Category coordinates of a feature batch, (B, D_o).
    pub fn gather_xo(&self, x: &Array2<f64>) -> Array2<f64> {
        gather_cols(x, &self.o_rows)
    }

    /// Mean of x_s over a batch, (D_s,).
    pub fn batch_mean_xs(&self, x: &Array2<f64>) -> Array1<f64> {
        let xs = self.gather_xs(x);
        let b = xs.nrows().max(1) as f64;
        xs.sum_axis(ndarray::Axis(0)) / b
    }

    /// W_sᵀ x̄_s: the constant context contribution used in the substituted
    /// forward pass. Treated as data (not parameters) by backprop.
    pub fn context_offset(&self) -> Array1<f64> {
        self.w_s().t().dot(&self.xs_bar)
    }

    /// Returns (ŷ_plain, ŷ_substituted) for a feature batch. The plain
    /// scores use each sample's own x_s; the substituted scores replace x_s
    /// with x̄_s for every sample. Callers combine the two per an
    /// exclusive-sample mask.
    pub fn feature_split_forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if x.ncols() != self.head.feature_dim() {
            return Err(Error::Shape(format!(
                "feature batch has {} dims, head expects {}",
                x.ncols(),
                self.head.feature_dim()
            )));
        }
        let plain = self.head.forward_batch(x);
        let mut substituted = self.gather_xo(x).dot(&self.w_o());
        let offset = self.context_offset();
        substituted += &offset;
        if let Some(b) = &self.head.bias {
            substituted += b;
        }
        Ok((plain, substituted))
    }

    /// Pushes a batch mean of x_s into the ring buffer (evicting beyond the
    /// cap) and recomputes x̄_s as the mean of the buffered means.
    pub fn update_xs_history(&mut self, batch_mean_xs: Array1<f64>) {
        assert_eq!(batch_mean_xs.len(), self.d_s(), "x_s mean has wrong size");
        self.xs_history.push_back(batch_mean_xs);
        while self.xs_history.len() > self.history_cap {
            self.xs_history.pop_front();
        }
        let mut acc = Array1::zeros(self.d_s());
        for v in &self.xs_history {
            acc += v;
        }
        self.xs_bar = acc / self.xs_history.len() as f64;
    }
}

pub(crate) fn gather_rows(w: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), w.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&w.row(r));
    }
    out
}

pub(crate) fn gather_cols(x: &Array2<f64>, cols: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), cols.len()));
    for (i, &c) in cols.iter().enumerate() {
        out.column_mut(i).assign(&x.column(c));
    }
    out
}
