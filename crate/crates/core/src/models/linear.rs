use ndarray::Array2;

use super::{context_tail, hash_tokens, ConditionalModel};
use crate::error::{Result, TaidError};

/// Hand-crafted sparse context features. Feature 0 is always a bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    /// Only the bias: one distribution shared by every context.
    Bias,
    /// Bias plus a one-hot of the previous token.
    LastToken { vocab: usize },
    /// Bias plus a one-hot of the hashed last-`order` tokens.
    HashedContext { order: usize, buckets: usize, seed: u64 },
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        match *self {
            FeatureMap::Bias => 1,
            FeatureMap::LastToken { vocab } => vocab + 1,
            FeatureMap::HashedContext { buckets, .. } => buckets + 1,
        }
    }

    /// Non-zero `(index, value)` features for a history.
    pub fn features(&self, history: &[u32]) -> Vec<(usize, f64)> {
        let mut out = vec![(0, 1.0)];
        match *self {
            FeatureMap::Bias => {}
            FeatureMap::LastToken { .. } => {
                if let Some(&last) = history.last() {
                    out.push((1 + last as usize, 1.0));
                }
            }
            FeatureMap::HashedContext {
                order,
                buckets,
                seed,
            } => {
                if let Some(ctx) = context_tail(history, order) {
                    out.push((1 + (hash_tokens(seed, ctx) % buckets as u64) as usize, 1.0));
                }
            }
        }
        out
    }

    /// Dense feature vector, mostly for tests and inspection.
    pub fn dense(&self, history: &[u32]) -> Vec<f64> {
        let mut phi = vec![0.0; self.dim()];
        for (i, v) in self.features(history) {
            phi[i] += v;
        }
        phi
    }
}

/// Logits `φ(context)ᵀ W` over `F` features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    feature_map: FeatureMap,
    weights: Array2<f64>,
}

impl LinearModel {
    pub fn zeros(feature_map: FeatureMap, vocab: usize) -> Result<Self> {
        Self::new(feature_map, Array2::zeros((feature_map.dim(), vocab)))
    }

    pub fn new(feature_map: FeatureMap, weights: Array2<f64>) -> Result<Self> {
        if weights.ncols() < 2 {
            return Err(TaidError::param("vocab", "must be at least 2"));
        }
        if let FeatureMap::LastToken { vocab } = feature_map {
            if vocab != weights.ncols() {
                return Err(TaidError::Dimension {
                    expected: weights.ncols(),
                    got: vocab,
                });
            }
        }
        if let FeatureMap::HashedContext { buckets: 0, .. } = feature_map {
            return Err(TaidError::param("buckets", "must be positive"));
        }
        if weights.nrows() != feature_map.dim() {
            return Err(TaidError::Dimension {
                expected: feature_map.dim(),
                got: weights.nrows(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(TaidError::InvalidInput("weights must be finite".into()));
        }
        Ok(Self {
            feature_map,
            weights: weights.as_standard_layout().into_owned(),
        })
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.feature_map
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }
}

impl ConditionalModel for LinearModel {
    fn vocab(&self) -> usize {
        self.weights.ncols()
    }

    fn logits_into(&self, history: &[u32], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (f, phi) in self.feature_map.features(history) {
            for (o, w) in out.iter_mut().zip(self.weights.row(f)) {
                *o += phi * w;
            }
        }
    }
}
