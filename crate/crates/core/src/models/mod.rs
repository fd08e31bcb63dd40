//! Toy teacher and student language models and the synthetic corpora they
//! are fit on.

mod corpus;
mod io;
mod linear;
mod tabular;

pub use corpus::{generate_corpus, zipf_weights, Corpus, MarkovSource, Position};
pub use io::{
    read_corpus, read_model, read_tabular, write_corpus, write_model, write_tabular,
};
pub use linear::{FeatureMap, LinearModel};
pub use tabular::{bimodal_teacher, fit_teacher, ContextIndexer, TabularModel};

use crate::prob::{softmax_into, LogitVector, ProbVector};

/// Anything that maps a token history to next-token logits.
///
/// Histories are passed whole; each model looks only at the suffix its own
/// order needs.
pub trait ConditionalModel {
    fn vocab(&self) -> usize;

    fn logits_into(&self, history: &[u32], out: &mut [f64]);

    fn forward(&self, history: &[u32]) -> LogitVector {
        let mut out = vec![0.0; self.vocab()];
        self.logits_into(history, &mut out);
        LogitVector::new(out).expect("models produce finite logits")
    }

    fn probs(&self, history: &[u32]) -> ProbVector {
        let mut logits = vec![0.0; self.vocab()];
        self.logits_into(history, &mut logits);
        let mut out = vec![0.0; logits.len()];
        softmax_into(&logits, &mut out);
        ProbVector::new(out).expect("softmax output is on the simplex")
    }
}

/// A trainable student: either a lookup table or a linear feature model.
#[derive(Debug, Clone, PartialEq)]
pub enum StudentModel {
    Tabular(TabularModel),
    Linear(LinearModel),
}

impl StudentModel {
    pub fn param_count(&self) -> usize {
        match self {
            StudentModel::Tabular(m) => m.logits().len(),
            StudentModel::Linear(m) => m.weights().len(),
        }
    }

    /// Flat view of all parameters, row-major.
    pub fn params(&self) -> &[f64] {
        match self {
            StudentModel::Tabular(m) => m.logits().as_slice().expect("standard layout"),
            StudentModel::Linear(m) => m.weights().as_slice().expect("standard layout"),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            StudentModel::Tabular(m) => m.logits_mut().as_slice_mut().expect("standard layout"),
            StudentModel::Linear(m) => m.weights_mut().as_slice_mut().expect("standard layout"),
        }
    }

    /// Adds `∂J/∂params` for one position, given `∂J/∂logits` there.
    pub fn accumulate_grad(&self, history: &[u32], dlogits: &[f64], grad: &mut [f64]) {
        match self {
            StudentModel::Tabular(m) => {
                let v = m.vocab();
                let row = m.row_index(history);
                for (g, d) in grad[row * v..(row + 1) * v].iter_mut().zip(dlogits) {
                    *g += d;
                }
            }
            StudentModel::Linear(m) => {
                let v = m.vocab();
                for (f, phi) in m.feature_map().features(history) {
                    for (g, d) in grad[f * v..(f + 1) * v].iter_mut().zip(dlogits) {
                        *g += phi * d;
                    }
                }
            }
        }
    }
}

impl ConditionalModel for StudentModel {
    fn vocab(&self) -> usize {
        match self {
            StudentModel::Tabular(m) => m.vocab(),
            StudentModel::Linear(m) => m.vocab(),
        }
    }

    fn logits_into(&self, history: &[u32], out: &mut [f64]) {
        match self {
            StudentModel::Tabular(m) => m.logits_into(history, out),
            StudentModel::Linear(m) => m.logits_into(history, out),
        }
    }
}

/// The last `order` tokens of `history`, or `None` when it is shorter.
pub(crate) fn context_tail(history: &[u32], order: usize) -> Option<&[u32]> {
    history.len().checked_sub(order).map(|start| &history[start..])
}

/// Seeded splitmix64-style hash over a token sequence. Stable across
/// platforms and releases, unlike `std`'s default hasher.
pub(crate) fn hash_tokens(seed: u64, tokens: &[u32]) -> u64 {
    let mut h = splitmix(seed ^ 0x9e37_79b9_7f4a_7c15);
    for &t in tokens {
        h = splitmix(h ^ (t as u64).wrapping_add(0x632b_e59b_d9b4_e019));
    }
    splitmix(h ^ tokens.len() as u64)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
