use ndarray::Array2;
use rand::{seq::index::sample, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{context_tail, hash_tokens, ConditionalModel, Corpus};
use crate::error::{Result, TaidError};

/// Upper bound on table rows, to keep `V^k` blow-ups out of memory.
const MAX_ROWS: usize = 1 << 22;

/// Maps a history to a table row.
///
/// Exact k-gram rows are used when the requested row count covers all
/// `V^k` histories; otherwise k-grams are hashed into the requested number
/// of buckets. Histories shorter than `k` go to a dedicated default row,
/// stored after the context rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextIndexer {
    vocab: usize,
    order: usize,
    contexts: usize,
    exact: bool,
    hash_seed: u64,
}

impl ContextIndexer {
    /// `contexts = None` asks for exact k-gram rows.
    pub fn new(vocab: usize, order: usize, contexts: Option<usize>, hash_seed: u64) -> Result<Self> {
        if vocab < 2 {
            return Err(TaidError::param("vocab", "must be at least 2"));
        }
        let exact_rows = u32::try_from(order)
            .ok()
            .and_then(|k| vocab.checked_pow(k))
            .filter(|&n| n <= MAX_ROWS);
        let (contexts, exact) = match (contexts, exact_rows) {
            (Some(0), _) => return Err(TaidError::param("contexts", "must be positive")),
            (Some(c), Some(full)) if c >= full => (full, true),
            (Some(c), _) if c <= MAX_ROWS => (c, false),
            (Some(c), _) => {
                return Err(TaidError::param("contexts", format!("{c} exceeds {MAX_ROWS}")))
            }
            (None, Some(full)) => (full, true),
            (None, None) => {
                return Err(TaidError::param(
                    "contexts",
                    format!("exact table for V={vocab}, k={order} is too large; set a bucket count"),
                ))
            }
        };
        Ok(Self {
            vocab,
            order,
            contexts,
            exact,
            hash_seed,
        })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of context rows, not counting the default row.
    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn default_row(&self) -> usize {
        self.contexts
    }

    pub fn rows(&self) -> usize {
        self.contexts + 1
    }

    pub fn row_index(&self, history: &[u32]) -> usize {
        let Some(ctx) = context_tail(history, self.order) else {
            return self.default_row();
        };
        if self.exact {
            ctx.iter()
                .fold(0usize, |acc, &t| acc * self.vocab + t as usize)
        } else {
            (hash_tokens(self.hash_seed, ctx) % self.contexts as u64) as usize
        }
    }
}

/// A lookup-table predictor: one logit row per context plus a default row.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    indexer: ContextIndexer,
    logits: Array2<f64>,
}

impl TabularModel {
    /// All-zero logits, i.e. uniform predictions everywhere.
    pub fn uniform(indexer: ContextIndexer) -> Self {
        Self {
            logits: Array2::zeros((indexer.rows(), indexer.vocab())),
            indexer,
        }
    }

    pub fn from_logits(indexer: ContextIndexer, logits: Array2<f64>) -> Result<Self> {
        if logits.dim() != (indexer.rows(), indexer.vocab()) {
            return Err(TaidError::Dimension {
                expected: indexer.rows() * indexer.vocab(),
                got: logits.len(),
            });
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(TaidError::InvalidInput("table logits must be finite".into()));
        }
        Ok(Self {
            indexer,
            logits: logits.as_standard_layout().into_owned(),
        })
    }

    pub fn indexer(&self) -> &ContextIndexer {
        &self.indexer
    }

    pub fn order(&self) -> usize {
        self.indexer.order
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub(crate) fn logits_mut(&mut self) -> &mut Array2<f64> {
        &mut self.logits
    }

    pub fn row_index(&self, history: &[u32]) -> usize {
        self.indexer.row_index(history)
    }

    /// Number of stored rows including the default row; the capacity knob.
    pub fn capacity(&self) -> usize {
        self.indexer.rows()
    }
}

impl ConditionalModel for TabularModel {
    fn vocab(&self) -> usize {
        self.indexer.vocab
    }

    fn logits_into(&self, history: &[u32], out: &mut [f64]) {
        let row = self.logits.row(self.row_index(history));
        out.copy_from_slice(row.as_slice().expect("standard layout"));
    }
}

/// Add-`smoothing` maximum-likelihood table fit to next-token counts.
///
/// Each row's logits are `ln((count + α) / (total + V·α))`; rows with no
/// observations come out uniform. The default row is fit on sequence-start
/// positions whose history is shorter than the order.
pub fn fit_teacher(corpus: &Corpus, indexer: ContextIndexer, smoothing: f64) -> Result<TabularModel> {
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(TaidError::param("smoothing", format!("{smoothing} must be > 0")));
    }
    if corpus.vocab != indexer.vocab() {
        return Err(TaidError::Dimension {
            expected: indexer.vocab(),
            got: corpus.vocab,
        });
    }
    let vocab = indexer.vocab();
    let mut counts = Array2::<f64>::zeros((indexer.rows(), vocab));
    for seq in &corpus.sequences {
        for pos in 0..seq.len() {
            let row = indexer.row_index(&seq[..pos]);
            counts[[row, seq[pos] as usize]] += 1.0;
        }
    }
    for mut row in counts.outer_iter_mut() {
        let denom = (row.sum() + vocab as f64 * smoothing).ln();
        row.mapv_inplace(|c| (c + smoothing).ln() - denom);
    }
    TabularModel::from_logits(indexer, counts)
}

/// A hand-built teacher whose rows each carry two sharp modes.
///
/// Every row shares a Zipf-shaped base `-zipf_s·ln(rank)`, adds `mode_boost`
/// to two distinct tokens drawn per row, and adds `jitter·N(0, 1)` noise to
/// every logit. The base gives all rows a common head and tail; the modes
/// and jitter make rows disagree, which a student that merges contexts
/// cannot represent.
pub fn bimodal_teacher(
    seed: u64,
    indexer: ContextIndexer,
    zipf_s: f64,
    mode_boost: f64,
    jitter: f64,
) -> Result<TabularModel> {
    if indexer.vocab() < 3 {
        return Err(TaidError::param("vocab", "bimodal teacher needs at least 3 tokens"));
    }
    let vocab = indexer.vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logits = Array2::<f64>::zeros((indexer.rows(), vocab));
    for mut row in logits.outer_iter_mut() {
        for (y, l) in row.iter_mut().enumerate() {
            let g: f64 = rng.sample(StandardNormal);
            *l = -zipf_s * ((y + 1) as f64).ln() + jitter * g;
        }
        for m in sample(&mut rng, vocab, 2).iter() {
            row[m] += mode_boost;
        }
    }
    TabularModel::from_logits(indexer, logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::MarkovSource;
    use crate::objectives::tvd_probs;

    #[test]
    fn exact_and_hashed_indexing() {
        let ix = ContextIndexer::new(4, 2, None, 0).unwrap();
        assert!(ix.is_exact());
        assert_eq!(ix.contexts(), 16);
        assert_eq!(ix.row_index(&[3, 1, 2]), 1 * 4 + 2);
        assert_eq!(ix.row_index(&[1]), 16);

        let big = ContextIndexer::new(4, 2, Some(100), 0).unwrap();
        assert!(big.is_exact());
        assert_eq!(big.contexts(), 16);

        let hashed = ContextIndexer::new(4, 2, Some(5), 9).unwrap();
        assert!(!hashed.is_exact());
        for a in 0..4 {
            for b in 0..4 {
                assert!(hashed.row_index(&[a, b]) < 5);
            }
        }

        let zero = ContextIndexer::new(4, 0, None, 0).unwrap();
        assert_eq!(zero.row_index(&[]), 0);
        assert_eq!(zero.row_index(&[2, 2]), 0);

        assert!(ContextIndexer::new(4, 2, Some(0), 0).is_err());
        assert!(ContextIndexer::new(1000, 9, None, 0).is_err());
    }

    #[test]
    fn tabular_forward_returns_row() {
        let ix = ContextIndexer::new(3, 1, None, 0).unwrap();
        let logits = Array2::from_shape_fn((4, 3), |(r, c)| (r * 3 + c) as f64);
        let m = TabularModel::from_logits(ix, logits).unwrap();
        assert_eq!(m.forward(&[2]).as_slice(), &[6.0, 7.0, 8.0]);
        assert_eq!(m.forward(&[]).as_slice(), &[9.0, 10.0, 11.0]);
    }

    #[test]
    fn heavy_smoothing_is_uniform() {
        let corpus = Corpus::new(3, 1, vec![vec![0, 0, 0, 1, 0, 2, 0]]).unwrap();
        let ix = ContextIndexer::new(3, 1, None, 0).unwrap();
        let m = fit_teacher(&corpus, ix, 1e12).unwrap();
        for row in 0..ix.rows() {
            let p = m.probs(&[row as u32]);
            for x in p.as_slice() {
                assert!((x - 1.0 / 3.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unseen_context_row_is_uniform() {
        let corpus = Corpus::new(3, 1, vec![vec![0, 1, 0, 1]]).unwrap();
        let ix = ContextIndexer::new(3, 1, None, 0).unwrap();
        let m = fit_teacher(&corpus, ix, 0.5).unwrap();
        for x in m.probs(&[2]).as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        // after token 0 we saw 1 twice: (2 + 0.5) / (2 + 1.5)
        assert!((m.probs(&[0]).as_slice()[1] - 2.5 / 3.5).abs() < 1e-12);
        assert!(fit_teacher(&corpus, ix, 0.0).is_err());
    }

    fn mean_row_tvd(src: &MarkovSource, teacher: &TabularModel, vocab: u32) -> f64 {
        let mut total = 0.0;
        for a in 0..vocab {
            let truth = src.transition_row(&[a]);
            total += tvd_probs(&truth, teacher.probs(&[a]).as_slice());
        }
        total / vocab as f64
    }

    #[test]
    fn teacher_converges_to_chain() {
        let src = MarkovSource::new(21, 8, 1, 1.0, 1.0).unwrap();
        let ix = ContextIndexer::new(8, 1, None, 0).unwrap();
        let mut prev = f64::INFINITY;
        for length in [2_000, 20_000, 200_000] {
            let corpus = src.sample(4, length, 1).unwrap();
            let teacher = fit_teacher(&corpus, ix, 0.1).unwrap();
            let tvd = mean_row_tvd(&src, &teacher, 8);
            assert!(tvd < prev, "{tvd} !< {prev}");
            prev = tvd;
        }
        let corpus = src.sample(4, 200_000, 1).unwrap();
        let teacher = fit_teacher(&corpus, ix, 0.1).unwrap();
        for a in 0..8 {
            let tvd = tvd_probs(&src.transition_row(&[a]), teacher.probs(&[a]).as_slice());
            assert!(tvd < 0.05, "row {a}: {tvd}");
        }
    }

    #[test]
    fn bimodal_rows_have_two_boosted_tokens() {
        let ix = ContextIndexer::new(12, 1, None, 0).unwrap();
        let t = bimodal_teacher(5, ix, 0.0, 10.0, 0.0).unwrap();
        for row in t.logits().outer_iter() {
            assert_eq!(row.iter().filter(|&&l| l == 10.0).count(), 2);
        }
    }
}
