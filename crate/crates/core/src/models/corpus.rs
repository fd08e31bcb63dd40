use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{context_tail, hash_tokens, ConditionalModel};
use crate::error::{Result, TaidError};

/// Token sequences over a vocabulary of `vocab` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: usize,
    /// Markov order of the generating chain.
    pub order: usize,
    pub sequences: Vec<Vec<u32>>,
}

impl Corpus {
    pub fn new(vocab: usize, order: usize, sequences: Vec<Vec<u32>>) -> Result<Self> {
        if vocab < 2 {
            return Err(TaidError::param("vocab", "must be at least 2"));
        }
        if sequences.is_empty() || sequences.iter().any(|s| s.is_empty()) {
            return Err(TaidError::InvalidInput("corpus sequences must be non-empty".into()));
        }
        if let Some(tok) = sequences.iter().flatten().find(|&&t| t as usize >= vocab) {
            return Err(TaidError::InvalidInput(format!(
                "token {tok} outside vocabulary of {vocab}"
            )));
        }
        Ok(Self {
            vocab,
            order,
            sequences,
        })
    }

    pub fn len_tokens(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// Every `(sequence, position)` pair in corpus order.
    pub fn positions(&self) -> Vec<Position> {
        self.sequences
            .iter()
            .enumerate()
            .flat_map(|(s, seq)| (0..seq.len()).map(move |p| Position { seq: s, pos: p }))
            .collect()
    }

    /// Full history preceding a position.
    pub fn history(&self, at: Position) -> &[u32] {
        &self.sequences[at.seq][..at.pos]
    }

    pub fn token(&self, at: Position) -> u32 {
        self.sequences[at.seq][at.pos]
    }

    /// Empirical token frequencies.
    pub fn unigram_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.vocab];
        for &t in self.sequences.iter().flatten() {
            counts[t as usize] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Position {
    pub seq: usize,
    pub pos: usize,
}

/// Normalised Zipf weights `r^{-s}` for ranks `1..=vocab`; token `i` has rank `i + 1`.
pub fn zipf_weights(vocab: usize, s: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=vocab).map(|r| (r as f64).powf(-s)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// A seeded order-`k` Markov chain with Zipfian token marginals.
///
/// The row for a k-gram context is the Zipf distribution reweighted by
/// `exp(noise·g)` with `g` standard normal, drawn from an RNG keyed on the
/// chain seed and the context. Rows are produced on demand, so high orders
/// never materialise `V^k` rows. Histories shorter than `k` (sequence starts)
/// use the plain Zipf marginal, as does every context of an order-0 chain.
#[derive(Debug, Clone)]
pub struct MarkovSource {
    vocab: usize,
    order: usize,
    seed: u64,
    noise: f64,
    marginal: Vec<f64>,
}

impl MarkovSource {
    pub fn new(seed: u64, vocab: usize, order: usize, zipf_s: f64, noise: f64) -> Result<Self> {
        if vocab < 2 {
            return Err(TaidError::param("vocab", "must be at least 2"));
        }
        if !(zipf_s > 0.0 && zipf_s.is_finite()) {
            return Err(TaidError::param("zipf_s", format!("{zipf_s} must be > 0")));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(TaidError::param("noise", format!("{noise} must be >= 0")));
        }
        if vocab > u32::MAX as usize {
            return Err(TaidError::param("vocab", "too large"));
        }
        Ok(Self {
            vocab,
            order,
            seed,
            noise,
            marginal: zipf_weights(vocab, zipf_s),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// True next-token distribution after `history`.
    pub fn transition_row(&self, history: &[u32]) -> Vec<f64> {
        match context_tail(history, self.order) {
            Some(ctx) if self.order > 0 => self.context_row(ctx),
            _ => self.marginal.clone(),
        }
    }

    fn context_row(&self, ctx: &[u32]) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_tokens(self.seed, ctx));
        let mut row: Vec<f64> = self
            .marginal
            .iter()
            .map(|w| {
                let g: f64 = rng.sample(StandardNormal);
                w * (self.noise * g).exp()
            })
            .collect();
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|w| *w /= total);
        row
    }

    /// Samples `n_sequences` sequences of `length` tokens each.
    pub fn sample(&self, seed: u64, length: usize, n_sequences: usize) -> Result<Corpus> {
        if length == 0 || n_sequences == 0 {
            return Err(TaidError::param(
                "length",
                "corpus needs at least one non-empty sequence",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cache: HashMap<Vec<u32>, Vec<f64>> = HashMap::new();
        let marginal_cdf = cumulative(&self.marginal);
        let mut sequences = Vec::with_capacity(n_sequences);
        for _ in 0..n_sequences {
            let mut seq: Vec<u32> = Vec::with_capacity(length);
            for _ in 0..length {
                let u: f64 = rng.random();
                let tok = match context_tail(&seq, self.order) {
                    Some(ctx) if self.order > 0 => {
                        let cdf = cache
                            .entry(ctx.to_vec())
                            .or_insert_with(|| cumulative(&self.context_row(ctx)));
                        draw(cdf, u)
                    }
                    _ => draw(&marginal_cdf, u),
                };
                seq.push(tok as u32);
            }
            sequences.push(seq);
        }
        Corpus::new(self.vocab, self.order, sequences)
    }
}

impl ConditionalModel for MarkovSource {
    fn vocab(&self) -> usize {
        self.vocab
    }

    fn logits_into(&self, history: &[u32], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(self.transition_row(history)) {
            *o = p.ln();
        }
    }
}

/// Builds a chain from `seed` and samples a corpus from it with the same seed.
pub fn generate_corpus(
    seed: u64,
    vocab: usize,
    order: usize,
    zipf_s: f64,
    length: usize,
    n_sequences: usize,
) -> Result<Corpus> {
    MarkovSource::new(seed, vocab, order, zipf_s, 1.0)?.sample(seed, length, n_sequences)
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], u: f64) -> usize {
    let scaled = u * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= scaled).min(cdf.len() - 1)
}
