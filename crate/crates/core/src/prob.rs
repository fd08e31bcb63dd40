//! Logits, probability simplices and the logit-space interpolation that
//! builds the intermediate teacher.
//!
//! Everything is `f64` and goes through a max-shifted log-sum-exp, so any
//! finite logit vector maps to a valid simplex point. Probabilities that
//! underflow are stored as exact zeros; divergence kernels deal with them.

use crate::error::{Result, TaidError};

/// Tolerance on `Σ p = 1` accepted by [`ProbVector::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Raw, unnormalised scores over a vocabulary of at least two tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(TaidError::InvalidInput(format!(
                "logit vector needs at least 2 entries, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TaidError::InvalidInput(format!(
                "logit {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(TaidError::InvalidInput(format!(
                "probability vector needs at least 2 entries, got {}",
                probs.len()
            )));
        }
        if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(TaidError::InvalidInput(format!(
                "probability {i} is negative or not finite ({})",
                probs[i]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(TaidError::InvalidInput(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn uniform(len: usize) -> Result<Self> {
        Self::new(vec![1.0 / len as f64; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Interpolation weight `t ∈ [0, 1]` on the teacher logits.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct InterpolationParam(f64);

impl InterpolationParam {
    pub fn new(t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(TaidError::param("t", format!("{t} is outside [0, 1]")));
        }
        Ok(Self(t))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `log Σ exp(x)` with the maximum factored out.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = x.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Writes `log_softmax(x)` into `out`. Inputs are assumed finite.
pub fn log_softmax_into(x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    let lse = log_sum_exp(x);
    for (o, v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

/// Writes `softmax(x)` into `out`. Inputs are assumed finite.
pub fn softmax_into(x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax(logits: &LogitVector) -> ProbVector {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits.as_slice(), &mut out);
    ProbVector(out)
}

pub fn log_softmax(logits: &LogitVector) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    log_softmax_into(logits.as_slice(), &mut out);
    out
}

/// Mixes two logit rows as `(1 - t)·student + t·teacher` into `out`.
pub fn mix_logits_into(student: &[f64], teacher: &[f64], t: f64, out: &mut [f64]) {
    for ((o, s), p) in out.iter_mut().zip(student).zip(teacher) {
        *o = (1.0 - t) * s + t * p;
    }
}

/// The intermediate teacher `softmax((1 - t)·student + t·teacher)`.
///
/// The student logits are consumed by value semantics only: nothing here
/// (or in the objectives built on top of it) differentiates through them.
pub fn interpolate_logits(
    student: &LogitVector,
    teacher: &LogitVector,
    t: InterpolationParam,
) -> Result<ProbVector> {
    if student.len() != teacher.len() {
        return Err(TaidError::Dimension {
            expected: student.len(),
            got: teacher.len(),
        });
    }
    let mut mixed = vec![0.0; student.len()];
    mix_logits_into(student.as_slice(), teacher.as_slice(), t.value(), &mut mixed);
    let mut out = vec![0.0; mixed.len()];
    softmax_into(&mixed, &mut out);
    Ok(ProbVector(out))
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
