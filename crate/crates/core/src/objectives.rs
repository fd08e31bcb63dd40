//! Distillation objectives and their gradients with respect to the student
//! logits.
//!
//! Every objective averages a per-position divergence over the `S` rows of a
//! [`TokenBatch`]. Rows are evaluated in log space from the logits, so the
//! logit-based kernels never see an exact zero inside a logarithm. Mixture
//! distributions `r = λp + (1 - λ)q` are formed with a log-add-exp, which
//! keeps skew and generalized-JS objectives finite even where `q` underflows.
//!
//! Gradients are analytic and pushed through the softmax Jacobian:
//! for a row with `q = softmax(z)` and `∂J/∂q = a`, `∂J/∂z = q ⊙ (a - ⟨q, a⟩)`.
//! Each gradient row therefore sums to zero.

use ndarray::{Array2, ArrayView1, ArrayViewMut1};

use crate::error::{Result, TaidError};
use crate::prob::{log_softmax_into, mix_logits_into, InterpolationParam};

/// Floor applied to `q(y)` inside `log(p/q)` by the probability-space
/// kernels when `p(y) > 0` but `q(y) = 0`.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default mixture weight for the skew and generalized-JS objectives.
pub const DEFAULT_MIXTURE_LAMBDA: f64 = 0.1;

/// Student and teacher logits for `S` token positions over a vocabulary of `V`.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    student: Array2<f64>,
    teacher: Array2<f64>,
}

impl TokenBatch {
    pub fn new(student: Array2<f64>, teacher: Array2<f64>) -> Result<Self> {
        if student.dim() != teacher.dim() {
            let (s, v) = student.dim();
            let (ts, tv) = teacher.dim();
            return Err(if s != ts {
                TaidError::Dimension {
                    expected: s,
                    got: ts,
                }
            } else {
                TaidError::Dimension {
                    expected: v,
                    got: tv,
                }
            });
        }
        let (rows, vocab) = student.dim();
        if rows == 0 {
            return Err(TaidError::InvalidInput("batch has no positions".into()));
        }
        if vocab < 2 {
            return Err(TaidError::InvalidInput(format!(
                "vocabulary must have at least 2 tokens, got {vocab}"
            )));
        }
        if student.iter().chain(teacher.iter()).any(|v| !v.is_finite()) {
            return Err(TaidError::InvalidInput("batch logits must be finite".into()));
        }
        Ok(Self {
            student: student.as_standard_layout().into_owned(),
            teacher: teacher.as_standard_layout().into_owned(),
        })
    }

    pub fn positions(&self) -> usize {
        self.student.nrows()
    }

    pub fn vocab(&self) -> usize {
        self.student.ncols()
    }

    pub fn student(&self) -> &Array2<f64> {
        &self.student
    }

    pub fn teacher(&self) -> &Array2<f64> {
        &self.teacher
    }
}

/// Objective value in nats and its gradient `∂value/∂student_logits` (`S×V`).
#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub value: f64,
    pub grad: Array2<f64>,
}

impl ObjectiveValue {
    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Forward KL, `KL(p ‖ q)`.
    Kl,
    /// Reverse KL, `KL(q ‖ p)`.
    ReverseKl,
    /// Token-level total variation distance.
    TotalVariation,
    /// `λ·KL(p ‖ r) + (1 - λ)·KL(q ‖ r)`.
    GeneralizedJs { lambda: f64 },
    /// `KL(p ‖ r)`.
    SkewKl { lambda: f64 },
    /// `KL(q ‖ r)`.
    SkewReverseKl { lambda: f64 },
    /// `KL(p_t ‖ q)` against the detached interpolated target.
    Taid { t: f64 },
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Kl => "kl",
            Objective::ReverseKl => "rkl",
            Objective::TotalVariation => "tvd",
            Objective::GeneralizedJs { .. } => "gjsd",
            Objective::SkewKl { .. } => "skl",
            Objective::SkewReverseKl { .. } => "srkl",
            Objective::Taid { .. } => "taid",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Objective::GeneralizedJs { lambda }
            | Objective::SkewKl { lambda }
            | Objective::SkewReverseKl { lambda } => {
                if !(0.0..=1.0).contains(&lambda) {
                    return Err(TaidError::param(
                        "lambda",
                        format!("{lambda} is outside [0, 1]"),
                    ));
                }
            }
            Objective::Taid { t } => {
                InterpolationParam::new(t)?;
            }
            _ => {}
        }
        Ok(())
    }

    pub fn evaluate(&self, batch: &TokenBatch) -> Result<ObjectiveValue> {
        self.validate()?;
        let (rows, vocab) = batch.student.dim();
        let scale = 1.0 / rows as f64;
        let mut grad = Array2::zeros((rows, vocab));
        let mut scratch = RowScratch::new(vocab);
        // Fixed-order accumulation keeps results bitwise reproducible.
        let mut total = 0.0;
        for (s, mut g) in grad.outer_iter_mut().enumerate() {
            let v = scratch.row(
                self,
                batch.student.row(s),
                batch.teacher.row(s),
                g.view_mut(),
            );
            g.mapv_inplace(|x| x * scale);
            total += v;
        }
        Ok(ObjectiveValue {
            value: total * scale,
            grad,
        })
    }
}

pub fn kl_divergence(batch: &TokenBatch) -> Result<ObjectiveValue> {
    Objective::Kl.evaluate(batch)
}

pub fn reverse_kl(batch: &TokenBatch) -> Result<ObjectiveValue> {
    Objective::ReverseKl.evaluate(batch)
}

/// Token-level TVD. The gradient is a subgradient using `sign(q - p)` with
/// `sign(0) = 0`.
pub fn total_variation(batch: &TokenBatch) -> Result<ObjectiveValue> {
    Objective::TotalVariation.evaluate(batch)
}

pub fn generalized_js(batch: &TokenBatch, lambda: f64) -> Result<ObjectiveValue> {
    Objective::GeneralizedJs { lambda }.evaluate(batch)
}

pub fn skew_kl(batch: &TokenBatch, lambda: f64) -> Result<ObjectiveValue> {
    Objective::SkewKl { lambda }.evaluate(batch)
}

pub fn skew_rkl(batch: &TokenBatch, lambda: f64) -> Result<ObjectiveValue> {
    Objective::SkewReverseKl { lambda }.evaluate(batch)
}

/// KL from the interpolated target `softmax((1 - t)·z_student + t·z_teacher)`
/// to the student. The target is a constant: the gradient is `(q - p_t)/S`.
pub fn taid_objective(batch: &TokenBatch, t: InterpolationParam) -> Result<ObjectiveValue> {
    Objective::Taid { t: t.value() }.evaluate(batch)
}

struct RowScratch {
    log_q: Vec<f64>,
    log_p: Vec<f64>,
    q: Vec<f64>,
    p: Vec<f64>,
    log_r: Vec<f64>,
    mixed: Vec<f64>,
    dq: Vec<f64>,
}

impl RowScratch {
    fn new(vocab: usize) -> Self {
        Self {
            log_q: vec![0.0; vocab],
            log_p: vec![0.0; vocab],
            q: vec![0.0; vocab],
            p: vec![0.0; vocab],
            log_r: vec![0.0; vocab],
            mixed: vec![0.0; vocab],
            dq: vec![0.0; vocab],
        }
    }

    /// Returns the unscaled row divergence and writes its unscaled gradient.
    fn row(
        &mut self,
        objective: &Objective,
        student: ArrayView1<f64>,
        teacher: ArrayView1<f64>,
        mut grad: ArrayViewMut1<f64>,
    ) -> f64 {
        let student = student.as_slice().expect("standard layout");
        let teacher = teacher.as_slice().expect("standard layout");
        let grad = grad.as_slice_mut().expect("standard layout");

        log_softmax_into(student, &mut self.log_q);
        match *objective {
            Objective::Taid { t } => {
                mix_logits_into(student, teacher, t, &mut self.mixed);
                log_softmax_into(&self.mixed, &mut self.log_p);
            }
            _ => log_softmax_into(teacher, &mut self.log_p),
        }
        exp_into(&self.log_q, &mut self.q);
        exp_into(&self.log_p, &mut self.p);

        let (q, p, log_q, log_p) = (&self.q, &self.p, &self.log_q, &self.log_p);
        match *objective {
            Objective::Kl | Objective::Taid { .. } => {
                for (g, (qi, pi)) in grad.iter_mut().zip(q.iter().zip(p)) {
                    *g = qi - pi;
                }
                weighted_log_ratio(p, log_p, log_q)
            }
            Objective::ReverseKl => {
                let value = weighted_log_ratio(q, log_q, log_p);
                for (i, g) in grad.iter_mut().enumerate() {
                    *g = q[i] * (log_q[i] - log_p[i] - value);
                }
                value
            }
            Objective::TotalVariation => {
                let mut value = 0.0;
                let mut mean_sign = 0.0;
                for i in 0..q.len() {
                    let diff = q[i] - p[i];
                    value += diff.abs();
                    let sign = sign_or_zero(diff);
                    self.dq[i] = sign;
                    mean_sign += sign * q[i];
                }
                for (i, g) in grad.iter_mut().enumerate() {
                    *g = 0.5 * q[i] * (self.dq[i] - mean_sign);
                }
                0.5 * value
            }
            Objective::SkewKl { lambda } => {
                log_mixture_into(lambda, log_p, log_q, &mut self.log_r);
                for i in 0..q.len() {
                    self.dq[i] = -(1.0 - lambda) * (log_p[i] - self.log_r[i]).exp();
                }
                softmax_pullback(q, &self.dq, grad);
                weighted_log_ratio(p, log_p, &self.log_r)
            }
            Objective::SkewReverseKl { lambda } => {
                log_mixture_into(lambda, log_p, log_q, &mut self.log_r);
                for i in 0..q.len() {
                    self.dq[i] = log_q[i]
                        - self.log_r[i]
                        - (1.0 - lambda) * (log_q[i] - self.log_r[i]).exp();
                }
                softmax_pullback(q, &self.dq, grad);
                weighted_log_ratio(q, log_q, &self.log_r)
            }
            Objective::GeneralizedJs { lambda } => {
                log_mixture_into(lambda, log_p, log_q, &mut self.log_r);
                for i in 0..q.len() {
                    self.dq[i] = (1.0 - lambda) * (log_q[i] - self.log_r[i]);
                }
                softmax_pullback(q, &self.dq, grad);
                lambda * weighted_log_ratio(p, log_p, &self.log_r)
                    + (1.0 - lambda) * weighted_log_ratio(q, log_q, &self.log_r)
            }
        }
    }
}

fn exp_into(src: &[f64], dst: &mut [f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = s.exp();
    }
}

fn sign_or_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `Σ w_i (log_a_i - log_b_i)`, skipping entries with zero weight.
fn weighted_log_ratio(w: &[f64], log_a: &[f64], log_b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..w.len() {
        if w[i] > 0.0 {
            acc += w[i] * (log_a[i] - log_b[i]);
        }
    }
    acc
}

/// `log(λ·exp(log_p) + (1 - λ)·exp(log_q))` elementwise.
fn log_mixture_into(lambda: f64, log_p: &[f64], log_q: &[f64], out: &mut [f64]) {
    if lambda <= 0.0 {
        out.copy_from_slice(log_q);
        return;
    }
    if lambda >= 1.0 {
        out.copy_from_slice(log_p);
        return;
    }
    let (ll, lm) = (lambda.ln(), (1.0 - lambda).ln());
    for i in 0..out.len() {
        let a = ll + log_p[i];
        let b = lm + log_q[i];
        let hi = a.max(b);
        out[i] = hi + ((a - hi).exp() + (b - hi).exp()).ln();
    }
}

/// Applies the softmax Jacobian: `grad = q ⊙ (dq - ⟨q, dq⟩)`.
fn softmax_pullback(q: &[f64], dq: &[f64], grad: &mut [f64]) {
    let mean: f64 = q.iter().zip(dq).map(|(a, b)| a * b).sum();
    for i in 0..q.len() {
        grad[i] = q[i] * (dq[i] - mean);
    }
}

/// `KL(p ‖ q)` between probability vectors. Terms with `p(y) = 0` are zero;
/// `q(y) = 0` under `p(y) > 0` is floored at [`PROB_FLOOR`].
pub fn kl_probs(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(PROB_FLOOR).ln()))
        .sum()
}

pub fn tvd_probs(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
