//! Head/tail probability-mass and entropy diagnostics for trained students.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TaidError};
use crate::models::{ConditionalModel, Corpus};
use crate::prob::ProbVector;

/// Student mass on the teacher's top `head_k` tokens and on the teacher's
/// bottom percentile band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    pub head_mass: f64,
    pub tail_mass: f64,
    pub head_k: usize,
    pub tail_lo_pct: f64,
    pub tail_hi_pct: f64,
}

pub const DEFAULT_HEAD_K: usize = 10;
pub const DEFAULT_TAIL_RANGE: (f64, f64) = (80.0, 100.0);

/// Token indices sorted by descending teacher probability, ties by index.
pub fn teacher_ranking(teacher: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..teacher.len()).collect();
    order.sort_by(|&a, &b| teacher[b].total_cmp(&teacher[a]).then(a.cmp(&b)));
    order
}

/// Rank range `[⌈lo·V/100⌉, ⌈hi·V/100⌉)` for a percentile band.
pub fn tail_ranks(vocab: usize, lo_pct: f64, hi_pct: f64) -> (usize, usize) {
    let v = vocab as f64;
    let lo = (lo_pct * v / 100.0).ceil() as usize;
    let hi = (hi_pct * v / 100.0).ceil() as usize;
    (lo.min(vocab), hi.min(vocab))
}

pub fn mass_report(
    student: &ProbVector,
    teacher: &ProbVector,
    head_k: usize,
    tail_range: (f64, f64),
) -> Result<MassReport> {
    let v = teacher.len();
    if student.len() != v {
        return Err(TaidError::Dimension {
            expected: v,
            got: student.len(),
        });
    }
    if head_k >= v {
        return Err(TaidError::Range(format!("head_k = {head_k} must be below V = {v}")));
    }
    let (lo_pct, hi_pct) = tail_range;
    if !(0.0..=100.0).contains(&lo_pct) || !(lo_pct..=100.0).contains(&hi_pct) {
        return Err(TaidError::Range(format!(
            "tail range ({lo_pct}, {hi_pct}) is not an interval inside [0, 100]"
        )));
    }
    let (lo, hi) = tail_ranks(v, lo_pct, hi_pct);
    if lo < head_k && hi > lo {
        return Err(TaidError::Range(format!(
            "tail ranks [{lo}, {hi}) overlap the top {head_k}"
        )));
    }
    let order = teacher_ranking(teacher.as_slice());
    let s = student.as_slice();
    let head_mass = order[..head_k].iter().map(|&i| s[i]).sum::<f64>();
    let tail_mass = order[lo..hi].iter().map(|&i| s[i]).sum::<f64>();
    Ok(MassReport {
        head_mass: head_mass.min(1.0),
        tail_mass: tail_mass.min(1.0),
        head_k,
        tail_lo_pct: lo_pct,
        tail_hi_pct: hi_pct,
    })
}

/// Arithmetic mean of per-context reports.
pub fn mean_mass_report(
    student: &dyn ConditionalModel,
    teacher: &dyn ConditionalModel,
    histories: &[&[u32]],
    head_k: usize,
    tail_range: (f64, f64),
) -> Result<MassReport> {
    if histories.is_empty() {
        return Err(TaidError::InvalidInput("mass report needs at least one context".into()));
    }
    let (mut head, mut tail) = (0.0, 0.0);
    for h in histories {
        let r = mass_report(&student.probs(h), &teacher.probs(h), head_k, tail_range)?;
        head += r.head_mass;
        tail += r.tail_mass;
    }
    let n = histories.len() as f64;
    Ok(MassReport {
        head_mass: head / n,
        tail_mass: tail / n,
        head_k,
        tail_lo_pct: tail_range.0,
        tail_hi_pct: tail_range.1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistStats {
    /// Shannon entropy in nats.
    pub entropy: f64,
    pub target_prob: f64,
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

pub fn dist_stats(dist: &ProbVector, target: usize) -> Result<DistStats> {
    let p = dist.as_slice();
    let target_prob = *p
        .get(target)
        .ok_or_else(|| TaidError::Range(format!("target {target} is outside a vocabulary of {}", p.len())))?;
    let max = (p.len() as f64).ln();
    Ok(DistStats {
        entropy: entropy(p).clamp(0.0, max),
        target_prob,
    })
}

/// Context-averaged diagnostics of a student against its teacher.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub contexts: usize,
    pub mass: MassReport,
    pub student_entropy: f64,
    pub teacher_entropy: f64,
    /// Mean student probability of the token that actually follows.
    pub student_target_prob: f64,
    pub teacher_target_prob: f64,
}

/// Evaluates up to `max_contexts` corpus positions spread evenly over it.
pub fn model_report(
    student: &dyn ConditionalModel,
    teacher: &dyn ConditionalModel,
    corpus: &Corpus,
    max_contexts: usize,
    head_k: usize,
    tail_range: (f64, f64),
) -> Result<ModelReport> {
    let positions = corpus.positions();
    let stride = positions.len().div_ceil(max_contexts.max(1)).max(1);
    let picked: Vec<_> = positions.iter().step_by(stride).copied().collect();
    if picked.is_empty() {
        return Err(TaidError::InvalidInput("corpus has no positions".into()));
    }
    let (mut head, mut tail) = (0.0, 0.0);
    let (mut hs, mut ht, mut ps, mut pt) = (0.0, 0.0, 0.0, 0.0);
    for &at in &picked {
        let h = corpus.history(at);
        let target = corpus.token(at) as usize;
        let q = student.probs(h);
        let p = teacher.probs(h);
        let r = mass_report(&q, &p, head_k, tail_range)?;
        head += r.head_mass;
        tail += r.tail_mass;
        let sq = dist_stats(&q, target)?;
        let sp = dist_stats(&p, target)?;
        hs += sq.entropy;
        ht += sp.entropy;
        ps += sq.target_prob;
        pt += sp.target_prob;
    }
    let n = picked.len() as f64;
    Ok(ModelReport {
        contexts: picked.len(),
        mass: MassReport {
            head_mass: head / n,
            tail_mass: tail / n,
            head_k,
            tail_lo_pct: tail_range.0,
            tail_hi_pct: tail_range.1,
        },
        student_entropy: hs / n,
        teacher_entropy: ht / n,
        student_target_prob: ps / n,
        teacher_target_prob: pt / n,
    })
}
