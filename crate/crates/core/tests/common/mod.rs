//! Brute-force reference implementations for the integration tests. Each
//! one follows the textbook definition directly and shares no code with
//! the library.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `Σ p log(p/q)` term by term, `0 log 0 = 0`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            acc += p[i] * (p[i] / q[i]).ln();
        }
    }
    acc
}

pub fn mixture(lambda: f64, a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Div {
    Kl,
    Rkl,
    Tvd,
    Gjsd(f64),
    Skl(f64),
    Srkl(f64),
    Taid(f64),
}

impl Div {
    pub fn all() -> Vec<Div> {
        vec![
            Div::Kl,
            Div::Rkl,
            Div::Tvd,
            Div::Gjsd(0.1),
            Div::Skl(0.1),
            Div::Srkl(0.1),
            Div::Taid(0.0),
            Div::Taid(0.3),
            Div::Taid(0.7),
            Div::Taid(1.0),
        ]
    }
}

/// The interpolated target `softmax((1-t) s + t z)` for one row.
pub fn taid_target(t: f64, student: &[f64], teacher: &[f64]) -> Vec<f64> {
    let mixed: Vec<f64> = student.iter().zip(teacher).map(|(s, z)| (1.0 - t) * s + t * z).collect();
    softmax(&mixed)
}

/// One position's divergence. For TAID the target is passed in, so that
/// finite differences can hold it fixed.
pub fn row_value(div: Div, student: &[f64], teacher: &[f64], taid_p: Option<&[f64]>) -> f64 {
    let q = softmax(student);
    let p = softmax(teacher);
    match div {
        Div::Kl => kl(&p, &q),
        Div::Rkl => kl(&q, &p),
        Div::Tvd => 0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>(),
        Div::Gjsd(l) => {
            let r = mixture(l, &p, &q);
            l * kl(&p, &r) + (1.0 - l) * kl(&q, &r)
        }
        Div::Skl(l) => kl(&p, &mixture(l, &p, &q)),
        Div::Srkl(l) => kl(&q, &mixture(l, &p, &q)),
        Div::Taid(t) => match taid_p {
            Some(pt) => kl(pt, &q),
            None => kl(&taid_target(t, student, teacher), &q),
        },
    }
}

/// Mean over positions.
pub fn batch_value(div: Div, student: &[Vec<f64>], teacher: &[Vec<f64>]) -> f64 {
    let s = student.len() as f64;
    student.iter().zip(teacher).map(|(a, b)| row_value(div, a, b, None)).sum::<f64>() / s
}

/// Central differences of the batch mean, one logit at a time. Only the
/// perturbed row changes, so each probe re-evaluates that row alone.
pub fn finite_difference(div: Div, student: &[Vec<f64>], teacher: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    let s = student.len() as f64;
    student
        .iter()
        .zip(teacher)
        .map(|(row, trow)| {
            let fixed = match div {
                Div::Taid(t) => Some(taid_target(t, row, trow)),
                _ => None,
            };
            (0..row.len())
                .map(|j| {
                    let mut up = row.clone();
                    let mut down = row.clone();
                    up[j] += h;
                    down[j] -= h;
                    let f_up = row_value(div, &up, trow, fixed.as_deref());
                    let f_down = row_value(div, &down, trow, fixed.as_deref());
                    (f_up - f_down) / (2.0 * h) / s
                })
                .collect()
        })
        .collect()
}

/// Random logits: `S×V` with a per-batch scale.
pub fn random_logits(rng: &mut ChaCha8Rng, s: usize, v: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..s)
        .map(|_| (0..v).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0) * 3.0).collect())
        .collect()
}

pub fn to_array(rows: &[Vec<f64>]) -> ndarray::Array2<f64> {
    let s = rows.len();
    let v = rows[0].len();
    ndarray::Array2::from_shape_fn((s, v), |(i, j)| rows[i][j])
}

/// The adaptive interpolation rule written out step by step.
pub struct SchedulerOracle {
    pub alpha: f64,
    pub beta: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub total: usize,
    pub eps: f64,
}

impl SchedulerOracle {
    pub fn linear(&self, n: usize) -> f64 {
        self.t_start + (self.t_end - self.t_start) * n as f64 / self.total as f64
    }

    pub fn run(&self, losses: &[f64]) -> Vec<f64> {
        let mut t = self.t_start;
        let mut m = 0.0;
        let mut prev: Option<f64> = None;
        let mut out = Vec::new();
        for (i, &j) in losses.iter().enumerate() {
            let delta = prev.map_or(0.0, |p| (p - j) / (p + self.eps));
            m = self.beta * m + (1.0 - self.beta) * delta;
            let sig = 1.0 / (1.0 + (-m).exp());
            let proposal = t + self.alpha * sig * (1.0 - t);
            t = proposal.max(self.linear(i + 1)).min(self.t_end);
            prev = Some(j);
            out.push(t);
        }
        out
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `G = Σ_k d_k v_k v_kᵀ` from eigenpairs (rows of `v`).
pub fn gram_from_pairs(v: &ndarray::Array2<f64>, d: &[f64]) -> Vec<Vec<f64>> {
    let n = d.len();
    let mut g = vec![vec![0.0; n]; n];
    for (k, dk) in d.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                g[i][j] += dk * v[[k, i]] * v[[k, j]];
            }
        }
    }
    g
}

/// One entry per step: `(‖ỹ_t‖, collapsed)`.
pub struct OracleStep {
    pub norm_tilde: f64,
    pub collapsed: bool,
}

/// The regularised least-squares recursion by dense linear solves. After a
/// collapse the fit is zero; `stop_at_collapse` ends the trace there.
pub fn recursion_oracle(
    g: &[Vec<f64>],
    y0: &[f64],
    eps: f64,
    horizon: usize,
    alpha: f64,
    taid: bool,
    stop_at_collapse: bool,
) -> Vec<OracleStep> {
    let n = y0.len();
    let crit = (n as f64 * eps).sqrt();
    let mut y = y0.to_vec();
    let mut out = Vec::new();
    for t in 0..horizon {
        let w = t as f64 / horizon as f64;
        let tilde: Vec<f64> = if taid {
            y.iter().zip(y0).map(|(a, b)| (1.0 - w) * a + w * b).collect()
        } else {
            y.clone()
        };
        let nt = norm(&tilde);
        let collapsed = nt <= crit;
        out.push(OracleStep {
            norm_tilde: nt,
            collapsed,
        });
        if collapsed {
            y = vec![0.0; n];
            if stop_at_collapse {
                break;
            }
            continue;
        }
        let lambda = alpha * crit / (nt - crit);
        let mut a = g.to_vec();
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += lambda;
        }
        let x = solve(a, tilde);
        y = (0..n).map(|i| (0..n).map(|j| g[i][j] * x[j]).sum()).collect();
    }
    out
}

/// Population standard deviation.
pub fn population_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Student mass on the teacher's top `k` and bottom-percentile ranks.
pub fn head_tail(student: &[f64], teacher: &[f64], k: usize, lo_pct: f64, hi_pct: f64) -> (f64, f64) {
    let v = teacher.len();
    let mut idx: Vec<usize> = (0..v).collect();
    idx.sort_by(|&a, &b| teacher[b].partial_cmp(&teacher[a]).unwrap().then(a.cmp(&b)));
    let lo = (lo_pct / 100.0 * v as f64).ceil() as usize;
    let hi = ((hi_pct / 100.0 * v as f64).ceil() as usize).min(v);
    let head = idx[..k].iter().map(|&i| student[i]).sum();
    let tail = idx[lo..hi].iter().map(|&i| student[i]).sum();
    (head, tail)
}
