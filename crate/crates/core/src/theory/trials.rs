//! Randomised property suite for the recursion: norm floor, late-phase
//! safety, the initial-norm threshold and the self-distillation contrast.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::recursion::{
    corollary_initial_norm, norm, run_recursion, taid_early_phase_bound, AlphaMode, SimConfig,
    SimMode, SimTrace,
};
use super::spectrum::{gram_from_kernel, GramSpectrum, Kernel};
use crate::error::{Result, TaidError};

/// Relative slack on the norm floor. After a collapse the fit is exactly
/// zero and the floor holds with equality, up to rounding.
pub const FLOOR_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub trials: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub horizon_min: usize,
    pub horizon_max: usize,
    pub r0_min: f64,
    pub r0_max: f64,
    /// Multiplier on the threshold norm for the no-collapse check.
    pub corollary_factor: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 200,
            n_min: 4,
            n_max: 64,
            kappa_min: 1.0,
            kappa_max: 10.0,
            horizon_min: 10,
            horizon_max: 200,
            r0_min: 1.1,
            r0_max: 10.0,
            corollary_factor: 1.05,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(TaidError::param("n", "need 1 <= n_min <= n_max"));
        }
        if !(self.kappa_min >= 1.0 && self.kappa_min <= self.kappa_max && self.kappa_max.is_finite()) {
            return Err(TaidError::param("kappa", "need 1 <= kappa_min <= kappa_max"));
        }
        if self.horizon_min == 0 || self.horizon_min > self.horizon_max {
            return Err(TaidError::param("horizon", "need 1 <= horizon_min <= horizon_max"));
        }
        if !(self.r0_min > 1.0 && self.r0_min <= self.r0_max && self.r0_max.is_finite()) {
            return Err(TaidError::param("r0", "need 1 < r0_min <= r0_max"));
        }
        if !(self.corollary_factor >= 1.0 && self.corollary_factor.is_finite()) {
            return Err(TaidError::param("corollary_factor", "must be >= 1"));
        }
        Ok(())
    }
}

/// A single randomised problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub spectrum: GramSpectrum,
    pub y0: Vec<f64>,
    pub epsilon: f64,
    pub horizon: usize,
}

impl Trial {
    pub fn r0(&self) -> f64 {
        norm(&self.y0) / (self.y0.len() as f64 * self.epsilon).sqrt()
    }
}

/// Draws `config.trials` instances. Each Gram matrix is a random rotation
/// of a diagonal with extremes pinned at `s` and `s·κ`, then re-diagonalised.
pub fn generate_trials(config: &SuiteConfig) -> Result<Vec<Trial>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.trials)
        .map(|index| {
            let n = rng.random_range(config.n_min..=config.n_max);
            let kappa = rng.random_range(config.kappa_min..=config.kappa_max);
            let horizon = rng.random_range(config.horizon_min..=config.horizon_max);
            let r0 = rng.random_range(config.r0_min..=config.r0_max);
            let scale = 10f64.powf(rng.random_range(-1.0..1.0));
            let epsilon = 10f64.powf(rng.random_range(-3.0..0.0));

            let mut d: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..=kappa)).collect();
            d[0] = 1.0;
            if n > 1 {
                d[n - 1] = kappa;
            }
            let q = random_orthogonal(&mut rng, n);
            let g = Array2::from_shape_fn((n, n), |(i, j)| {
                let s: f64 = (0..n).map(|k| q[[k, i]] * d[k] * q[[k, j]]).sum();
                s * scale
            });
            let g = (&g + &g.t()) / 2.0;
            let spectrum = gram_from_kernel(&[], &Kernel::Explicit(g))?;

            let mut y0: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let target = r0 * (n as f64 * epsilon).sqrt();
            let s = target / norm(&y0);
            y0.iter_mut().for_each(|v| *v *= s);
            Ok(Trial {
                index,
                spectrum,
                y0,
                epsilon,
                horizon,
            })
        })
        .collect()
}

/// Rows form an orthonormal basis (Gram-Schmidt on Gaussian rows).
fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    loop {
        let mut q = Array2::from_shape_fn((n, n), |_| rng.sample::<f64, _>(StandardNormal));
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = (0..n).map(|k| q[[i, k]] * q[[j, k]]).sum();
                for k in 0..n {
                    q[[i, k]] -= dot * q[[j, k]];
                }
            }
            let nrm = q.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if nrm < 1e-8 {
                ok = false;
                break;
            }
            q.row_mut(i).mapv_inplace(|v| v / nrm);
        }
        if ok {
            return q;
        }
    }
}

/// `α` choices exercised for each interpolated run.
pub fn alpha_modes(spectrum: &GramSpectrum) -> [AlphaMode; 3] {
    let mid = (spectrum.d_min() * spectrum.d_max()).sqrt();
    [AlphaMode::DMin, AlphaMode::DMax, AlphaMode::Fixed(mid)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub n: usize,
    pub kappa: f64,
    pub horizon: usize,
    pub r0: f64,
    /// `‖ỹ_t‖ ≥ (t/T)‖y₀‖` at every step of every interpolated run.
    pub floor_ok: bool,
    /// No interpolated collapse at any step `t > T/r₀`.
    pub late_phase_ok: bool,
    /// Starting at the threshold norm times the safety factor, every
    /// interpolated run completes uncollapsed.
    pub corollary_ok: bool,
    pub corollary_min_r: f64,
    /// Self-distillation (α = d_max) survives at least `⌊(r₀-1)/κ⌋` steps.
    pub self_distill_guarantee_ok: bool,
    /// Whether self-distillation collapsed; only asserted when `T ≥ 20·r₀`.
    pub self_distill_collapse_step: Option<usize>,
    pub eventual_collapse_applies: bool,
    /// First collapse of the interpolated run with α = d_min, if any.
    pub taid_first_collapse: Option<usize>,
    /// Reported early-phase safe horizon with γ = 1.
    pub early_phase_bound: f64,
}

impl TrialOutcome {
    pub fn eventual_collapse_ok(&self) -> bool {
        !self.eventual_collapse_applies || self.self_distill_collapse_step.is_some()
    }

    pub fn passed(&self) -> bool {
        self.floor_ok
            && self.late_phase_ok
            && self.corollary_ok
            && self.self_distill_guarantee_ok
            && self.eventual_collapse_ok()
    }
}

pub fn floor_holds(trace: &SimTrace) -> bool {
    let t_max = trace.horizon as f64;
    trace.steps.iter().all(|s| {
        let floor = s.step as f64 / t_max * trace.norm_y0;
        norm(&s.y_tilde) >= floor * (1.0 - FLOOR_REL_TOL)
    })
}

pub fn late_phase_holds(trace: &SimTrace, r0: f64) -> bool {
    let cut = trace.horizon as f64 / r0;
    trace.steps.iter().all(|s| !(s.step as f64 > cut && s.collapsed))
}

pub fn evaluate_trial(trial: &Trial, corollary_factor: f64) -> Result<TrialOutcome> {
    let spec = &trial.spectrum;
    let r0 = trial.r0();
    let kappa = spec.kappa();
    let n = spec.n();
    let horizon = trial.horizon;

    let mut floor_ok = true;
    let mut late_phase_ok = true;
    let mut taid_first_collapse = None;
    for (i, alpha) in alpha_modes(spec).into_iter().enumerate() {
        let cfg = SimConfig::new(trial.y0.clone(), trial.epsilon, horizon, alpha, SimMode::Taid)?
            .with_continuation(true);
        let trace = run_recursion(spec, &cfg)?;
        floor_ok &= floor_holds(&trace);
        late_phase_ok &= late_phase_holds(&trace, r0);
        if i == 0 {
            taid_first_collapse = trace.first_collapse();
        }
    }

    let threshold = corollary_initial_norm(horizon, kappa, n, trial.epsilon);
    let scale = corollary_factor * threshold / norm(&trial.y0);
    let y_big: Vec<f64> = trial.y0.iter().map(|v| v * scale).collect();
    let mut corollary_ok = true;
    let mut corollary_min_r = f64::INFINITY;
    for alpha in alpha_modes(spec) {
        let cfg = SimConfig::new(y_big.clone(), trial.epsilon, horizon, alpha, SimMode::Taid)?;
        let trace = run_recursion(spec, &cfg)?;
        corollary_ok &= trace.completed();
        corollary_min_r = corollary_min_r.min(trace.min_r());
    }

    let cfg = SimConfig::new(trial.y0.clone(), trial.epsilon, horizon, AlphaMode::DMax, SimMode::SelfDistill)?;
    let trace = run_recursion(spec, &cfg)?;
    let sd_collapse = trace.first_collapse();
    let safe_steps = ((r0 - 1.0) / kappa).floor();
    let self_distill_guarantee_ok = sd_collapse.is_none_or(|c| c as f64 > safe_steps);

    Ok(TrialOutcome {
        index: trial.index,
        n,
        kappa,
        horizon,
        r0,
        floor_ok,
        late_phase_ok,
        corollary_ok,
        corollary_min_r,
        self_distill_guarantee_ok,
        self_distill_collapse_step: sd_collapse,
        eventual_collapse_applies: horizon as f64 >= 20.0 * r0,
        taid_first_collapse,
        early_phase_bound: taid_early_phase_bound(r0, kappa, horizon, 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub outcomes: Vec<TrialOutcome>,
}

pub const SUITE_CSV_HEADER: &str = "trial,n,kappa,horizon,r0,floor_ok,late_phase_ok,corollary_ok,corollary_min_r,self_distill_guarantee_ok,self_distill_collapse_step,eventual_collapse_applies,taid_first_collapse,early_phase_bound,passed";

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(TrialOutcome::passed)
    }

    pub fn passed_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.passed()).count()
    }

    pub fn csv(&self) -> String {
        let opt = |o: Option<usize>| o.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::new();
        writeln!(out, "{SUITE_CSV_HEADER}").unwrap();
        for o in &self.outcomes {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                o.index,
                o.n,
                o.kappa,
                o.horizon,
                o.r0,
                o.floor_ok,
                o.late_phase_ok,
                o.corollary_ok,
                o.corollary_min_r,
                o.self_distill_guarantee_ok,
                opt(o.self_distill_collapse_step),
                o.eventual_collapse_applies,
                opt(o.taid_first_collapse),
                o.early_phase_bound,
                o.passed()
            )
            .unwrap();
        }
        out
    }
}

/// Generates and evaluates the whole suite; trials run in parallel and are
/// reported in index order.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    let trials = generate_trials(config)?;
    let outcomes = trials
        .par_iter()
        .map(|t| evaluate_trial(t, config.corollary_factor))
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport {
        config: *config,
        outcomes,
    })
}
