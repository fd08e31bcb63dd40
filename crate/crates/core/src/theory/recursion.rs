//! The least-squares distillation recursion and its collapse criterion.
//!
//! At step `t` the teacher signal `ỹ_t` is either the student's previous
//! fit (self-distillation) or that fit blended with the original labels as
//! `(1 - t/T)·y_t + (t/T)·y₀`. The next fit is the kernel ridge solution
//! `y_{t+1} = Vᵀ D (λ_t I + D)⁻¹ V ỹ_t`, with `λ_t` chosen so that the fit
//! meets the mean-squared tolerance `ε` exactly. That is only possible while
//! `‖ỹ_t‖ > √(Nε)`; at or below it the only solution is `y = 0` (collapse).
//!
//! The closed form is the exact variational optimum, so the student meets
//! the ε-interpolation assumption by construction.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::spectrum::GramSpectrum;
use crate::error::{Result, TaidError};

/// Choice of `α_t ∈ [d_min, d_max]` in `λ_t = α_t √(Nε) / (‖ỹ_t‖ - √(Nε))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AlphaMode {
    DMin,
    DMax,
    Fixed(f64),
}

impl AlphaMode {
    pub fn resolve(self, spectrum: &GramSpectrum) -> Result<f64> {
        match self {
            AlphaMode::DMin => Ok(spectrum.d_min()),
            AlphaMode::DMax => Ok(spectrum.d_max()),
            AlphaMode::Fixed(a) => {
                if a >= spectrum.d_min() && a <= spectrum.d_max() {
                    Ok(a)
                } else {
                    Err(TaidError::param(
                        "alpha",
                        format!("{a} is outside [{}, {}]", spectrum.d_min(), spectrum.d_max()),
                    ))
                }
            }
        }
    }
}

impl fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaMode::DMin => f.write_str("d_min"),
            AlphaMode::DMax => f.write_str("d_max"),
            AlphaMode::Fixed(a) => write!(f, "fixed:{a}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimMode {
    Taid,
    SelfDistill,
}

impl fmt::Display for SimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimMode::Taid => "taid",
            SimMode::SelfDistill => "self_distill",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    y0: Vec<f64>,
    epsilon: f64,
    horizon: usize,
    pub alpha: AlphaMode,
    pub mode: SimMode,
    /// Keep stepping after a collapse, with `y = 0` as the fitted solution.
    pub continue_after_collapse: bool,
}

impl SimConfig {
    /// Requires `‖y₀‖² > N·ε`, `ε > 0` and `T ≥ 1`.
    pub fn new(y0: Vec<f64>, epsilon: f64, horizon: usize, alpha: AlphaMode, mode: SimMode) -> Result<Self> {
        if y0.is_empty() || y0.iter().any(|v| !v.is_finite()) {
            return Err(TaidError::InvalidInput("y0 must be a non-empty finite vector".into()));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(TaidError::param("epsilon", format!("{epsilon} must be > 0")));
        }
        if horizon == 0 {
            return Err(TaidError::param("horizon", "must be at least 1"));
        }
        let sq: f64 = y0.iter().map(|v| v * v).sum();
        let n_eps = y0.len() as f64 * epsilon;
        if sq <= n_eps {
            return Err(TaidError::InvalidInput(format!(
                "‖y0‖² = {sq} does not exceed N·ε = {n_eps}; the problem starts collapsed"
            )));
        }
        Ok(Self {
            y0,
            epsilon,
            horizon,
            alpha,
            mode,
            continue_after_collapse: false,
        })
    }

    pub fn with_continuation(mut self, on: bool) -> Self {
        self.continue_after_collapse = on;
        self
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `√(Nε)`.
    pub fn critical_norm(&self) -> f64 {
        (self.y0.len() as f64 * self.epsilon).sqrt()
    }

    /// `r₀ = ‖y₀‖ / √(Nε)`.
    pub fn r0(&self) -> f64 {
        norm(&self.y0) / self.critical_norm()
    }
}

/// One recursion step.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStep {
    pub step: usize,
    /// Student fit entering the step.
    pub y: Vec<f64>,
    /// Teacher signal for the step.
    pub y_tilde: Vec<f64>,
    /// `None` when the step collapsed.
    pub lambda: Option<f64>,
    /// `‖ỹ_t‖ / √(Nε)`.
    pub r: f64,
    pub collapsed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub steps: Vec<SimStep>,
    /// Fit after the last recorded step.
    pub final_y: Vec<f64>,
    pub norm_y0: f64,
    pub critical_norm: f64,
    pub horizon: usize,
}

impl SimTrace {
    pub fn first_collapse(&self) -> Option<usize> {
        self.steps.iter().find(|s| s.collapsed).map(|s| s.step)
    }

    /// All `T` steps ran and none collapsed.
    pub fn completed(&self) -> bool {
        self.steps.len() == self.horizon && self.first_collapse().is_none()
    }

    pub fn min_r(&self) -> f64 {
        self.steps.iter().map(|s| s.r).fold(f64::INFINITY, f64::min)
    }
}

pub fn norm(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Runs `t = 0..T-1`. By default the trace stops at the first collapse.
pub fn run_recursion(spectrum: &GramSpectrum, config: &SimConfig) -> Result<SimTrace> {
    let n = spectrum.n();
    if config.y0.len() != n {
        return Err(TaidError::Dimension {
            expected: n,
            got: config.y0.len(),
        });
    }
    let alpha = config.alpha.resolve(spectrum)?;
    let critical = config.critical_norm();
    let horizon = config.horizon;
    let mut y = config.y0.clone();
    let mut steps = Vec::with_capacity(horizon);

    for t in 0..horizon {
        let y_tilde: Vec<f64> = match config.mode {
            SimMode::SelfDistill => y.clone(),
            SimMode::Taid => {
                let w = t as f64 / horizon as f64;
                y.iter()
                    .zip(&config.y0)
                    .map(|(yt, y0)| (1.0 - w) * yt + w * y0)
                    .collect()
            }
        };
        let nt = norm(&y_tilde);
        let collapsed = nt <= critical;
        let (lambda, next) = if collapsed {
            (None, vec![0.0; n])
        } else {
            let lambda = alpha * critical / (nt - critical);
            debug_assert!(spectrum
                .filter_factors(lambda)
                .iter()
                .all(|f| *f > 0.0 && *f < 1.0 || lambda == 0.0));
            (Some(lambda), spectrum.apply_filter(lambda, &y_tilde))
        };
        steps.push(SimStep {
            step: t,
            y: std::mem::replace(&mut y, next),
            y_tilde,
            lambda,
            r: nt / critical,
            collapsed,
        });
        if collapsed && !config.continue_after_collapse {
            break;
        }
    }
    Ok(SimTrace {
        steps,
        final_y: y,
        norm_y0: norm(&config.y0),
        critical_norm: critical,
        horizon,
    })
}

/// Number of self-distillation steps guaranteed safe, `(r₀ - 1) / κ`.
/// `r₀ = 1` is the boundary and gives `0`.
pub fn predicted_self_distill_collapse_step(r0: f64, kappa: f64) -> Result<f64> {
    if !(r0 >= 1.0 && r0.is_finite()) {
        return Err(TaidError::InvalidInput(format!("r0 = {r0} must be at least 1")));
    }
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(TaidError::InvalidInput(format!("kappa = {kappa} must be at least 1")));
    }
    Ok((r0 - 1.0) / kappa)
}

/// Initial label norm above which the interpolated recursion never
/// collapses: `(1 + √(1 + 4T(1+κ)))/2 · √(Nε)`, taking the unspecified
/// constant as 1.
pub fn corollary_initial_norm(horizon: usize, kappa: f64, n: usize, epsilon: f64) -> f64 {
    let t = horizon as f64;
    (1.0 + (1.0 + 4.0 * t * (1.0 + kappa)).sqrt()) / 2.0 * (n as f64 * epsilon).sqrt()
}

/// Early-phase safe horizon `min((r₀ - γ)/(γ + κ), γT/r₀)` with the
/// vanishing correction dropped. Reported, not enforced.
pub fn taid_early_phase_bound(r0: f64, kappa: f64, horizon: usize, gamma: f64) -> f64 {
    ((r0 - gamma) / (gamma + kappa)).min(gamma * horizon as f64 / r0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity2() -> GramSpectrum {
        GramSpectrum::diagonal(vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn identity_hand_trace() {
        let cfg = SimConfig::new(vec![3.0, 4.0], 0.25, 5, AlphaMode::DMin, SimMode::Taid).unwrap();
        let trace = run_recursion(&identity2(), &cfg).unwrap();
        let c = 0.5f64.sqrt();
        let lambda0 = c / (5.0 - c);
        assert_eq!(trace.steps[0].lambda, Some(lambda0));
        assert!((lambda0 - 0.16471566962990766).abs() < 1e-15);
        let y1 = &trace.steps[1].y;
        assert!((y1[0] - 2.5757359312880714).abs() < 1e-14);
        assert!((y1[1] - 3.4343145750507618).abs() < 1e-14);
    }

    #[test]
    fn self_distill_norm_strictly_decreases() {
        let cfg = SimConfig::new(vec![3.0, 4.0], 0.25, 50, AlphaMode::DMin, SimMode::SelfDistill).unwrap();
        let trace = run_recursion(&identity2(), &cfg).unwrap();
        for w in trace.steps.windows(2) {
            assert!(norm(&w[1].y) < norm(&w[0].y));
        }
        assert!(trace.first_collapse().is_some());
        assert_eq!(trace.steps.last().unwrap().step, trace.first_collapse().unwrap());
    }

    #[test]
    fn last_taid_step_satisfies_triangle_bound() {
        let t_max = 12;
        let spec = GramSpectrum::diagonal(vec![0.5, 1.0, 2.0]).unwrap();
        let cfg = SimConfig::new(vec![3.0, -1.0, 2.0], 0.1, t_max, AlphaMode::DMax, SimMode::Taid).unwrap();
        let trace = run_recursion(&spec, &cfg).unwrap();
        assert!(trace.completed());
        let last = trace.steps.last().unwrap();
        let tf = t_max as f64;
        let bound = (tf - 1.0) / tf * trace.norm_y0 - norm(&last.y) / tf;
        assert!(norm(&last.y_tilde) >= bound);
    }

    #[test]
    fn continuation_records_every_step() {
        let cfg = SimConfig::new(vec![3.0, 4.0], 0.25, 30, AlphaMode::DMax, SimMode::SelfDistill)
            .unwrap()
            .with_continuation(true);
        let trace = run_recursion(&identity2(), &cfg).unwrap();
        assert_eq!(trace.steps.len(), 30);
        let first = trace.first_collapse().unwrap();
        assert!(trace.steps[first..].iter().all(|s| s.collapsed && s.lambda.is_none()));
        for s in &trace.steps {
            assert_eq!(s.collapsed, s.r <= 1.0);
        }
    }

    #[test]
    fn config_errors() {
        assert!(SimConfig::new(vec![0.1, 0.1], 0.25, 5, AlphaMode::DMin, SimMode::Taid).is_err());
        assert!(SimConfig::new(vec![3.0, 4.0], 0.0, 5, AlphaMode::DMin, SimMode::Taid).is_err());
        assert!(SimConfig::new(vec![3.0, 4.0], 0.25, 0, AlphaMode::DMin, SimMode::Taid).is_err());
        let cfg = SimConfig::new(vec![3.0, 4.0], 0.25, 5, AlphaMode::Fixed(2.0), SimMode::Taid).unwrap();
        assert!(run_recursion(&identity2(), &cfg).is_err());
        let cfg = SimConfig::new(vec![3.0, 4.0, 1.0], 0.25, 5, AlphaMode::DMin, SimMode::Taid).unwrap();
        assert!(run_recursion(&identity2(), &cfg).is_err());
    }

    #[test]
    fn closed_form_helpers() {
        assert_eq!(predicted_self_distill_collapse_step(1.0, 3.0).unwrap(), 0.0);
        assert_eq!(predicted_self_distill_collapse_step(5.0, 2.0).unwrap(), 2.0);
        assert_eq!(predicted_self_distill_collapse_step(11.0, 1.0).unwrap(), 10.0);
        assert!(predicted_self_distill_collapse_step(0.9, 1.0).is_err());
        assert!(predicted_self_distill_collapse_step(2.0, 0.5).is_err());

        assert_eq!(corollary_initial_norm(1, 1.0, 1, 1.0), 2.0);
        assert_eq!(corollary_initial_norm(6, 1.0, 1, 1.0), 4.0);
        let a = corollary_initial_norm(9, 3.0, 4, 0.5);
        let b = corollary_initial_norm(9, 3.0, 4, 1.0);
        assert!((b / a - 2f64.sqrt()).abs() < 1e-14);
    }
}
