//! Interpolation-parameter schedule for TAID training.
//!
//! The adaptive rule tracks the relative improvement of the objective,
//! smooths it with momentum, and advances `t` by
//! `α·sigmoid(m)·(1 - t)`, never falling below a linear ramp from
//! `t_start` to `t_end` over `N` steps and never exceeding `t_end`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TaidError};
use crate::prob::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// Step size for `t`.
    pub alpha: f64,
    /// Momentum coefficient on the relative objective change.
    pub beta: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// Number of updates `N` over which the linear lower bound ramps.
    pub total_steps: usize,
    /// Guard in the denominator of the relative change.
    pub epsilon: f64,
    /// `false` gives the plain linear schedule.
    pub adaptive: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            alpha: 5e-4,
            beta: 0.99,
            t_start: 0.4,
            t_end: 1.0,
            total_steps: 1000,
            epsilon: 1e-8,
            adaptive: true,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(TaidError::param("alpha", format!("{} must be > 0", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(TaidError::param("beta", format!("{} is outside [0, 1)", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.t_start) {
            return Err(TaidError::param(
                "t_start",
                format!("{} is outside [0, 1]", self.t_start),
            ));
        }
        if !(self.t_end > self.t_start && self.t_end <= 1.0) {
            return Err(TaidError::param(
                "t_end",
                format!("{} is outside (t_start, 1]", self.t_end),
            ));
        }
        if self.total_steps == 0 {
            return Err(TaidError::param("total_steps", "must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(TaidError::param("epsilon", format!("{} must be > 0", self.epsilon)));
        }
        Ok(())
    }

    /// `t_start + (t_end - t_start)·n/N`.
    pub fn linear_t(&self, n: usize) -> Result<f64> {
        if n > self.total_steps {
            return Err(TaidError::Range(format!(
                "step {n} is past the schedule length {}",
                self.total_steps
            )));
        }
        if n == self.total_steps {
            return Ok(self.t_end);
        }
        Ok(self.t_start + (self.t_end - self.t_start) * n as f64 / self.total_steps as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub t: f64,
    pub momentum: f64,
    /// Objective seen on the previous update; `None` before the first one.
    pub prev_objective: Option<f64>,
    /// Number of updates applied so far.
    pub step: usize,
}

impl SchedulerState {
    pub fn initial(config: &SchedulerConfig) -> Self {
        Self {
            t: config.t_start,
            momentum: 0.0,
            prev_objective: None,
            step: 0,
        }
    }

    /// Consumes the objective measured at the current `t` and returns the
    /// state for the next step.
    pub fn update(&self, config: &SchedulerConfig, objective_now: f64) -> Result<Self> {
        if !(objective_now.is_finite() && objective_now >= 0.0) {
            return Err(TaidError::InvalidInput(format!(
                "objective {objective_now} must be finite and non-negative"
            )));
        }
        let n = self.step + 1;
        let linear = config.linear_t(n)?;
        if !config.adaptive {
            return Ok(Self {
                t: linear,
                momentum: self.momentum,
                prev_objective: Some(objective_now),
                step: n,
            });
        }
        // No previous objective: a neutral zero change instead of ∞/∞.
        let delta = match self.prev_objective {
            Some(prev) => (prev - objective_now) / (prev + config.epsilon),
            None => 0.0,
        };
        let momentum = config.beta * self.momentum + (1.0 - config.beta) * delta;
        let step_size = config.alpha * sigmoid(momentum) * (1.0 - self.t);
        let t = (self.t + step_size).max(linear).min(config.t_end);
        Ok(Self {
            t,
            momentum,
            prev_objective: Some(objective_now),
            step: n,
        })
    }
}

/// A scheduler owning its configuration and state.
#[derive(Debug, Clone)]
pub struct TaidScheduler {
    config: SchedulerConfig,
    state: SchedulerState,
}

impl TaidScheduler {
    pub fn new(config: SchedulerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            state: SchedulerState::initial(&config),
            config,
        })
    }

    pub fn t(&self) -> f64 {
        self.state.t
    }

    pub fn state(&self) -> &SchedulerState {
        &self.state
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn step(&mut self, objective_now: f64) -> Result<f64> {
        self.state = self.state.update(&self.config, objective_now)?;
        Ok(self.state.t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg(total_steps: usize) -> SchedulerConfig {
        SchedulerConfig {
            total_steps,
            ..SchedulerConfig::default()
        }
    }

    #[test]
    fn linear_schedule() {
        let c = SchedulerConfig {
            t_start: 0.4,
            t_end: 1.0,
            total_steps: 10,
            ..SchedulerConfig::default()
        };
        assert_eq!(c.linear_t(0).unwrap(), 0.4);
        assert_eq!(c.linear_t(10).unwrap(), 1.0);
        assert_abs_diff_eq!(c.linear_t(5).unwrap(), 0.7, epsilon = 1e-15);
        assert!(matches!(c.linear_t(11), Err(TaidError::Range(_))));
    }

    #[test]
    fn hand_computed_update() {
        let c = cfg(100_000);
        let state = SchedulerState {
            t: 0.4,
            momentum: 0.0,
            prev_objective: Some(1.0),
            step: 0,
        };
        let next = state.update(&c, 0.5).unwrap();
        assert_abs_diff_eq!(next.momentum, 0.004_999_999_95, epsilon = 1e-12);
        assert_abs_diff_eq!(next.t, 0.400_150_374_999_215, epsilon = 1e-9);
        assert_eq!(next.step, 1);
        assert_eq!(next.prev_objective, Some(0.5));
    }

    #[test]
    fn first_update_is_neutral() {
        let c = cfg(100_000);
        let next = SchedulerState::initial(&c).update(&c, 3.0).unwrap();
        assert_eq!(next.momentum, 0.0);
        assert_abs_diff_eq!(next.t, 0.4 + 5e-4 * 0.5 * 0.6, epsilon = 1e-15);
    }

    #[test]
    fn saturates_at_t_end() {
        let c = cfg(10);
        let state = SchedulerState {
            t: 1.0,
            momentum: 3.0,
            prev_objective: Some(1.0),
            step: 4,
        };
        assert_eq!(state.update(&c, 0.1).unwrap().t, 1.0);
    }

    #[test]
    fn rising_loss_still_respects_linear_floor() {
        let c = SchedulerConfig {
            alpha: 5e-3,
            total_steps: 50,
            ..SchedulerConfig::default()
        };
        let mut s = TaidScheduler::new(c).unwrap();
        for n in 1..=50 {
            let t = s.step(n as f64).unwrap();
            assert!(s.state().momentum <= 0.0);
            assert!(t >= c.linear_t(n).unwrap());
        }
        assert_eq!(s.t(), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        let c = cfg(10);
        let s = SchedulerState::initial(&c);
        assert!(s.update(&c, -1.0).is_err());
        assert!(s.update(&c, f64::NAN).is_err());
        assert!(SchedulerConfig { beta: 1.0, ..c }.validate().is_err());
        assert!(SchedulerConfig { alpha: 0.0, ..c }.validate().is_err());
        assert!(SchedulerConfig { t_end: 0.4, ..c }.validate().is_err());
    }

    #[test]
    fn linear_mode_tracks_ramp() {
        let c = SchedulerConfig {
            adaptive: false,
            total_steps: 8,
            t_start: 0.2,
            ..SchedulerConfig::default()
        };
        let mut s = TaidScheduler::new(c).unwrap();
        for n in 1..=8 {
            assert_eq!(s.step(0.1).unwrap(), c.linear_t(n).unwrap());
        }
    }

    #[test]
    fn high_alpha_outpaces_linear_early() {
        let c = SchedulerConfig {
            alpha: 5e-3,
            total_steps: 1000,
            t_start: 0.0,
            ..SchedulerConfig::default()
        };
        let mut s = TaidScheduler::new(c).unwrap();
        let mut ahead = false;
        for n in 1..500 {
            let t = s.step(1.0 / n as f64).unwrap();
            ahead |= t > c.linear_t(n).unwrap();
        }
        assert!(ahead);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn monotone_bounded_dominant(losses in prop::collection::vec(0.0f64..10.0, 1..400),
                                     alpha in 1e-4f64..1e-1, t_start in 0.0f64..0.9) {
            let c = SchedulerConfig {
                alpha,
                t_start,
                total_steps: losses.len(),
                ..SchedulerConfig::default()
            };
            let mut s = TaidScheduler::new(c).unwrap();
            let mut prev = s.t();
            for (i, l) in losses.iter().enumerate() {
                let t = s.step(*l).unwrap();
                prop_assert!(t >= prev);
                prop_assert!(t >= c.t_start && t <= c.t_end);
                prop_assert!(t >= c.linear_t(i + 1).unwrap());
                prev = t;
            }
            prop_assert_eq!(s.t(), c.t_end);
        }
    }
}
