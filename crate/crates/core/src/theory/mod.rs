//! Kernel least-squares model of iterated distillation, used to study when
//! the student's fit collapses to zero.
//!
//! Multi-class problems reduce to one independent run of this engine per
//! class.

mod jacobi;
mod recursion;
mod spectrum;
mod trials;

pub use jacobi::{frobenius_norm, jacobi_eigen, off_diagonal_norm, SymmetricEigen};
pub use recursion::{
    corollary_initial_norm, norm, predicted_self_distill_collapse_step, run_recursion,
    taid_early_phase_bound, AlphaMode, SimConfig, SimMode, SimStep, SimTrace,
};
pub use spectrum::{gram_from_kernel, GramSpectrum, Kernel, JACOBI_TOLERANCE, PD_THRESHOLD};
pub use trials::{
    alpha_modes, evaluate_trial, floor_holds, generate_trials, late_phase_holds, run_suite,
    SuiteConfig, SuiteReport, Trial, TrialOutcome, FLOOR_REL_TOL, SUITE_CSV_HEADER,
};

use std::fmt::Write as _;

use serde::Serialize;

pub const TRACE_CSV_HEADER: &str = "step,lambda,r,norm_y,collapsed";

/// Metadata written alongside a trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceHeader {
    pub n: usize,
    pub epsilon: f64,
    pub horizon: usize,
    pub kappa: f64,
    pub mode: String,
    pub alpha_mode: String,
    pub seed: u64,
}

impl TraceHeader {
    pub fn new(spectrum: &GramSpectrum, config: &SimConfig, seed: u64) -> Self {
        Self {
            n: spectrum.n(),
            epsilon: config.epsilon(),
            horizon: config.horizon(),
            kappa: spectrum.kappa(),
            mode: config.mode.to_string(),
            alpha_mode: config.alpha.to_string(),
            seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("header serialises")
    }
}

/// One row per recorded step; `lambda` is empty on collapsed steps and
/// `norm_y` is the norm of the fit entering the step.
pub fn trace_csv(trace: &SimTrace) -> String {
    let mut out = String::new();
    writeln!(out, "{TRACE_CSV_HEADER}").unwrap();
    for s in &trace.steps {
        let lambda = s.lambda.map(|l| l.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", s.step, lambda, s.r, norm(&s.y), s.collapsed).unwrap();
    }
    out
}
