//! Gradient-descent distillation of a student towards a fixed teacher.
//!
//! Each step samples a batch of corpus positions, evaluates the configured
//! objective on the student/teacher logits there, pushes the logit gradient
//! into the student's parameters, and, for TAID modes, then feeds the
//! objective value to the scheduler to pick the next `t`.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TaidError};
use crate::models::{ConditionalModel, Corpus, Position, StudentModel};
use crate::objectives::{kl_probs, tvd_probs, Objective, TokenBatch, DEFAULT_MIXTURE_LAMBDA};
use crate::scheduler::{SchedulerConfig, TaidScheduler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    Kl,
    Rkl,
    Tvd,
    Gjsd,
    Skl,
    Srkl,
    Taid,
    /// TAID with the plain linear schedule.
    TaidLinear,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 8] = [
        ObjectiveKind::Kl,
        ObjectiveKind::Rkl,
        ObjectiveKind::Tvd,
        ObjectiveKind::Gjsd,
        ObjectiveKind::Skl,
        ObjectiveKind::Srkl,
        ObjectiveKind::Taid,
        ObjectiveKind::TaidLinear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::Kl => "kl",
            ObjectiveKind::Rkl => "rkl",
            ObjectiveKind::Tvd => "tvd",
            ObjectiveKind::Gjsd => "gjsd",
            ObjectiveKind::Skl => "skl",
            ObjectiveKind::Srkl => "srkl",
            ObjectiveKind::Taid => "taid",
            ObjectiveKind::TaidLinear => "taid_linear",
        }
    }

    pub fn is_taid(self) -> bool {
        matches!(self, ObjectiveKind::Taid | ObjectiveKind::TaidLinear)
    }

    fn objective(self, lambda: f64, t: f64) -> Objective {
        match self {
            ObjectiveKind::Kl => Objective::Kl,
            ObjectiveKind::Rkl => Objective::ReverseKl,
            ObjectiveKind::Tvd => Objective::TotalVariation,
            ObjectiveKind::Gjsd => Objective::GeneralizedJs { lambda },
            ObjectiveKind::Skl => Objective::SkewKl { lambda },
            ObjectiveKind::Srkl => Objective::SkewReverseKl { lambda },
            ObjectiveKind::Taid | ObjectiveKind::TaidLinear => Objective::Taid { t },
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectiveKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ObjectiveKind::ALL.iter().map(|k| k.as_str()).collect();
                format!("unknown objective `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    /// `θ ← θ - η·g`.
    GradientDescent,
    /// Adam with decoupled weight decay. `β₁ = 0.9`, `β₂ = 0.999`,
    /// `eps = 1e-8` are the usual library defaults.
    AdamW { weight_decay: f64 },
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Used by the TAID modes only. `total_steps` must equal `steps`.
    pub scheduler: SchedulerConfig,
    /// Mixture weight for GJSD and the skew objectives.
    pub objective_lambda: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveKind::Kl,
            learning_rate: 0.5,
            steps: 500,
            batch_size: 32,
            seed: 0,
            scheduler: SchedulerConfig {
                total_steps: 500,
                ..SchedulerConfig::default()
            },
            objective_lambda: DEFAULT_MIXTURE_LAMBDA,
            optimizer: Optimizer::GradientDescent,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TaidError::param(
                "learning_rate",
                format!("{} must be > 0", self.learning_rate),
            ));
        }
        if self.batch_size == 0 {
            return Err(TaidError::param("batch_size", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.objective_lambda) {
            return Err(TaidError::param(
                "objective_lambda",
                format!("{} is outside [0, 1]", self.objective_lambda),
            ));
        }
        if let Optimizer::AdamW { weight_decay } = self.optimizer {
            if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
                return Err(TaidError::param("weight_decay", "must be >= 0"));
            }
        }
        if self.objective.is_taid() && self.steps > 0 {
            self.scheduler.validate()?;
            if self.scheduler.total_steps != self.steps {
                return Err(TaidError::param(
                    "total_steps",
                    format!(
                        "scheduler length {} differs from training steps {}",
                        self.scheduler.total_steps, self.steps
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: usize,
    /// Value of the configured objective on this step's batch.
    pub objective: f64,
    /// Interpolation parameter after this step's scheduler update
    /// (`1.0` for non-TAID objectives).
    pub t: f64,
    pub kl_to_teacher: f64,
    pub rkl_to_teacher: f64,
    /// Frobenius norm of the objective gradient w.r.t. the batch logits.
    pub grad_norm: f64,
}

pub const STEP_CSV_HEADER: &str = "step,objective,t,kl_to_teacher,rkl_to_teacher,grad_norm";

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.objective, self.t, self.kl_to_teacher, self.rkl_to_teacher, self.grad_norm
        )
    }
}

/// Outcome of a run. On divergence `failure` holds the error and `records`
/// stop at the last finite step.
#[derive(Debug)]
pub struct TrainRun {
    pub student: StudentModel,
    pub records: Vec<StepRecord>,
    pub failure: Option<TaidError>,
}

/// Runs distillation, turning a divergence into an error.
pub fn train(
    teacher: &dyn ConditionalModel,
    student: StudentModel,
    corpus: &Corpus,
    config: &TrainConfig,
) -> Result<(StudentModel, Vec<StepRecord>)> {
    let run = train_run(teacher, student, corpus, config)?;
    match run.failure {
        Some(err) => Err(err),
        None => Ok((run.student, run.records)),
    }
}

/// Runs distillation and keeps partial results if a step diverges.
/// Configuration and shape problems are still reported as `Err`.
pub fn train_run(
    teacher: &dyn ConditionalModel,
    student: StudentModel,
    corpus: &Corpus,
    config: &TrainConfig,
) -> Result<TrainRun> {
    config.validate()?;
    let vocab = student.vocab();
    if teacher.vocab() != vocab {
        return Err(TaidError::Dimension {
            expected: vocab,
            got: teacher.vocab(),
        });
    }
    if corpus.vocab > vocab {
        return Err(TaidError::Dimension {
            expected: vocab,
            got: corpus.vocab,
        });
    }
    let mut trainer = Trainer::new(teacher, student, corpus, *config)?;
    let mut records = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        match trainer.step() {
            Ok(rec) => records.push(rec),
            Err(err) => {
                return Ok(TrainRun {
                    student: trainer.student,
                    records,
                    failure: Some(err),
                })
            }
        }
    }
    Ok(TrainRun {
        student: trainer.student,
        records,
        failure: None,
    })
}

/// Step-by-step driver behind [`train_run`].
pub struct Trainer<'a> {
    teacher: &'a dyn ConditionalModel,
    student: StudentModel,
    corpus: &'a Corpus,
    positions: Vec<Position>,
    config: TrainConfig,
    scheduler: Option<TaidScheduler>,
    rng: ChaCha8Rng,
    optimizer: OptimizerState,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        teacher: &'a dyn ConditionalModel,
        student: StudentModel,
        corpus: &'a Corpus,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let scheduler = if config.objective.is_taid() && config.steps > 0 {
            let sched = SchedulerConfig {
                adaptive: config.objective == ObjectiveKind::Taid,
                ..config.scheduler
            };
            Some(TaidScheduler::new(sched)?)
        } else {
            None
        };
        let n = student.param_count();
        Ok(Self {
            teacher,
            positions: corpus.positions(),
            corpus,
            scheduler,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            optimizer: OptimizerState::new(config.optimizer, n),
            student,
            config,
            step: 0,
        })
    }

    pub fn student(&self) -> &StudentModel {
        &self.student
    }

    pub fn into_student(self) -> StudentModel {
        self.student
    }

    /// Current interpolation parameter (`1.0` outside TAID modes).
    pub fn t(&self) -> f64 {
        self.scheduler.as_ref().map_or(1.0, TaidScheduler::t)
    }

    /// Draws the next batch of histories from the run's RNG.
    pub fn sample_batch(&mut self) -> Vec<Position> {
        (0..self.config.batch_size)
            .map(|_| self.positions[self.rng.random_range(0..self.positions.len())])
            .collect()
    }

    /// Student and teacher logits at the given positions.
    pub fn batch_at(&self, positions: &[Position]) -> Result<TokenBatch> {
        let vocab = self.student.vocab();
        let mut student = Array2::zeros((positions.len(), vocab));
        let mut teacher = Array2::zeros((positions.len(), vocab));
        for (i, &at) in positions.iter().enumerate() {
            let h = self.corpus.history(at);
            self.student
                .logits_into(h, student.row_mut(i).as_slice_mut().expect("standard layout"));
            self.teacher
                .logits_into(h, teacher.row_mut(i).as_slice_mut().expect("standard layout"));
        }
        TokenBatch::new(student, teacher)
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let n = self.step + 1;
        let positions = self.sample_batch();
        let batch = self.batch_at(&positions).map_err(|e| TaidError::Divergence {
            step: n,
            reason: e.to_string(),
        })?;
        let objective = self
            .config
            .objective
            .objective(self.config.objective_lambda, self.t());
        let value = objective.evaluate(&batch)?;
        let kl = Objective::Kl.evaluate(&batch)?.value;
        let rkl = Objective::ReverseKl.evaluate(&batch)?.value;
        let grad_norm = value.grad_norm();
        if !(value.value.is_finite() && grad_norm.is_finite()) {
            return Err(TaidError::Divergence {
                step: n,
                reason: format!("objective {} / gradient norm {grad_norm}", value.value),
            });
        }

        let mut grad = vec![0.0; self.student.param_count()];
        for (i, &at) in positions.iter().enumerate() {
            let row = value.grad.row(i);
            self.student.accumulate_grad(
                self.corpus.history(at),
                row.as_slice().expect("standard layout"),
                &mut grad,
            );
        }
        self.optimizer
            .apply(self.student.params_mut(), &grad, self.config.learning_rate);
        if self.student.params().iter().any(|p| !p.is_finite()) {
            return Err(TaidError::Divergence {
                step: n,
                reason: "parameters became non-finite".into(),
            });
        }

        let t = match self.scheduler.as_mut() {
            Some(s) => s.step(value.value.max(0.0))?,
            None => 1.0,
        };
        self.step = n;
        Ok(StepRecord {
            step: n,
            objective: value.value,
            t,
            kl_to_teacher: kl,
            rkl_to_teacher: rkl,
            grad_norm,
        })
    }
}

enum OptimizerState {
    Gd,
    AdamW {
        weight_decay: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl OptimizerState {
    fn new(opt: Optimizer, n: usize) -> Self {
        match opt {
            Optimizer::GradientDescent => OptimizerState::Gd,
            Optimizer::AdamW { weight_decay } => OptimizerState::AdamW {
                weight_decay,
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            OptimizerState::Gd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerState::AdamW {
                weight_decay,
                m,
                v,
                t,
            } => {
                *t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(*t);
                let bc2 = 1.0 - ADAM_BETA2.powi(*t);
                for i in 0..params.len() {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                    let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
                    params[i] -= lr * (update + *weight_decay * params[i]);
                }
            }
        }
    }
}

/// Mean divergences of a student from a reference over a set of histories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Mean `KL(reference ‖ student)`.
    pub mean_kl: f64,
    /// Mean `KL(student ‖ reference)`.
    pub mean_rkl: f64,
    pub mean_tvd: f64,
}

/// Averages the probability-space kernels (with the `1e-12` floor) over
/// `histories`, the reference playing the teacher's role.
pub fn evaluate(
    student: &dyn ConditionalModel,
    reference: &dyn ConditionalModel,
    histories: &[&[u32]],
) -> Result<EvalSummary> {
    if histories.is_empty() {
        return Err(TaidError::InvalidInput("evaluation needs at least one context".into()));
    }
    if student.vocab() != reference.vocab() {
        return Err(TaidError::Dimension {
            expected: reference.vocab(),
            got: student.vocab(),
        });
    }
    let (mut kl, mut rkl, mut tvd) = (0.0, 0.0, 0.0);
    for h in histories {
        let q = student.probs(h);
        let p = reference.probs(h);
        kl += kl_probs(p.as_slice(), q.as_slice());
        rkl += kl_probs(q.as_slice(), p.as_slice());
        tvd += tvd_probs(p.as_slice(), q.as_slice());
    }
    let n = histories.len() as f64;
    Ok(EvalSummary {
        mean_kl: kl / n,
        mean_rkl: rkl / n,
        mean_tvd: tvd / n,
    })
}

/// Up to `max` histories spread evenly over the corpus positions.
pub fn eval_histories(corpus: &Corpus, max: usize) -> Vec<&[u32]> {
    let positions = corpus.positions();
    let stride = positions.len().div_ceil(max.max(1)).max(1);
    positions
        .iter()
        .step_by(stride)
        .map(|&p| corpus.history(p))
        .collect()
}
