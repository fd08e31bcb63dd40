//! Config-driven experiment runner: single distillation runs, grid sweeps
//! over any config key, and the randomised theory suite.
//!
//! Output layout under the chosen directory:
//!
//! ```text
//! config.cfg            canonical copy of the effective configuration
//! manifest.json         config hash, seed, library version, per-run status
//! summary.csv           one row per run (distill and sweep)
//! runs/run_NNN/         trace.csv, run.json, teacher.txt, student.txt, eval_corpus.txt
//! trials.csv, traces/   theory suite results and example traces
//! ```
//!
//! Nothing time- or host-dependent is written, so re-running the same
//! configuration reproduces every file byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{model_report, ModelReport};
use crate::config::{invalid, split_list, Doc, OptionalUsize};
use crate::error::{Result, TaidError};
use crate::models::{
    bimodal_teacher, fit_teacher, write_corpus, write_model, write_tabular, ConditionalModel,
    ContextIndexer, Corpus, FeatureMap, LinearModel, MarkovSource, StudentModel, TabularModel,
};
use crate::scheduler::SchedulerConfig;
use crate::theory::{
    alpha_modes, generate_trials, run_recursion, run_suite, trace_csv, AlphaMode, SimConfig,
    SimMode, SuiteConfig, TraceHeader,
};
use crate::trainer::{
    eval_histories, evaluate, train_run, ObjectiveKind, Optimizer, StepRecord, TrainConfig,
    STEP_CSV_HEADER,
};

pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_COPY_FILE: &str = "config.cfg";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILURE_MARKER: &str = "FAILED";
pub const SUMMARY_CSV_HEADER: &str = "run,label,status,objective,teacher_order,teacher_params,student_params,steps,final_objective,final_t,objective_std,eval_kl_generator,eval_kl_teacher,eval_rkl_teacher,eval_tvd_teacher,head_mass,tail_mass";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Distill,
    Sweep,
    Theory,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Distill => "distill",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Theory => "theory",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "distill" => Ok(ExperimentKind::Distill),
            "sweep" => Ok(ExperimentKind::Sweep),
            "theory" => Ok(ExperimentKind::Theory),
            _ => Err(format!("unknown experiment kind `{s}` (expected distill, sweep or theory)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub vocab: usize,
    pub order: usize,
    pub zipf: f64,
    pub noise: f64,
    pub teacher_sequences: usize,
    pub teacher_length: usize,
    pub train_sequences: usize,
    pub train_length: usize,
    pub eval_sequences: usize,
    pub eval_length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TeacherSpec {
    /// Smoothed counts on a corpus drawn from the generator.
    Fit {
        order: usize,
        contexts: Option<usize>,
        smoothing: f64,
    },
    /// Zipf backbone with two boosted modes per context.
    Bimodal {
        order: usize,
        contexts: Option<usize>,
        zipf: f64,
        mode_boost: f64,
        jitter: f64,
    },
}

impl TeacherSpec {
    pub fn order(&self) -> usize {
        match *self {
            TeacherSpec::Fit { order, .. } | TeacherSpec::Bimodal { order, .. } => order,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StudentSpec {
    Tabular { order: usize, contexts: Option<usize> },
    Linear { features: FeatureSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeatureSpec {
    Bias,
    LastToken,
    Hashed { order: usize, buckets: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub contexts: usize,
    pub head_k: usize,
    pub tail_lo: f64,
    pub tail_hi: f64,
}

/// Everything needed to reproduce one distillation run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub teacher: TeacherSpec,
    pub student: StudentSpec,
    pub train: TrainConfig,
    pub eval: EvalSpec,
}

impl RunConfig {
    /// Reads every run key from `doc` (defaults fill the gaps) and rejects
    /// anything left over.
    pub fn from_doc(mut doc: Doc) -> Result<Self> {
        let seed = doc.take_or("experiment.seed", 0u64)?;
        let vocab_line = doc.line_of("corpus.vocab");
        let corpus = CorpusSpec {
            vocab: doc.take_or("corpus.vocab", 16usize)?,
            order: doc.take_or("corpus.order", 2usize)?,
            zipf: doc.take_or("corpus.zipf", 1.0)?,
            noise: doc.take_or("corpus.noise", 1.0)?,
            teacher_sequences: doc.take_or("corpus.teacher_sequences", 4usize)?,
            teacher_length: doc.take_or("corpus.teacher_length", 5000usize)?,
            train_sequences: doc.take_or("corpus.train_sequences", 4usize)?,
            train_length: doc.take_or("corpus.train_length", 2000usize)?,
            eval_sequences: doc.take_or("corpus.eval_sequences", 2usize)?,
            eval_length: doc.take_or("corpus.eval_length", 2000usize)?,
        };
        if corpus.vocab < 2 {
            return Err(invalid(vocab_line, "corpus.vocab", "must be at least 2"));
        }
        for (key, v) in [
            ("corpus.teacher_sequences", corpus.teacher_sequences),
            ("corpus.teacher_length", corpus.teacher_length),
            ("corpus.train_sequences", corpus.train_sequences),
            ("corpus.train_length", corpus.train_length),
            ("corpus.eval_sequences", corpus.eval_sequences),
            ("corpus.eval_length", corpus.eval_length),
        ] {
            if v == 0 {
                return Err(invalid(0, key, "must be positive"));
            }
        }

        let kind_line = doc.line_of("teacher.kind");
        let teacher_kind: String = doc.take_or("teacher.kind", "fit".to_string())?;
        let t_order = doc.take_or("teacher.order", 2usize)?;
        let t_contexts = doc.take_or("teacher.contexts", OptionalUsize(None))?.0;
        let teacher = match teacher_kind.as_str() {
            "fit" => TeacherSpec::Fit {
                order: t_order,
                contexts: t_contexts,
                smoothing: doc.take_or("teacher.smoothing", 0.05)?,
            },
            "bimodal" => TeacherSpec::Bimodal {
                order: t_order,
                contexts: t_contexts,
                zipf: doc.take_or("teacher.zipf", 1.0)?,
                mode_boost: doc.take_or("teacher.mode_boost", 3.0)?,
                jitter: doc.take_or("teacher.jitter", 0.5)?,
            },
            other => {
                return Err(invalid(kind_line, "teacher.kind", format!("unknown teacher kind `{other}` (fit or bimodal)")))
            }
        };

        let kind_line = doc.line_of("student.kind");
        let student_kind: String = doc.take_or("student.kind", "tabular".to_string())?;
        let student = match student_kind.as_str() {
            "tabular" => StudentSpec::Tabular {
                order: doc.take_or("student.order", 1usize)?,
                contexts: doc.take_or("student.contexts", OptionalUsize(None))?.0,
            },
            "linear" => {
                let line = doc.line_of("student.features");
                let features: String = doc.take_or("student.features", "last_token".to_string())?;
                let features = match features.as_str() {
                    "bias" => FeatureSpec::Bias,
                    "last_token" => FeatureSpec::LastToken,
                    "hashed" => FeatureSpec::Hashed {
                        order: doc.take_or("student.feature_order", 2usize)?,
                        buckets: doc.take_or("student.buckets", 64usize)?,
                    },
                    other => {
                        return Err(invalid(
                            line,
                            "student.features",
                            format!("unknown feature map `{other}` (bias, last_token or hashed)"),
                        ))
                    }
                };
                StudentSpec::Linear { features }
            }
            other => {
                return Err(invalid(kind_line, "student.kind", format!("unknown student kind `{other}` (tabular or linear)")))
            }
        };

        let steps = doc.take_or("train.steps", 300usize)?;
        let opt_line = doc.line_of("train.optimizer");
        let optimizer: String = doc.take_or("train.optimizer", "gd".to_string())?;
        let optimizer = match optimizer.as_str() {
            "gd" => Optimizer::GradientDescent,
            "adamw" => Optimizer::AdamW {
                weight_decay: doc.take_or("train.weight_decay", 0.0)?,
            },
            other => return Err(invalid(opt_line, "train.optimizer", format!("unknown optimizer `{other}` (gd or adamw)"))),
        };
        let defaults = SchedulerConfig::default();
        let objective = match (doc.take_or("train.objective", ObjectiveKind::Taid)?, doc.take_or("taid.adaptive", true)?) {
            (ObjectiveKind::Taid, false) => ObjectiveKind::TaidLinear,
            (kind, _) => kind,
        };
        let train = TrainConfig {
            objective,
            learning_rate: doc.take_or("train.learning_rate", 1.0)?,
            steps,
            batch_size: doc.take_or("train.batch_size", 32usize)?,
            seed: 0,
            scheduler: SchedulerConfig {
                alpha: doc.take_or("taid.alpha", defaults.alpha)?,
                beta: doc.take_or("taid.beta", defaults.beta)?,
                t_start: doc.take_or("taid.t_start", defaults.t_start)?,
                t_end: doc.take_or("taid.t_end", defaults.t_end)?,
                total_steps: steps,
                epsilon: doc.take_or("taid.epsilon", defaults.epsilon)?,
                adaptive: true,
            },
            objective_lambda: doc.take_or("train.lambda", crate::objectives::DEFAULT_MIXTURE_LAMBDA)?,
            optimizer,
        };
        let train = TrainConfig {
            seed: derive_seed(seed, 5),
            ..train
        };
        train
            .validate()
            .map_err(|e| invalid(0, "train", e.to_string()))?;

        let eval = EvalSpec {
            contexts: doc.take_or("eval.contexts", 1000usize)?,
            head_k: doc.take_or("eval.head_k", 10usize.min(corpus.vocab - 1))?,
            tail_lo: doc.take_or("eval.tail_lo", 80.0)?,
            tail_hi: doc.take_or("eval.tail_hi", 100.0)?,
        };
        if eval.contexts == 0 {
            return Err(invalid(0, "eval.contexts", "must be positive"));
        }
        if eval.head_k >= corpus.vocab {
            return Err(invalid(0, "eval.head_k", format!("must be below corpus.vocab = {}", corpus.vocab)));
        }
        let (lo, hi) = crate::analysis::tail_ranks(corpus.vocab, eval.tail_lo, eval.tail_hi);
        if !(0.0..=100.0).contains(&eval.tail_lo) || !(eval.tail_lo..=100.0).contains(&eval.tail_hi) {
            return Err(invalid(0, "eval.tail_lo", "tail band must satisfy 0 <= tail_lo <= tail_hi <= 100"));
        }
        if lo < eval.head_k && hi > lo {
            return Err(invalid(0, "eval.head_k", "head ranks overlap the tail band"));
        }
        doc.ensure_consumed()?;
        Ok(Self {
            seed,
            corpus,
            teacher,
            student,
            train,
            eval,
        })
    }
}

/// Deterministic sub-seed for the `k`-th random stream of a run.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One grid axis: `sweep.<key> = v1, v2, ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Axis {
    pub key: String,
    pub line: usize,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub id: String,
    pub label: String,
    pub overrides: Vec<(String, String)>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub name: String,
    pub seed: u64,
    /// Output directory named by `experiment.out`, if any.
    pub out: Option<String>,
    /// Run keys (everything except `experiment.kind`, `experiment.name`
    /// and the sweep axes).
    base: Doc,
    pub axes: Vec<Axis>,
    pub theory: Option<SuiteConfig>,
    runs: Vec<PlannedRun>,
}

impl ExperimentConfig {
    /// Parses and fully validates a document. `kind` comes from the
    /// command line; a conflicting `experiment.kind` is an error.
    pub fn parse(text: &str, kind: ExperimentKind, seed_override: Option<u64>) -> Result<Self> {
        let mut doc = Doc::parse(text)?;
        if let Some(seed) = seed_override {
            doc.set("experiment.seed", seed.to_string(), 0);
        }
        let kind_line = doc.line_of("experiment.kind");
        if let Some(declared) = doc.take::<ExperimentKind>("experiment.kind")? {
            if declared != kind {
                return Err(invalid(
                    kind_line,
                    "experiment.kind",
                    format!("config declares `{declared}` but `{kind}` was requested"),
                ));
            }
        }
        let name = doc.take_or("experiment.name", "experiment".to_string())?;
        let out = doc.take::<String>("experiment.out")?;
        let seed = {
            let mut probe = doc.clone();
            probe.take_or("experiment.seed", 0u64)?
        };

        let mut cfg = Self {
            kind,
            name,
            seed,
            out,
            base: Doc::default(),
            axes: Vec::new(),
            theory: None,
            runs: Vec::new(),
        };
        match kind {
            ExperimentKind::Theory => {
                doc.remove("experiment.seed");
                let d = SuiteConfig::default();
                let suite = SuiteConfig {
                    seed,
                    trials: doc.take_or("theory.trials", d.trials)?,
                    n_min: doc.take_or("theory.n_min", d.n_min)?,
                    n_max: doc.take_or("theory.n_max", d.n_max)?,
                    kappa_min: doc.take_or("theory.kappa_min", d.kappa_min)?,
                    kappa_max: doc.take_or("theory.kappa_max", d.kappa_max)?,
                    horizon_min: doc.take_or("theory.horizon_min", d.horizon_min)?,
                    horizon_max: doc.take_or("theory.horizon_max", d.horizon_max)?,
                    r0_min: doc.take_or("theory.r0_min", d.r0_min)?,
                    r0_max: doc.take_or("theory.r0_max", d.r0_max)?,
                    corollary_factor: doc.take_or("theory.corollary_factor", d.corollary_factor)?,
                };
                suite.validate().map_err(|e| invalid(0, "theory", e.to_string()))?;
                doc.ensure_consumed()?;
                cfg.theory = Some(suite);
            }
            ExperimentKind::Distill | ExperimentKind::Sweep => {
                let axes = doc.take_prefixed("sweep");
                if kind == ExperimentKind::Distill {
                    if let Some((k, e)) = axes.first() {
                        return Err(invalid(e.line, &format!("sweep.{k}"), "sweep axes need the `sweep` command"));
                    }
                }
                cfg.axes = axes
                    .into_iter()
                    .map(|(key, e)| Axis {
                        key,
                        line: e.line,
                        values: split_list(&e.value),
                    })
                    .collect();
                cfg.axes.sort_by_key(|a| a.line);
                cfg.base = doc;
                cfg.runs = cfg.plan_runs()?;
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path, kind: ExperimentKind, seed_override: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| TaidError::io(path, e))?;
        Self::parse(&text, kind, seed_override)
    }

    pub fn runs(&self) -> &[PlannedRun] {
        &self.runs
    }

    /// A distill experiment is one run; a sweep is the grid product of its
    /// axes (none, or an empty axis, means no runs).
    fn plan_runs(&self) -> Result<Vec<PlannedRun>> {
        let combos: Vec<Vec<(usize, &str)>> = match self.kind {
            ExperimentKind::Distill => vec![Vec::new()],
            ExperimentKind::Sweep if self.axes.is_empty() => Vec::new(),
            _ => {
                let mut combos = vec![Vec::new()];
                for (a, axis) in self.axes.iter().enumerate() {
                    let mut next = Vec::new();
                    for prefix in &combos {
                        for v in &axis.values {
                            let mut c: Vec<(usize, &str)> = prefix.clone();
                            c.push((a, v.as_str()));
                            next.push(c);
                        }
                    }
                    combos = next;
                }
                combos
            }
        };
        combos
            .into_iter()
            .enumerate()
            .map(|(i, combo)| {
                let mut doc = self.base.clone();
                let mut overrides = Vec::new();
                for (a, value) in combo {
                    let axis = &self.axes[a];
                    doc.set(&axis.key, value, axis.line);
                    overrides.push((axis.key.clone(), value.to_string()));
                }
                let config = RunConfig::from_doc(doc).map_err(|e| match e {
                    TaidError::Config { line, key, reason } if !overrides.is_empty() => TaidError::Config {
                        line,
                        key,
                        reason: format!("{reason} (in sweep run {})", label_of(&overrides)),
                    },
                    other => other,
                })?;
                Ok(PlannedRun {
                    id: format!("run_{i:03}"),
                    label: label_of(&overrides),
                    overrides,
                    config,
                })
            })
            .collect()
    }

    /// Sorted effective configuration, the text that is hashed.
    pub fn canonical_text(&self) -> String {
        let mut doc = self.base.clone();
        doc.set("experiment.kind", self.kind.to_string(), 0);
        doc.set("experiment.name", self.name.clone(), 0);
        doc.set("experiment.seed", self.seed.to_string(), 0);
        for axis in &self.axes {
            doc.set(&format!("sweep.{}", axis.key), axis.values.join(", "), 0);
        }
        if let Some(s) = &self.theory {
            for (k, v) in [
                ("trials", s.trials.to_string()),
                ("n_min", s.n_min.to_string()),
                ("n_max", s.n_max.to_string()),
                ("kappa_min", s.kappa_min.to_string()),
                ("kappa_max", s.kappa_max.to_string()),
                ("horizon_min", s.horizon_min.to_string()),
                ("horizon_max", s.horizon_max.to_string()),
                ("r0_min", s.r0_min.to_string()),
                ("r0_max", s.r0_max.to_string()),
                ("corollary_factor", s.corollary_factor.to_string()),
            ] {
                doc.set(&format!("theory.{k}"), v, 0);
            }
        }
        doc.canonical_text()
    }
}

fn label_of(overrides: &[(String, String)]) -> String {
    if overrides.is_empty() {
        return "base".into();
    }
    overrides
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Models and data built for one run.
pub struct RunInputs {
    pub generator: MarkovSource,
    pub teacher: TabularModel,
    pub student: StudentModel,
    pub train_corpus: Corpus,
    pub eval_corpus: Corpus,
}

pub fn build_inputs(cfg: &RunConfig) -> Result<RunInputs> {
    let c = &cfg.corpus;
    let generator = MarkovSource::new(derive_seed(cfg.seed, 0), c.vocab, c.order, c.zipf, c.noise)?;
    let train_corpus = generator.sample(derive_seed(cfg.seed, 2), c.train_length, c.train_sequences)?;
    let eval_corpus = generator.sample(derive_seed(cfg.seed, 3), c.eval_length, c.eval_sequences)?;
    let teacher = match cfg.teacher {
        TeacherSpec::Fit {
            order,
            contexts,
            smoothing,
        } => {
            let data = generator.sample(derive_seed(cfg.seed, 1), c.teacher_length, c.teacher_sequences)?;
            let ix = ContextIndexer::new(c.vocab, order, contexts, derive_seed(cfg.seed, 6))?;
            fit_teacher(&data, ix, smoothing)?
        }
        TeacherSpec::Bimodal {
            order,
            contexts,
            zipf,
            mode_boost,
            jitter,
        } => {
            let ix = ContextIndexer::new(c.vocab, order, contexts, derive_seed(cfg.seed, 6))?;
            bimodal_teacher(derive_seed(cfg.seed, 4), ix, zipf, mode_boost, jitter)?
        }
    };
    let student = match cfg.student {
        StudentSpec::Tabular { order, contexts } => {
            let ix = ContextIndexer::new(c.vocab, order, contexts, derive_seed(cfg.seed, 7))?;
            StudentModel::Tabular(TabularModel::uniform(ix))
        }
        StudentSpec::Linear { features } => {
            let fmap = match features {
                FeatureSpec::Bias => FeatureMap::Bias,
                FeatureSpec::LastToken => FeatureMap::LastToken { vocab: c.vocab },
                FeatureSpec::Hashed { order, buckets } => FeatureMap::HashedContext {
                    order,
                    buckets,
                    seed: derive_seed(cfg.seed, 7),
                },
            };
            StudentModel::Linear(LinearModel::zeros(fmap, c.vocab)?)
        }
    };
    Ok(RunInputs {
        generator,
        teacher,
        student,
        train_corpus,
        eval_corpus,
    })
}

/// Headline numbers of a finished run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub objective: ObjectiveKind,
    pub teacher_order: usize,
    pub teacher_params: usize,
    pub student_params: usize,
    pub steps: usize,
    pub final_objective: f64,
    pub final_t: f64,
    /// Population standard deviation of the per-step objective.
    pub objective_std: f64,
    pub eval_kl_generator: f64,
    pub eval_kl_teacher: f64,
    pub eval_rkl_teacher: f64,
    pub eval_tvd_teacher: f64,
    pub report: ModelReport,
}

pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Result of executing one planned run in memory.
pub struct RunOutcome {
    pub records: Vec<StepRecord>,
    pub failure: Option<String>,
    pub metrics: Option<RunMetrics>,
    pub inputs: Option<RunInputs>,
}

/// Builds inputs, trains and evaluates. Never panics on bad numerics: a
/// divergence is reported in `failure` with the records gathered so far.
pub fn execute_run(cfg: &RunConfig) -> RunOutcome {
    let mut inputs = match build_inputs(cfg) {
        Ok(i) => i,
        Err(e) => {
            return RunOutcome {
                records: Vec::new(),
                failure: Some(e.to_string()),
                metrics: None,
                inputs: None,
            }
        }
    };
    let student = inputs.student.clone();
    let run = match train_run(&inputs.teacher, student, &inputs.train_corpus, &cfg.train) {
        Ok(r) => r,
        Err(e) => {
            return RunOutcome {
                records: Vec::new(),
                failure: Some(e.to_string()),
                metrics: None,
                inputs: Some(inputs),
            }
        }
    };
    inputs.student = run.student;
    if let Some(err) = run.failure {
        return RunOutcome {
            records: run.records,
            failure: Some(err.to_string()),
            metrics: None,
            inputs: Some(inputs),
        };
    }
    match run_metrics(cfg, &inputs, &run.records) {
        Ok(metrics) => RunOutcome {
            records: run.records,
            failure: None,
            metrics: Some(metrics),
            inputs: Some(inputs),
        },
        Err(e) => RunOutcome {
            records: run.records,
            failure: Some(e.to_string()),
            metrics: None,
            inputs: Some(inputs),
        },
    }
}

fn run_metrics(cfg: &RunConfig, inputs: &RunInputs, records: &[StepRecord]) -> Result<RunMetrics> {
    let histories = eval_histories(&inputs.eval_corpus, cfg.eval.contexts);
    let vs_generator = evaluate(&inputs.student, &inputs.generator, &histories)?;
    let vs_teacher = evaluate(&inputs.student, &inputs.teacher, &histories)?;
    let report = model_report(
        &inputs.student,
        &inputs.teacher,
        &inputs.eval_corpus,
        cfg.eval.contexts,
        cfg.eval.head_k,
        (cfg.eval.tail_lo, cfg.eval.tail_hi),
    )?;
    let objectives: Vec<f64> = records.iter().map(|r| r.objective).collect();
    let last = records.last();
    Ok(RunMetrics {
        objective: cfg.train.objective,
        teacher_order: cfg.teacher.order(),
        teacher_params: inputs.teacher.logits().len(),
        student_params: inputs.student.param_count(),
        steps: records.len(),
        final_objective: last.map_or(f64::NAN, |r| r.objective),
        final_t: last.map_or(if cfg.train.objective.is_taid() { cfg.train.scheduler.t_start } else { 1.0 }, |r| r.t),
        objective_std: std_dev(&objectives),
        eval_kl_generator: vs_generator.mean_kl,
        eval_kl_teacher: vs_teacher.mean_kl,
        eval_rkl_teacher: vs_teacher.mean_rkl,
        eval_tvd_teacher: vs_teacher.mean_tvd,
        report,
    })
}

pub fn trace_csv_text(records: &[StepRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(STEP_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub id: String,
    pub label: String,
    pub overrides: BTreeMap<String, String>,
    pub status: String,
    pub failure: Option<String>,
    pub trace: String,
    pub metrics: Option<RunMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub trials: usize,
    pub passed: usize,
    pub floor_failures: usize,
    pub late_phase_failures: usize,
    pub corollary_failures: usize,
    pub self_distill_guarantee_failures: usize,
    pub eventual_collapse_checked: usize,
    pub eventual_collapse_failures: usize,
    pub trials_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub kind: ExperimentKind,
    pub library_version: String,
    pub seed: u64,
    pub config_file: String,
    pub config_hash: String,
    pub status: String,
    pub runs: Vec<RunEntry>,
    pub theory: Option<TheorySummary>,
}

impl Manifest {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| TaidError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| TaidError::Format {
            path,
            reason: e.to_string(),
        })
    }

    /// Recomputes the hash of the stored config copy.
    pub fn verify(&self, dir: &Path) -> Result<bool> {
        let path = dir.join(&self.config_file);
        let bytes = fs::read(&path).map_err(|e| TaidError::io(&path, e))?;
        Ok(sha256_hex(&bytes) == self.config_hash)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker-pool size; `None` lets the pool pick.
    pub threads: Option<usize>,
    /// Progress lines on stderr.
    pub verbose: bool,
}

/// Reads a thread cap from `TAIDLAB_THREADS`.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("TAIDLAB_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(invalid(0, "TAIDLAB_THREADS", format!("`{v}` is not a positive integer"))),
        },
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| TaidError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| TaidError::io(path, e))
}

/// Executes the experiment and writes all artefacts under `out`. The
/// returned manifest's status is `failed` if any run diverged or any
/// theory trial failed; the files are written either way.
pub fn run_experiment(config: &ExperimentConfig, out: &Path, options: &RunOptions) -> Result<Manifest> {
    create_dir(out)?;
    let runs_dir = out.join("runs");
    // only clear a directory this tool wrote earlier
    if runs_dir.is_dir() && out.join(MANIFEST_FILE).is_file() {
        fs::remove_dir_all(&runs_dir).map_err(|e| TaidError::io(&runs_dir, e))?;
    }
    let canonical = config.canonical_text();
    write(&out.join(CONFIG_COPY_FILE), &canonical)?;
    let config_hash = sha256_hex(canonical.as_bytes());

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = options.threads {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| TaidError::InvalidInput(format!("cannot start worker pool: {e}")))?
    };

    let mut manifest = Manifest {
        name: config.name.clone(),
        kind: config.kind,
        library_version: LIBRARY_VERSION.to_string(),
        seed: config.seed,
        config_file: CONFIG_COPY_FILE.to_string(),
        config_hash,
        status: "ok".into(),
        runs: Vec::new(),
        theory: None,
    };

    match config.kind {
        ExperimentKind::Theory => {
            let suite = config.theory.expect("theory config present");
            let summary = pool.install(|| run_theory(&suite, out))?;
            if summary.passed != summary.trials {
                manifest.status = "failed".into();
            }
            if options.verbose {
                eprintln!("theory: {}/{} trials passed", summary.passed, summary.trials);
            }
            manifest.theory = Some(summary);
        }
        ExperimentKind::Distill | ExperimentKind::Sweep => {
            if !config.runs.is_empty() {
                create_dir(&runs_dir)?;
            }
            let entries: Vec<Result<RunEntry>> = pool.install(|| {
                config
                    .runs
                    .par_iter()
                    .map(|planned| {
                        let entry = run_and_write(planned, &runs_dir)?;
                        if options.verbose {
                            eprintln!("{} [{}]: {}", planned.id, planned.label, entry.status);
                        }
                        Ok(entry)
                    })
                    .collect()
            });
            let entries = entries.into_iter().collect::<Result<Vec<_>>>()?;
            if entries.iter().any(|e| e.failure.is_some()) {
                manifest.status = "failed".into();
            }
            write(&out.join(SUMMARY_FILE), summary_csv(&entries))?;
            manifest.runs = entries;
        }
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    write(&out.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

fn run_and_write(planned: &PlannedRun, runs_dir: &Path) -> Result<RunEntry> {
    let dir = runs_dir.join(&planned.id);
    create_dir(&dir)?;
    let outcome = execute_run(&planned.config);
    write(&dir.join("trace.csv"), trace_csv_text(&outcome.records))?;
    if let Some(inputs) = &outcome.inputs {
        write_tabular(&dir.join("teacher.txt"), &inputs.teacher)?;
        write_model(&dir.join("student.txt"), &inputs.student)?;
        write_corpus(&dir.join("eval_corpus.txt"), &inputs.eval_corpus)?;
    }
    let marker = dir.join(FAILURE_MARKER);
    match &outcome.failure {
        Some(reason) => write(&marker, format!("{reason}\n"))?,
        None if marker.exists() => fs::remove_file(&marker).map_err(|e| TaidError::io(&marker, e))?,
        None => {}
    }
    let entry = RunEntry {
        id: planned.id.clone(),
        label: planned.label.clone(),
        overrides: planned.overrides.iter().cloned().collect(),
        status: if outcome.failure.is_some() { "failed" } else { "ok" }.into(),
        failure: outcome.failure,
        trace: format!("runs/{}/trace.csv", planned.id),
        metrics: outcome.metrics,
    };
    let json = serde_json::to_string_pretty(&entry).expect("run entry serialises");
    write(&dir.join("run.json"), json + "\n")?;
    Ok(entry)
}

fn summary_csv(entries: &[RunEntry]) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_CSV_HEADER);
    out.push('\n');
    for e in entries {
        let label = e.label.replace(',', ";");
        match &e.metrics {
            Some(m) => out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                e.id,
                label,
                e.status,
                m.objective,
                m.teacher_order,
                m.teacher_params,
                m.student_params,
                m.steps,
                m.final_objective,
                m.final_t,
                m.objective_std,
                m.eval_kl_generator,
                m.eval_kl_teacher,
                m.eval_rkl_teacher,
                m.eval_tvd_teacher,
                m.report.mass.head_mass,
                m.report.mass.tail_mass
            )),
            None => out.push_str(&format!("{},{},{}{}\n", e.id, label, e.status, ",".repeat(14))),
        }
    }
    out
}

fn run_theory(suite: &SuiteConfig, out: &Path) -> Result<TheorySummary> {
    let report = run_suite(suite)?;
    write(&out.join("trials.csv"), report.csv())?;

    // example traces for the first trial, one per mode
    let traces = out.join("traces");
    create_dir(&traces)?;
    if let Some(trial) = generate_trials(&SuiteConfig { trials: 1, ..*suite })?.into_iter().next() {
        let taid_alpha = alpha_modes(&trial.spectrum)[0];
        for (name, mode, alpha) in [
            ("taid", SimMode::Taid, taid_alpha),
            ("self_distill", SimMode::SelfDistill, AlphaMode::DMax),
        ] {
            let cfg = SimConfig::new(trial.y0.clone(), trial.epsilon, trial.horizon, alpha, mode)?;
            let trace = run_recursion(&trial.spectrum, &cfg)?;
            write(&traces.join(format!("{name}.csv")), trace_csv(&trace))?;
            let header = TraceHeader::new(&trial.spectrum, &cfg, suite.seed);
            write(&traces.join(format!("{name}.json")), header.to_json() + "\n")?;
        }
    }

    let o = &report.outcomes;
    Ok(TheorySummary {
        trials: o.len(),
        passed: report.passed_count(),
        floor_failures: o.iter().filter(|x| !x.floor_ok).count(),
        late_phase_failures: o.iter().filter(|x| !x.late_phase_ok).count(),
        corollary_failures: o.iter().filter(|x| !x.corollary_ok).count(),
        self_distill_guarantee_failures: o.iter().filter(|x| !x.self_distill_guarantee_ok).count(),
        eventual_collapse_checked: o.iter().filter(|x| x.eventual_collapse_applies).count(),
        eventual_collapse_failures: o.iter().filter(|x| !x.eventual_collapse_ok()).count(),
        trials_file: "trials.csv".into(),
    })
}

/// Loads a saved run directory for offline analysis.
pub fn load_run(dir: &Path) -> Result<(TabularModel, StudentModel, Corpus)> {
    let teacher = crate::models::read_tabular(&dir.join("teacher.txt"))?;
    let student = crate::models::read_model(&dir.join("student.txt"))?;
    let corpus = crate::models::read_corpus(&dir.join("eval_corpus.txt"))?;
    if teacher.vocab() != student.vocab() {
        return Err(TaidError::Dimension {
            expected: teacher.vocab(),
            got: student.vocab(),
        });
    }
    Ok((teacher, student, corpus))
}

/// Every run directory under an experiment output, in id order.
pub fn run_dirs(out: &Path) -> Result<Vec<PathBuf>> {
    let runs = out.join("runs");
    let mut dirs: Vec<PathBuf> = fs::read_dir(&runs)
        .map_err(|e| TaidError::io(&runs, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub const ANALYSIS_FILE: &str = "analysis.csv";
pub const ANALYSIS_CSV_HEADER: &str = "run,contexts,head_mass,tail_mass,student_entropy,teacher_entropy,student_target_prob,teacher_target_prob";

/// Settings for re-analysing saved models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzeOptions {
    pub contexts: usize,
    /// `None` means `min(10, V - 1)`.
    pub head_k: Option<usize>,
    pub tail_range: (f64, f64),
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            contexts: 1000,
            head_k: None,
            tail_range: crate::analysis::DEFAULT_TAIL_RANGE,
        }
    }
}

/// Recomputes mass and entropy diagnostics from saved models. `path` is an
/// experiment output (every run with saved models) or one run directory.
/// Returns the CSV text.
pub fn analyze_saved(path: &Path, options: &AnalyzeOptions) -> Result<String> {
    let dirs: Vec<PathBuf> = if path.join("runs").is_dir() {
        run_dirs(path)?
            .into_iter()
            .filter(|d| d.join("student.txt").is_file())
            .collect()
    } else {
        vec![path.to_path_buf()]
    };
    if dirs.is_empty() {
        return Err(TaidError::InvalidInput(format!("no saved models under {}", path.display())));
    }
    let mut out = String::from(ANALYSIS_CSV_HEADER);
    out.push('\n');
    for dir in dirs {
        let (teacher, student, corpus) = load_run(&dir)?;
        let head_k = options.head_k.unwrap_or(10.min(teacher.vocab().saturating_sub(1)));
        let r = model_report(&student, &teacher, &corpus, options.contexts, head_k, options.tail_range)?;
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("run");
        out.push_str(&format!(
            "{name},{},{},{},{},{},{},{}\n",
            r.contexts,
            r.mass.head_mass,
            r.mass.tail_mass,
            r.student_entropy,
            r.teacher_entropy,
            r.student_target_prob,
            r.teacher_target_prob
        ));
    }
    Ok(out)
}
