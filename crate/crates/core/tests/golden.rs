//! Column names and order of every CSV the runner writes, checked against
//! the files in `tests/golden/`.

use std::fs;
use std::path::Path;

use taidlab::experiment::{
    analyze_saved, run_experiment, AnalyzeOptions, ExperimentConfig, ExperimentKind, Manifest,
    RunOptions, SUMMARY_FILE,
};

const SWEEP: &str = "\
experiment.name = golden
experiment.seed = 5
corpus.vocab = 8
corpus.order = 1
teacher.kind = fit
teacher.order = 1
student.kind = tabular
student.order = 1
train.steps = 20
sweep.train.objective = taid, kl
";

const THEORY: &str = "\
experiment.name = golden_theory
experiment.seed = 9
theory.trials = 3
theory.n_min = 4
theory.n_max = 6
theory.horizon_min = 10
theory.horizon_max = 12
";

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    fs::read_to_string(path).unwrap().trim_end().to_string()
}

fn header(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.lines().next().unwrap().to_string()
}

#[test]
fn sweep_and_analysis_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(SWEEP, ExperimentKind::Sweep, None).unwrap();
    let manifest = run_experiment(&cfg, dir.path(), &RunOptions::default()).unwrap();
    assert!(manifest.ok());
    assert_eq!(header(&dir.path().join(SUMMARY_FILE)), golden("summary.header"));
    for run in &manifest.runs {
        assert_eq!(header(&dir.path().join(&run.trace)), golden("trace.header"));
    }
    let csv = analyze_saved(dir.path(), &AnalyzeOptions::default()).unwrap();
    assert_eq!(csv.lines().next().unwrap(), golden("analysis.header"));
    assert_eq!(csv.lines().count(), 1 + manifest.runs.len());
}

#[test]
fn theory_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(THEORY, ExperimentKind::Theory, None).unwrap();
    let manifest = run_experiment(&cfg, dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(manifest.theory.as_ref().unwrap().trials, 3);
    assert_eq!(header(&dir.path().join("trials.csv")), golden("trials.header"));
    let mut traces = 0;
    for e in fs::read_dir(dir.path().join("traces")).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "csv") {
            assert_eq!(header(&p), golden("sim_trace.header"));
            traces += 1;
        }
    }
    assert!(traces > 0);
}

#[test]
fn manifest_hash_recomputes_from_config_copy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(SWEEP, ExperimentKind::Sweep, None).unwrap();
    run_experiment(&cfg, dir.path(), &RunOptions::default()).unwrap();
    let manifest = Manifest::read(dir.path()).unwrap();
    assert!(manifest.verify(dir.path()).unwrap());
    assert_eq!(manifest.seed, 5);
    assert_eq!(manifest.library_version, env!("CARGO_PKG_VERSION"));
}
