use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use taidlab::experiment::{
    analyze_saved, run_experiment, threads_from_env, AnalyzeOptions, ExperimentConfig,
    ExperimentKind, RunOptions, ANALYSIS_FILE,
};
use taidlab::plot::{plot_emit, PlotKind, Table};
use taidlab::TaidError;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUN: u8 = 3;

#[derive(Parser)]
#[command(name = "taidlab", version, about = "Interpolated distillation experiments at desk scale")]
struct Cli {
    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one student.
    Distill(RunArgs),
    /// Train every point of the config's sweep grid.
    Sweep(RunArgs),
    /// Run the randomised collapse-theory suite.
    Theory(RunArgs),
    /// Head/tail mass and entropy of saved students.
    Analyze(AnalyzeArgs),
    /// Render an SVG figure from result CSVs.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides `experiment.seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Defaults to `experiment.out`, then `out/<experiment.name>`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Experiment output or single run directory.
    #[arg(value_name = "DIR")]
    path: PathBuf,
    /// Where to write the CSV; defaults to `analysis.csv` inside DIR.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    contexts: usize,
    #[arg(long)]
    head_k: Option<usize>,
    #[arg(long, default_value_t = 80.0)]
    tail_lo: f64,
    #[arg(long, default_value_t = 100.0)]
    tail_hi: f64,
}

#[derive(Args)]
struct PlotArgs {
    /// t-trace, loss-variance, capacity-curve or mass-bars.
    #[arg(long)]
    kind: PlotKind,
    /// Output SVG; defaults to `<kind>.svg`.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Start of the linear reference on t-trace plots.
    #[arg(long, default_value_t = 0.4)]
    t_start: f64,
    #[arg(required = true, value_name = "CSV")]
    inputs: Vec<PathBuf>,
}

fn fail(code: u8, err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code)
}

fn run(kind: ExperimentKind, args: &RunArgs, quiet: bool) -> ExitCode {
    let config = match ExperimentConfig::from_file(&args.config, kind, args.seed) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let out = args
        .out
        .clone()
        .or_else(|| config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("out").join(&config.name));
    let options = RunOptions {
        threads,
        verbose: !quiet,
    };
    let manifest = match run_experiment(&config, &out, &options) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_RUN, e),
    };
    if !quiet {
        match &manifest.theory {
            Some(t) => println!("{} trials, {} passed -> {}", t.trials, t.passed, out.display()),
            None => println!(
                "{} runs, {} failed -> {}",
                manifest.runs.len(),
                manifest.runs.iter().filter(|r| r.failure.is_some()).count(),
                out.display()
            ),
        }
    }
    if manifest.ok() {
        ExitCode::SUCCESS
    } else {
        for r in manifest.runs.iter().filter(|r| r.failure.is_some()) {
            eprintln!("{} [{}] failed: {}", r.id, r.label, r.failure.as_deref().unwrap_or(""));
        }
        ExitCode::from(EXIT_RUN)
    }
}

fn analyze(args: &AnalyzeArgs, quiet: bool) -> ExitCode {
    let options = AnalyzeOptions {
        contexts: args.contexts,
        head_k: args.head_k,
        tail_range: (args.tail_lo, args.tail_hi),
    };
    let csv = match analyze_saved(&args.path, &options) {
        Ok(c) => c,
        Err(e @ (TaidError::Range(_) | TaidError::InvalidInput(_))) => return fail(EXIT_CONFIG, e),
        Err(e) => return fail(EXIT_RUN, e),
    };
    let out = args.out.clone().unwrap_or_else(|| args.path.join(ANALYSIS_FILE));
    if let Err(e) = std::fs::write(&out, &csv) {
        return fail(EXIT_RUN, format!("cannot write {}: {e}", out.display()));
    }
    if !quiet {
        print!("{csv}");
    }
    ExitCode::SUCCESS
}

fn plot(args: &PlotArgs, quiet: bool) -> ExitCode {
    let tables = match args.inputs.iter().map(|p| Table::read(p)).collect::<Result<Vec<_>, _>>() {
        Ok(t) => t,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let svg = match plot_emit(&tables, args.kind, args.t_start) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.svg", args.kind)));
    if let Err(e) = std::fs::write(&out, svg) {
        return fail(EXIT_RUN, format!("cannot write {}: {e}", out.display()));
    }
    if !quiet {
        println!("{}", out.display());
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Distill(a) => run(ExperimentKind::Distill, a, cli.quiet),
        Command::Sweep(a) => run(ExperimentKind::Sweep, a, cli.quiet),
        Command::Theory(a) => run(ExperimentKind::Theory, a, cli.quiet),
        Command::Analyze(a) => analyze(a, cli.quiet),
        Command::Plot(a) => plot(a, cli.quiet),
    }
}
