//! `mrt-wcls`: fit, simulate, and study WCLS estimators from the shell.
//!
//! Exit codes: 0 ok, 1 I/O, 2 invalid input or configuration, 3 numerical
//! failure, 4 study quality.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wcls_core::estimator::{render_csv, render_json, render_table};
use wcls_core::simulation::{
    run_bias_demo, run_mc_study_unchecked, simulate_mrt, synthetic, BiasDemoConfig, BiasDemoReport,
    EndogenousModel, GenerativeModel, McReport, StudyConfig, StudyOptions,
};
use wcls_core::{config::KeyValues, fit, ingest_csv, write_csv, Error, FitReport, ModelSpec};

#[derive(Parser, Debug)]
#[command(name = "mrt-wcls", version, about = "Causal excursion effects for micro-randomized trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a WCLS model to a CSV dataset.
    Fit(FitArgs),
    /// Write a simulated dataset as CSV.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo study of several working models.
    McStudy(StudyArgs),
    /// Compare independence and exchangeable GEE under endogenous covariates.
    BiasDemo(BiasArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct Output {
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    /// Confidence level for intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Calibrated linear model with a zero-inflated covariate.
    Calibrated,
    /// Synthetic file with the HeartSteps column layout.
    HeartstepsLike,
    /// Two decision points with the covariate equal to the first outcome.
    Endogenous,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Generative-model config (`key = value`).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    /// Individuals, for presets.
    #[arg(long)]
    n: Option<usize>,
    /// Decision points per individual, for presets.
    #[arg(long = "decision-points")]
    decision_points: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StudyArgs {
    /// Study config (`key = value`).
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, env = "MRT_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct BiasArgs {
    /// Demo config; the defaults are used when omitted.
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, env = "MRT_WORKERS")]
    workers: Option<usize>,
    #[command(flatten)]
    output: Output,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::McStudy(a) => cmd_mc_study(a),
        Command::BiasDemo(a) => cmd_bias_demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 1,
        Error::Format(_)
        | Error::Schema { .. }
        | Error::Validation { .. }
        | Error::Record { .. }
        | Error::Config(_)
        | Error::Spec(_)
        | Error::Domain(_)
        | Error::EmptyData => 2,
        Error::SingularDesign { .. }
        | Error::Correction { .. }
        | Error::Convergence { .. }
        | Error::Unidentifiable { .. } => 3,
        Error::Study { .. } => 4,
    }
}

fn emit(out: Option<&Path>, text: &str) -> wcls_core::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn require_seed(flag: Option<u64>, config: Option<u64>) -> wcls_core::Result<u64> {
    let seed = flag.or(config).ok_or_else(|| Error::Config("a seed is required (--seed or `seed` in the config)".into()))?;
    eprintln!("seed: {seed}");
    Ok(seed)
}

fn workers(flag: Option<usize>) -> usize {
    flag.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn cmd_fit(args: FitArgs) -> wcls_core::Result<()> {
    let spec = ModelSpec::from_path(&args.spec)?;
    let data = ingest_csv(BufReader::new(File::open(&args.data)?), &spec.schema())?;
    let fitted = fit(&data, &spec)?;
    let report = FitReport::new(&fitted, args.level)?;
    let text = match args.output.format.unwrap_or(Format::Table) {
        Format::Table => render_table(&report),
        Format::Csv => render_csv(&report),
        Format::Json => render_json(&report),
    };
    emit(args.output.out.as_deref(), &text)
}

fn cmd_simulate(args: SimulateArgs) -> wcls_core::Result<()> {
    let data = match (args.spec, args.preset) {
        (Some(path), _) => {
            let kv = KeyValues::from_path(&path)?;
            let mut model = GenerativeModel::from_kv(&kv, path.parent())?;
            let seed = require_seed(args.seed, kv.get_parsed("seed")?)?;
            kv.ensure_all_used()?;
            if let Some(n) = args.n {
                model.n = n;
            }
            if let Some(t) = args.decision_points {
                model.t = t;
            }
            simulate_mrt(&model, seed)?
        }
        (None, Some(preset)) => {
            let seed = require_seed(args.seed, None)?;
            match preset {
                Preset::Calibrated => {
                    let mut model = GenerativeModel::heartsteps_calibrated();
                    model.n = args.n.unwrap_or(model.n);
                    model.t = args.decision_points.unwrap_or(model.t);
                    simulate_mrt(&model, seed)?
                }
                Preset::HeartstepsLike => {
                    synthetic::heartsteps_like(args.n.unwrap_or(37), args.decision_points.unwrap_or(210), seed)?
                }
                Preset::Endogenous => {
                    if args.decision_points.is_some_and(|t| t != 2) {
                        return Err(Error::Config("the endogenous preset has exactly 2 decision points".into()));
                    }
                    let model = EndogenousModel { n: args.n.unwrap_or(500), ..EndogenousModel::default() };
                    wcls_core::simulation::simulate_endogenous_pair(&model, seed)?
                }
            }
        }
        (None, None) => unreachable!("clap requires --spec or --preset"),
    };
    match args.out {
        Some(path) => write_csv(&data, io::BufWriter::new(File::create(path)?)),
        None => write_csv(&data, io::stdout().lock()),
    }
}

fn cmd_mc_study(args: StudyArgs) -> wcls_core::Result<()> {
    let config = StudyConfig::from_path(&args.config)?;
    let seed = require_seed(args.seed, config.seed)?;
    let options = StudyOptions {
        reps: args.reps.or(config.reps).unwrap_or(1000),
        seed,
        level: args.level.or(config.level).unwrap_or(0.95),
        workers: workers(args.workers),
    };
    let report = run_mc_study_unchecked(&config.model, &config.variants, &options)?;
    let text = match args.output.format.unwrap_or(Format::Csv) {
        Format::Table => study_table(&report),
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json(),
    };
    emit(args.output.out.as_deref(), &text)?;
    report.check_failures()
}

fn cmd_bias_demo(args: BiasArgs) -> wcls_core::Result<()> {
    let config = match &args.config {
        Some(path) => BiasDemoConfig::from_path(path)?,
        None => BiasDemoConfig { model: EndogenousModel::default(), reps: 1000, seed: None },
    };
    let seed = require_seed(args.seed, config.seed)?;
    let reps = args.reps.unwrap_or(config.reps);
    let report = run_bias_demo(&config.model, reps, seed, workers(args.workers))?;
    let text = match args.output.format.unwrap_or(Format::Table) {
        Format::Table => bias_table(&report),
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json(),
    };
    emit(args.output.out.as_deref(), &text)
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.first().map_or(0, Vec::len);
    let widths: Vec<usize> = (0..cols).map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, c)| if j == 0 { format!("{c:<w$}", w = widths[j]) } else { format!("{c:>w$}", w = widths[j]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn study_table(report: &McReport) -> String {
    let mut rows = vec![["Variant", "Bias", "SD", "Coverage", "Mean SE", "Rejection", "Failures"]
        .map(String::from)
        .to_vec()];
    for v in &report.variants {
        rows.push(vec![
            v.variant.clone(),
            format!("{:.3}", v.bias),
            format!("{:.3}", v.sd),
            format!("{:.1}%", 100.0 * v.coverage),
            format!("{:.3}", v.mean_se),
            format!("{:.1}%", 100.0 * v.rejection_rate),
            v.failures.to_string(),
        ]);
    }
    format!("{}\nseed {}, {} replications; {}\n", aligned(&rows), report.seed, report.reps, report.model)
}

fn bias_table(report: &BiasDemoReport) -> String {
    let mut rows = vec![["Estimator", "Coef", "Truth", "Mean", "Bias", "MC SE", "Bias/MC SE", "Flagged"]
        .map(String::from)
        .to_vec()];
    for r in &report.rows {
        rows.push(vec![
            r.estimator.clone(),
            r.coefficient.clone(),
            format!("{:.3}", r.truth),
            format!("{:.3}", r.mean),
            format!("{:.4}", r.bias),
            format!("{:.4}", r.mc_se),
            format!("{:.1}", r.bias / r.mc_se),
            if r.flagged { "yes".into() } else { "no".into() },
        ]);
    }
    format!(
        "{}\nseed {}, {} replications, {} failed; mean working correlation {:.3}\n",
        aligned(&rows),
        report.seed,
        report.reps,
        report.failures,
        report.mean_rho
    )
}
