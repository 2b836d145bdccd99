use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use smmse::estimators::{export_lut, EstimatorDocument};
use smmse::harness::{self, validate, ExperimentConfig, THREADS_ENV};
use smmse::matrices::{build, MatrixDocument, MatrixFamily, MatrixSpec};
use smmse::SmmseEstimator;

/// Structured nonlinear MMSE estimators for signals uniform on lp-balls.
#[derive(Parser)]
#[command(name = "smmse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an NMSE sweep and write CSV/JSON artifacts.
    Run {
        /// JSON experiment configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides the config and SMMSE_OUTPUT_DIR).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-export the lookup table of a saved estimator.
    Lut {
        #[arg(long)]
        estimator: PathBuf,
        /// Sensing matrix the estimator was trained for.
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value_t = 256)]
        entries: usize,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check closed forms against Monte Carlo and finite differences.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        cases: usize,
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
    },
    /// Emit a sensing matrix as JSON.
    Matrix {
        /// etf, orthogonal or gaussian.
        #[arg(long)]
        family: String,
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Accept a numerically approximated ETF for sizes without a construction.
        #[arg(long)]
        allow_approximate: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
    if threads == 0 {
        bail!("{THREADS_ENV} must be positive");
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the worker pool")?;
    #[cfg(not(feature = "parallel"))]
    log::warn!("{THREADS_ENV}={threads} ignored: built without the parallel feature");
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(output: Option<&Path>, contents: &str) -> Result<()> {
    match output {
        Some(path) => {
            fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn run(config: Option<PathBuf>, output: Option<PathBuf>, seed: Option<u64>) -> Result<bool> {
    let mut config = match config {
        Some(path) => ExperimentConfig::load(&path)?,
        None => ExperimentConfig::default(),
    };
    config.apply_env_overrides();
    if let Some(dir) = output {
        config.output_dir = dir;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let outcome = harness::run_and_write(&config)?;
    println!(
        "{:<12} {:>5} {:>10} {:>10} {:>10} {:>10}",
        "family", "p", "smmse", "smmse_mc", "lmmse", "l1"
    );
    for cell in &outcome.cells {
        println!(
            "{:<12} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>10}",
            cell.label,
            cell.p,
            cell.nmse_closed_form,
            cell.nmse_monte_carlo.mean,
            cell.nmse_lmmse,
            cell.nmse_l1
                .map(|e| format!("{:.4}", e.mean))
                .unwrap_or_else(|| "-".into())
        );
    }
    for failure in &outcome.failures {
        eprintln!(
            "failed: {} p={}: {}",
            failure.family, failure.p, failure.error
        );
    }
    println!("wrote {}", config.output_dir.display());
    Ok(outcome.is_success())
}

fn lut(estimator: &Path, matrix: &Path, entries: usize, output: Option<&Path>) -> Result<()> {
    let doc: EstimatorDocument = read_json(estimator)?;
    let (est, p) = SmmseEstimator::from_document(&doc)?;
    let a = read_json::<MatrixDocument>(matrix)?.to_matrix()?;
    let table = export_lut(&est, &a, &p, entries)?;
    emit(output, &table.to_csv())
}

fn run_validation(seed: u64, cases: usize, samples: usize) -> Result<bool> {
    let mut checks = validate::moments_vs_monte_carlo(seed, cases, samples)?;
    checks.extend(validate::gradient_vs_finite_differences(seed, cases)?);
    let mut ok = true;
    for check in &checks {
        ok &= check.passed;
        println!(
            "[{}] {}: {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    Ok(ok)
}

fn matrix(
    family: &str,
    m: usize,
    n: usize,
    seed: u64,
    allow_approximate: bool,
    output: Option<&Path>,
) -> Result<()> {
    let Some(family) = MatrixFamily::from_tag(family) else {
        bail!("unknown matrix family {family:?} (expected etf, orthogonal or gaussian)");
    };
    let spec = MatrixSpec {
        allow_approximate,
        ..MatrixSpec::new(family, m, n, seed)
    };
    let built = build(&spec)?;
    let json = serde_json::to_string_pretty(&MatrixDocument::from_built(&built))?;
    emit(output, &(json + "\n"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Run {
            config,
            output,
            seed,
        } => run(config, output, seed),
        Command::Lut {
            estimator,
            matrix,
            entries,
            output,
        } => lut(&estimator, &matrix, entries, output.as_deref()).map(|()| true),
        Command::Validate {
            seed,
            cases,
            samples,
        } => run_validation(seed, cases, samples),
        Command::Matrix {
            family,
            m,
            n,
            seed,
            allow_approximate,
            output,
        } => matrix(&family, m, n, seed, allow_approximate, output.as_deref()).map(|()| true),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
