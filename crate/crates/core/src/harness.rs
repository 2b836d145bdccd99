//! Configuration-driven NMSE sweeps over sensing matrices and ball shapes.
//!
//! A sweep trains one structured estimator per `(matrix, p)` cell and
//! reports its closed-form and Monte-Carlo NMSE next to the LMMSE level and,
//! optionally, the ℓ1 decoder. Cells are independent and run in parallel;
//! every output file is written per cell or assembled in grid order, so a
//! rerun with the same configuration reproduces identical bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{l1_minimize, BasisPursuitConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    export_lut, lmmse_operator, lmse, prior_covariance, smse, Lut, PriorCovariance, SmmseEstimator,
};
use crate::matrices::{build, BuiltMatrix, MatrixDocument, MatrixFamily, MatrixSpec};
use crate::moments::{CharacteristicVector, MomentTable};
use crate::optimizer::{alternating_minimize, IterationTrace, OptimizerConfig};
use crate::par;
use crate::sampling::{monte_carlo, monte_carlo_mse, McEstimate};

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "SMMSE_OUTPUT_DIR";
/// Worker-thread count used by the CLI when set.
pub const THREADS_ENV: &str = "SMMSE_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub matrices: Vec<MatrixSpec>,
    /// Isotropic exponents `p`, sorted ascending.
    pub p_grid: Vec<f64>,
    /// Polynomial degree `D`.
    pub degree: usize,
    pub optimizer: OptimizerConfig,
    pub mc_samples: usize,
    pub seed: u64,
    pub include_l1: bool,
    pub l1: BasisPursuitConfig,
    pub lut_entries: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            matrices: vec![
                MatrixSpec::new(MatrixFamily::EquiangularTightFrame, 3, 6, 0),
                MatrixSpec::new(MatrixFamily::SubsampledOrthogonal, 3, 6, 1),
                MatrixSpec::new(MatrixFamily::NormalizedGaussian, 3, 6, 2),
            ],
            p_grid: vec![0.4, 0.6, 0.8, 1.0, 1.2, 1.6, 2.0],
            degree: 9,
            optimizer: OptimizerConfig::default(),
            mc_samples: 100_000,
            seed: 0,
            include_l1: true,
            l1: BasisPursuitConfig::default(),
            lut_entries: 256,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(what));
        if self.matrices.is_empty() {
            return bad("at least one matrix spec is required".into());
        }
        if self.p_grid.is_empty() {
            return bad("p_grid must not be empty".into());
        }
        if self.p_grid.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return bad("p_grid entries must be positive".into());
        }
        if self.p_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("p_grid must be sorted ascending without duplicates".into());
        }
        if self.degree == 0 {
            return bad("degree must be at least 1".into());
        }
        if self.mc_samples < 1000 {
            return bad(format!(
                "mc_samples must be ≥ 1000, got {}",
                self.mc_samples
            ));
        }
        if self.lut_entries < 2 {
            return bad("lut_entries must be at least 2".into());
        }
        self.optimizer.validate()?;
        self.l1.validate()?;
        Ok(())
    }

    /// Applies [`OUTPUT_DIR_ENV`] if present.
    pub fn apply_env_overrides(&mut self) {
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
    }
}

/// `ε / tr(C)`.
pub fn nmse(epsilon: f64, c: &PriorCovariance) -> Result<f64> {
    let tr = c.trace();
    if !(tr > 0.0) {
        return Err(Error::Domain("NMSE needs tr(C) > 0".into()));
    }
    Ok(epsilon / tr)
}

/// Results for one `(matrix, p)` cell.
#[derive(Debug, Clone)]
pub struct CellReport {
    pub label: String,
    pub family: MatrixFamily,
    pub p: f64,
    pub nmse_closed_form: f64,
    pub nmse_monte_carlo: McEstimate,
    pub nmse_lmmse: f64,
    pub nmse_l1: Option<McEstimate>,
    pub trace: IterationTrace,
    pub estimator: SmmseEstimator,
    pub lut: Lut,
    pub timing: CellTiming,
}

/// Informational wall-clock figures, excluded from the written CSVs.
#[derive(Debug, Clone, Copy, Default)]
pub struct CellTiming {
    pub train_seconds: f64,
    pub apply_seconds_per_call: f64,
    pub l1_seconds_per_call: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFailure {
    pub family: String,
    pub p: f64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub matrices: Vec<(String, BuiltMatrix)>,
    pub cells: Vec<CellReport>,
    pub failures: Vec<CellFailure>,
}

impl RunOutcome {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for a cell and purpose.
pub fn cell_seed(seed: u64, matrix_index: usize, p_index: usize, purpose: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ matrix_index as u64);
    h = splitmix64(h ^ ((p_index as u64) << 8));
    splitmix64(h ^ (purpose << 16))
}

fn matrix_labels(specs: &[MatrixSpec]) -> Vec<String> {
    specs
        .iter()
        .map(|s| {
            let dup = specs.iter().filter(|o| o.family == s.family).count() > 1;
            if dup {
                format!("{}-s{}", s.family.tag(), s.seed)
            } else {
                s.family.tag().to_string()
            }
        })
        .collect()
}

/// Runs the sweep without touching the filesystem.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let labels = matrix_labels(&config.matrices);
    let mut matrices = Vec::new();
    let mut failures = Vec::new();
    for (spec, label) in config.matrices.iter().zip(&labels) {
        match build(spec) {
            Ok(b) => matrices.push((label.clone(), b)),
            Err(e) => {
                for &p in &config.p_grid {
                    failures.push(CellFailure {
                        family: label.clone(),
                        p,
                        error: e.to_string(),
                    });
                }
            }
        }
    }

    let jobs: Vec<(usize, usize)> = (0..matrices.len())
        .flat_map(|mi| (0..config.p_grid.len()).map(move |pi| (mi, pi)))
        .collect();
    let results = par::map_slice(&jobs, |&(mi, pi)| {
        let (label, built) = &matrices[mi];
        let matrix_index = config
            .matrices
            .iter()
            .position(|s| s == &built.spec)
            .unwrap_or(mi);
        run_cell(config, label, built, matrix_index, pi)
    });

    let mut cells = Vec::new();
    for (&(mi, pi), result) in jobs.iter().zip(results) {
        match result {
            Ok(cell) => cells.push(cell),
            Err(e) => failures.push(CellFailure {
                family: matrices[mi].0.clone(),
                p: config.p_grid[pi],
                error: e.to_string(),
            }),
        }
    }
    Ok(RunOutcome {
        matrices,
        cells,
        failures,
    })
}

fn run_cell(
    config: &ExperimentConfig,
    label: &str,
    built: &BuiltMatrix,
    matrix_index: usize,
    p_index: usize,
) -> Result<CellReport> {
    let p_value = config.p_grid[p_index];
    let a = &built.matrix;
    let p = CharacteristicVector::isotropic(p_value, a.cols())?;
    let table = MomentTable::new(p.clone());
    let c = prior_covariance(&table);

    let started = Instant::now();
    let (estimator, trace) = alternating_minimize(&table, a, config.degree, &config.optimizer)?;
    let train_seconds = started.elapsed().as_secs_f64();

    let closed = smse(&table, a, &estimator)?;
    let nmse_closed_form = nmse(closed, &c)?;
    let mc_seed = cell_seed(config.seed, matrix_index, p_index, 1);
    let mc = monte_carlo_mse(&p, mc_seed, a, &estimator, config.mc_samples)?;
    let nmse_monte_carlo = mc.scaled(1.0 / c.trace());
    let w_lin = lmmse_operator(a, &c)?;
    let nmse_lmmse = nmse(lmse(&w_lin, a, &c)?, &c)?;

    let nmse_l1 = if config.include_l1 {
        let l1_seed = cell_seed(config.seed, matrix_index, p_index, 2);
        let est = monte_carlo(&p, l1_seed, config.mc_samples, |x| {
            let sol = l1_minimize(a, &a.measure(x), &config.l1)?;
            Ok((x - sol.x).norm_squared())
        })?;
        Some(est.scaled(1.0 / c.trace()))
    } else {
        None
    };

    let lut = export_lut(&estimator, a, &p, config.lut_entries)?;
    let timing = measure_timing(config, a, &estimator, &p, train_seconds);
    log::info!(
        "{label} p={p_value}: nmse {nmse_closed_form:.4} (mc {:.4} ± {:.4}), lmmse {nmse_lmmse:.4}, {} iterations, apply {:.2e}s{}",
        nmse_monte_carlo.mean,
        nmse_monte_carlo.std_error,
        trace.iterations.len(),
        timing.apply_seconds_per_call,
        timing
            .l1_seconds_per_call
            .map(|t| format!(", l1 {t:.2e}s"))
            .unwrap_or_default()
    );

    Ok(CellReport {
        label: label.to_string(),
        family: built.spec.family,
        p: p_value,
        nmse_closed_form,
        nmse_monte_carlo,
        nmse_lmmse,
        nmse_l1,
        trace,
        estimator,
        lut,
        timing,
    })
}

fn measure_timing(
    config: &ExperimentConfig,
    a: &crate::estimators::SensingMatrix,
    est: &SmmseEstimator,
    p: &CharacteristicVector,
    train_seconds: f64,
) -> CellTiming {
    const CALLS: usize = 200;
    let mut sampler = crate::sampling::BallSampler::new(p.clone(), 0);
    let ys: Vec<_> = (0..CALLS).map(|_| a.measure(&sampler.sample())).collect();
    let started = Instant::now();
    for y in &ys {
        std::hint::black_box(est.apply(y).ok());
    }
    let apply = started.elapsed().as_secs_f64() / CALLS as f64;
    let l1 = config.include_l1.then(|| {
        let started = Instant::now();
        for y in ys.iter().take(CALLS / 10) {
            std::hint::black_box(l1_minimize(a, y, &config.l1).ok());
        }
        started.elapsed().as_secs_f64() / (CALLS / 10) as f64
    });
    CellTiming {
        train_seconds,
        apply_seconds_per_call: apply,
        l1_seconds_per_call: l1,
    }
}

/// File-name fragment for a cell: `<label>_<p>`.
pub fn cell_stem(label: &str, p: f64) -> String {
    format!("{label}_{p}")
}

pub const RESULTS_HEADER: &str =
    "family,p,nmse_smmse,nmse_smmse_mc,nmse_mc_stderr,nmse_lmmse,nmse_l1,nmse_l1_stderr";

pub fn results_csv(cells: &[CellReport]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for c in cells {
        let (l1, l1_err) = match c.nmse_l1 {
            Some(e) => (e.mean.to_string(), e.std_error.to_string()),
            None => (String::new(), String::new()),
        };
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.label,
            c.p,
            c.nmse_closed_form,
            c.nmse_monte_carlo.mean,
            c.nmse_monte_carlo.std_error,
            c.nmse_lmmse,
            l1,
            l1_err
        ));
    }
    s
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `results.csv`, per-cell traces, estimators and LUTs, one JSON per
/// matrix, and `failures.json` when any cell failed.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("results.csv"), &results_csv(&outcome.cells))?;
    for (label, built) in &outcome.matrices {
        let doc = MatrixDocument::from_built(built);
        write(
            &dir.join(format!("matrix_{label}.json")),
            &serde_json::to_string_pretty(&doc)?,
        )?;
    }
    for cell in &outcome.cells {
        let stem = cell_stem(&cell.label, cell.p);
        write(&dir.join(format!("trace_{stem}.csv")), &cell.trace.to_csv())?;
        let p = CharacteristicVector::isotropic(cell.p, cell.estimator.w().nrows())?;
        let doc = cell.estimator.to_document(&p);
        write(
            &dir.join(format!("estimator_{stem}.json")),
            &serde_json::to_string_pretty(&doc)?,
        )?;
        write(&dir.join(format!("lut_{stem}.csv")), &cell.lut.to_csv())?;
    }
    let manifest = dir.join("failures.json");
    if outcome.failures.is_empty() {
        if manifest.exists() {
            fs::remove_file(&manifest).map_err(|e| Error::io(&manifest, e))?;
        }
    } else {
        write(&manifest, &serde_json::to_string_pretty(&outcome.failures)?)?;
    }
    Ok(())
}

/// [`run`] followed by [`write_outputs`] into `config.output_dir`.
pub fn run_and_write(config: &ExperimentConfig) -> Result<RunOutcome> {
    let outcome = run(config)?;
    write_outputs(&outcome, &config.output_dir)?;
    Ok(outcome)
}

/// `T'(0) · R / max_{|t| ≤ R} |T(t)|` over the LUT grid.
///
/// Equals one for a linear map and drops below one for shrinkage-shaped
/// curves that are flat around the origin. Invariant under `T(t) → −T(t)`
/// and under rescaling of the argument.
pub fn origin_slope_ratio(est: &SmmseEstimator, lut: &Lut) -> f64 {
    let slope = est.coefficients().get(1).copied().unwrap_or(0.0);
    let peak = lut.points.iter().fold(0.0f64, |m, (_, v)| m.max(v.abs()));
    if peak == 0.0 {
        return 0.0;
    }
    (slope * lut.range / peak).abs()
}

pub mod validate {
    //! Self-checks of the closed forms against independent routes, used by
    //! the `validate` subcommand.

    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::estimators::SensingMatrix;
    use crate::moments::MultiIndex;
    use crate::optimizer::gradient_w;

    #[derive(Debug, Clone)]
    pub struct CheckResult {
        pub name: String,
        pub passed: bool,
        pub detail: String,
    }

    /// Closed-form `E[x^α]` against 4-σ Monte-Carlo intervals.
    pub fn moments_vs_monte_carlo(
        seed: u64,
        cases: usize,
        samples: usize,
    ) -> Result<Vec<CheckResult>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for case in 0..cases {
            let n = rng.random_range(2..=3);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.4..2.5)).collect();
            let alpha: Vec<u32> = (0..n).map(|_| 2 * rng.random_range(0..=1u32)).collect();
            let p = CharacteristicVector::new(p)?;
            let table = MomentTable::new(p.clone());
            let alpha = MultiIndex::new(alpha);
            let closed = table.monomial_moment(&alpha)?;
            let exps: Vec<i32> = alpha.as_slice().iter().map(|&a| a as i32).collect();
            let mc = monte_carlo(&p, seed.wrapping_add(case as u64), samples, |x| {
                Ok(x.iter().zip(&exps).map(|(v, &k)| v.powi(k)).product())
            })?;
            let passed = if mc.std_error == 0.0 {
                (closed - mc.mean).abs() < 1e-12
            } else {
                mc.contains(closed, 4.0)
            };
            out.push(CheckResult {
                name: format!("moment p={:?} alpha={:?}", p.as_slice(), alpha.as_slice()),
                passed,
                detail: format!(
                    "closed {closed:.6e}, mc {:.6e} ± {:.1e}",
                    mc.mean, mc.std_error
                ),
            });
        }
        Ok(out)
    }

    /// `gradient_w` against central differences of the closed-form MSE.
    pub fn gradient_vs_finite_differences(seed: u64, cases: usize) -> Result<Vec<CheckResult>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for _ in 0..cases {
            let n = rng.random_range(2..=4);
            let m = rng.random_range(1..n);
            let degree = rng.random_range(1..=4);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
            let table = MomentTable::new(CharacteristicVector::new(p)?);
            let a = SensingMatrix::new(DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0)))?;
            let w = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            let coeffs = nalgebra::DVector::from_fn(degree + 1, |_, _| rng.random_range(-1.0..1.0));
            let est = SmmseEstimator::new(w.clone(), coeffs)?;
            let g = gradient_w(&table, &a, &est)?;
            let h = 1e-5;
            let mut fd = DMatrix::zeros(n, m);
            for i in 0..n {
                for j in 0..m {
                    let mut plus = w.clone();
                    plus[(i, j)] += h;
                    let mut minus = w.clone();
                    minus[(i, j)] -= h;
                    fd[(i, j)] = (smse(&table, &a, &est.with_w(plus))?
                        - smse(&table, &a, &est.with_w(minus))?)
                        / (2.0 * h);
                }
            }
            let rel = (&g - &fd).norm() / fd.norm().max(1e-300);
            out.push(CheckResult {
                name: format!("gradient N={n} M={m} D={degree}"),
                passed: rel <= 1e-5,
                detail: format!("relative error {rel:.3e}"),
            });
        }
        Ok(out)
    }
}
