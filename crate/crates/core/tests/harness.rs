use std::fs;

use smmse::harness::{run, run_and_write, ExperimentConfig, RESULTS_HEADER};
use smmse::matrices::{MatrixFamily, MatrixSpec};
use smmse::optimizer::MONOTONE_SLACK;
use smmse::SmmseEstimator;

fn small_config(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        p_grid: vec![0.5, 2.0],
        degree: 5,
        mc_samples: 4_000,
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn sweep_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let outcome = run_and_write(&config).unwrap();
    assert!(outcome.is_success(), "{:?}", outcome.failures);
    assert_eq!(outcome.cells.len(), 6);

    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), RESULTS_HEADER);
    assert_eq!(lines.count(), 6);
    for tag in ["etf", "orthogonal", "gaussian"] {
        assert!(dir.path().join(format!("matrix_{tag}.json")).exists());
        for p in ["0.5", "2"] {
            for (prefix, ext) in [("trace", "csv"), ("estimator", "json"), ("lut", "csv")] {
                let path = dir.path().join(format!("{prefix}_{tag}_{p}.{ext}"));
                assert!(path.exists(), "missing {}", path.display());
            }
        }
    }
    let lut = fs::read_to_string(dir.path().join("lut_etf_0.5.csv")).unwrap();
    assert_eq!(lut.lines().count(), 257);
    let doc = serde_json::from_str(
        &fs::read_to_string(dir.path().join("estimator_etf_0.5.json")).unwrap(),
    )
    .unwrap();
    let (est, p) = SmmseEstimator::from_document(&doc).unwrap();
    assert_eq!(est.degree(), 5);
    assert_eq!(p.as_slice(), &[0.5; 6]);
    assert!(!dir.path().join("failures.json").exists());
}

#[test]
fn every_cell_satisfies_the_report_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&small_config(dir.path())).unwrap();
    for cell in &outcome.cells {
        let mc = cell.nmse_monte_carlo;
        assert!(
            mc.contains(cell.nmse_closed_form, 3.0),
            "{} {}: {} vs {mc:?}",
            cell.label,
            cell.p,
            cell.nmse_closed_form
        );
        assert!(cell.nmse_closed_form <= cell.nmse_lmmse + 1e-9);
        assert!(cell.nmse_closed_form >= 0.0);
        assert!(cell.trace.is_monotone(MONOTONE_SLACK));
        let l1 = cell.nmse_l1.unwrap();
        assert!(l1.mean >= 0.0 && l1.mean <= 1.5, "{l1:?}");
        assert!(cell.timing.apply_seconds_per_call < cell.timing.l1_seconds_per_call.unwrap());
    }
}

#[test]
fn failed_cells_go_to_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    config.include_l1 = false;
    config.matrices.push(MatrixSpec::new(
        MatrixFamily::EquiangularTightFrame,
        2,
        5,
        0,
    ));
    let outcome = run_and_write(&config).unwrap();
    assert_eq!(outcome.failures.len(), 2);
    // the two etf specs share a family, so labels carry the seed
    assert_eq!(outcome.cells.len(), 6);
    let manifest = fs::read_to_string(dir.path().join("failures.json")).unwrap();
    assert!(manifest.contains("\"p\": 0.5"));
}

#[test]
fn config_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let path = dir.path().join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), config);
    fs::write(&path, r#"{"p_grid": []}"#).unwrap();
    assert!(ExperimentConfig::load(&path).is_err());
    // misspelled keys are rejected rather than silently defaulted
    fs::write(&path, r#"{"optimizer": {"backtrack_factor": 0.5}}"#).unwrap();
    assert!(ExperimentConfig::load(&path).is_err());
}

#[test]
fn documented_example_parses() {
    let config = ExperimentConfig::from_json(
        r#"{
          "matrices": [{"family": "etf", "M": 3, "N": 6, "seed": 0}],
          "p_grid": [0.4, 1.0, 2.0],
          "degree": 9,
          "optimizer": {"max_outer_iterations": 50, "outer_tolerance": {"relative_to_trace": 1e-8},
                        "armijo_c1": 1e-4, "armijo_backtrack": 0.5, "init_scale": 10.0},
          "mc_samples": 100000,
          "seed": 0,
          "include_l1": true,
          "lut_entries": 256,
          "output_dir": "results"
        }"#,
    )
    .unwrap();
    assert_eq!(config.optimizer, smmse::OptimizerConfig::default());
}
