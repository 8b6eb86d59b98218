//! End-to-end tests of the `embedq` binary: exit codes, artifact layout,
//! determinism, and the offline reproducibility of stored predictions.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

use embedq::harness::commands::{CrossoverSidecar, DosArtifact};
use embedq::harness::config::ExperimentConfig;
use embedq::harness::manifest::RunManifest;
use embedq::theory::{predict_equilibrium, self_convolve, ShapeFunction};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_embedq")
}

/// A small but fully specified configuration document; tests mutate the
/// returned value before writing it out.
fn base_config(dim_env: usize) -> Value {
    json!({
        "model": {
            "system": {"levels": [-1.0, 1.0]},
            "environment": {"dos": {"kind": "gaussian", "sigma": 1.0}, "dim": dim_env}
        },
        "interaction": {"kind": "goe", "sigma_w": 0.3},
        "initial": {"sys_level": 1, "env_energy": 0.0},
        "sweep": {"sigma_w_grid": [0.1, 0.3, 0.9], "seeds": [0, 1, 2], "dims": [32, 64]},
        "dynamics": {"t_max": 120.0, "n_times": 150, "window": [60.0, 120.0]},
        "ldos": {"targets": [{"sys_level": 1, "env_energy": 0.0}], "bundle_half_width": 4},
        "transitions": {"rows": [{"sys_level": 1, "env_energy": 0.0}], "cap": 2048},
        "output": {"formats": ["csv"]}
    })
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn run_cmd(subcommand: &str, config: &Path, out: &Path) -> Output {
    run(&[
        subcommand,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process not killed by signal")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_csv_column(path: &Path, column: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header
        .iter()
        .position(|&h| h == column)
        .unwrap_or_else(|| panic!("column {column} missing from {}", path.display()));
    lines.map(|l| l.split(',').nth(k).unwrap().parse::<f64>().unwrap()).collect()
}

// ---------------------------------------------------------------------------
// configuration errors -> exit code 2, nothing written
// ---------------------------------------------------------------------------

#[test]
fn missing_config_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_cmd("dynamics", &tmp.path().join("nope.json"), &tmp.path().join("out"));
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_of(&out));
    assert!(!tmp.path().join("out").exists(), "no output directory on config error");
}

#[test]
fn malformed_json_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("config.json");
    std::fs::write(&path, "{ not json").unwrap();
    let out = run_cmd("dynamics", &path, &tmp.path().join("out"));
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_of(&out));
}

#[test]
fn unknown_field_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base_config(32);
    cfg["model"]["system"]["couplings"] = json!([1.0]);
    let path = write_config(tmp.path(), &cfg);
    let out = run_cmd("dynamics", &path, &tmp.path().join("out"));
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("couplings"), "stderr names the offending field");
}

#[test]
fn typicality_rejects_too_few_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base_config(32);
    cfg["sweep"]["seeds"] = json!([0, 1, 2]);
    let path = write_config(tmp.path(), &cfg);
    let out = run_cmd("typicality", &path, &tmp.path().join("out"));
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("sweep.seeds"), "stderr: {}", stderr_of(&out));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn typicality_rejects_a_single_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base_config(32);
    cfg["sweep"]["seeds"] = json!((0u64..8).collect::<Vec<_>>());
    cfg["sweep"]["dims"] = json!([64]);
    let path = write_config(tmp.path(), &cfg);
    let out = run_cmd("typicality", &path, &tmp.path().join("out"));
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("sweep.dims"), "stderr: {}", stderr_of(&out));
}

#[test]
fn transitions_refuses_dimensions_over_the_cap() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base_config(64);
    cfg["transitions"]["cap"] = json!(100);
    let path = write_config(tmp.path(), &cfg);
    let out = run_cmd("transitions", &path, &tmp.path().join("out"));
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_of(&out));
    let err = stderr_of(&out);
    assert!(err.contains("cap"), "refusal explains the cap: {err}");
    assert!(!tmp.path().join("out").exists(), "refused before writing anything");
}

#[test]
fn crossover_rejects_an_explicit_rotation_spectrum() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base_config(32);
    cfg["interaction"] = json!({
        "kind": "rrm",
        "sigma_w": 0.3,
        "rrm_spectrum": (0..64).map(|k| if k % 2 == 0 { 0.3 } else { -0.3 }).collect::<Vec<f64>>(),
        "rotation_group": "orthogonal"
    });
    let path = write_config(tmp.path(), &cfg);
    let out = run_cmd("crossover", &path, &tmp.path().join("out"));
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("rrm_spectrum"), "stderr: {}", stderr_of(&out));
}

#[test]
fn zero_threads_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), &base_config(32));
    let out = run(&[
        "dynamics",
        "--config",
        path.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
        "--threads",
        "0",
    ]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_of(&out));
}

#[test]
fn missing_output_directory_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), &base_config(32));
    let out = run(&["dynamics", "--config", path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("output.directory"), "stderr: {}", stderr_of(&out));
}

// ---------------------------------------------------------------------------
// determinism and artifact layout
// ---------------------------------------------------------------------------

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), &base_config(32));
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let run_a = run_cmd("dynamics", &path, &out_a);
    assert_eq!(exit_code(&run_a), 0, "stderr: {}", stderr_of(&run_a));
    let run_b = run(&[
        "dynamics",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert_eq!(exit_code(&run_b), 0, "stderr: {}", stderr_of(&run_b));
    for entry in std::fs::read_dir(&out_a).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "manifest.json" {
            continue; // wall-clock timings differ run to run
        }
        let a = std::fs::read(out_a.join(&name)).unwrap();
        let b = std::fs::read(out_b.join(&name)).unwrap();
        assert_eq!(a, b, "{} differs between reruns", name.to_string_lossy());
    }
}

#[test]
fn manifest_lists_every_emitted_file() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base_config(32);
    cfg["output"]["formats"] = json!(["csv", "svg"]);
    let path = write_config(tmp.path(), &cfg);
    let out_dir = tmp.path().join("out");
    let out = run_cmd("crossover", &path, &out_dir);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    let mut listed: Vec<String> = manifest.outputs.clone();
    listed.push("manifest.json".into());
    listed.sort();
    let mut present: Vec<String> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    present.sort();
    assert_eq!(listed, present, "manifest enumerates exactly the emitted files");
    assert!(manifest.failed_seeds.is_empty());
    assert_eq!(manifest.seeds, vec![0, 1, 2]);
}

#[test]
fn svg_emission_is_presentation_only() {
    // Every series plotted in the SVG run must also exist in CSV form:
    // dropping the "svg" format changes no CSV byte and loses no table.
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base_config(32);
    cfg["output"]["formats"] = json!(["csv", "svg"]);
    let with_svg = write_config(tmp.path(), &cfg);
    let out_full = tmp.path().join("full");
    assert_eq!(exit_code(&run_cmd("dynamics", &with_svg, &out_full)), 0);

    cfg["output"]["formats"] = json!(["csv"]);
    let csv_only_path = tmp.path().join("csv_only.json");
    std::fs::write(&csv_only_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out_csv = tmp.path().join("csv");
    assert_eq!(exit_code(&run_cmd("dynamics", &csv_only_path, &out_csv)), 0);

    let csvs = |dir: &Path| -> Vec<String> {
        let mut v: Vec<String> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".csv"))
            .collect();
        v.sort();
        v
    };
    assert_eq!(csvs(&out_full), csvs(&out_csv));
    for name in csvs(&out_full) {
        let a = std::fs::read(out_full.join(&name)).unwrap();
        let b = std::fs::read(out_csv.join(&name)).unwrap();
        assert_eq!(a, b, "{name} depends on whether plots were emitted");
    }
    assert!(out_full.join("dynamics.svg").exists());
    assert!(!out_csv.join("dynamics.svg").exists());
}

#[test]
fn diagonalization_cache_round_trip_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), &base_config(32));
    let cache = tmp.path().join("cache");
    let out_cold = tmp.path().join("cold");
    let out_warm = tmp.path().join("warm");
    for out_dir in [&out_cold, &out_warm] {
        let out = Command::new(bin())
            .args([
                "ldos",
                "--config",
                path.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ])
            .env("EMBEDQ_CACHE", &cache)
            .output()
            .unwrap();
        assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    }
    assert!(std::fs::read_dir(&cache).unwrap().count() > 0, "cache was populated");
    let a = std::fs::read(out_cold.join("ldos_summary.csv")).unwrap();
    let b = std::fs::read(out_warm.join("ldos_summary.csv")).unwrap();
    assert_eq!(a, b, "cached eigendecompositions change nothing");
}

// ---------------------------------------------------------------------------
// zero-coupling behavior across the commands
// ---------------------------------------------------------------------------

fn zero_coupling_config(dim_env: usize) -> Value {
    let mut cfg = base_config(dim_env);
    cfg["interaction"]["sigma_w"] = json!(0.0);
    cfg["sweep"]["sigma_w_grid"] = json!([0.0]);
    cfg
}

#[test]
fn zero_coupling_trajectory_is_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), &zero_coupling_config(32));
    let out_dir = tmp.path().join("out");
    let out = run_cmd("dynamics", &path, &out_dir);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    for column in ["p_0", "p_1"] {
        let series = read_csv_column(&out_dir.join("trajectory_seed_0.csv"), column);
        let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo <= 1e-12, "{column} drifts by {} without an interaction", hi - lo);
    }
}

#[test]
fn zero_coupling_plateau_equals_initial_population() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), &zero_coupling_config(32));
    let out_dir = tmp.path().join("out");
    let out = run_cmd("crossover", &path, &out_dir);
    assert_eq!(exit_code(&out), 0, "a one-point grid warns but runs: {}", stderr_of(&out));
    let mean = read_csv_column(&out_dir.join("crossover.csv"), "p1_mean");
    let std = read_csv_column(&out_dir.join("crossover.csv"), "p1_std");
    assert_eq!(mean.len(), 1);
    assert!((mean[0] - 1.0).abs() <= 1e-12, "plateau {} != initial population", mean[0]);
    assert_eq!(std[0], 0.0);
}

#[test]
fn zero_coupling_ldos_is_flagged_degenerate() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), &zero_coupling_config(32));
    let out_dir = tmp.path().join("out");
    let out = run_cmd("ldos", &path, &out_dir);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let degenerate = read_csv_column(&out_dir.join("ldos_summary.csv"), "degenerate");
    assert_eq!(degenerate, vec![1.0], "point-mass curve must be flagged, not fitted");
}

#[test]
fn zero_coupling_typicality_has_zero_variance() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = zero_coupling_config(32);
    cfg["sweep"]["seeds"] = json!((0u64..8).collect::<Vec<_>>());
    let path = write_config(tmp.path(), &cfg);
    let out_dir = tmp.path().join("out");
    let out = run_cmd("typicality", &path, &out_dir);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let stds = read_csv_column(&out_dir.join("typicality.csv"), "p1_std");
    assert_eq!(stds.len(), 2);
    assert!(stds.iter().all(|&s| s == 0.0), "all realizations coincide at zero coupling: {stds:?}");
}

#[test]
fn zero_coupling_transition_row_is_a_point_mass() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), &zero_coupling_config(32));
    let out_dir = tmp.path().join("out");
    let out = run_cmd("transitions", &path, &out_dir);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    let row_csv = manifest
        .outputs
        .iter()
        .find(|n| n.starts_with("transitions_row_"))
        .expect("row table emitted");
    let m: usize = row_csv
        .trim_start_matches("transitions_row_")
        .trim_end_matches(".csv")
        .parse()
        .unwrap();
    let p = read_csv_column(&out_dir.join(row_csv), "p_emp");
    for (n, &value) in p.iter().enumerate() {
        let expect = if n == m { 1.0 } else { 0.0 };
        assert!(
            (value - expect).abs() <= 1e-12,
            "p({m} -> {n}) = {value}, expected {expect} without an interaction"
        );
    }
}

// ---------------------------------------------------------------------------
// stored predictions are reproducible offline
// ---------------------------------------------------------------------------

#[test]
fn crossover_prediction_recomputes_from_stored_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), &base_config(48));
    let out_dir = tmp.path().join("out");
    let out = run_cmd("crossover", &path, &out_dir);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    // Everything below uses only files from the output directory: the
    // embedded config, the two stored DOS estimates, and the fit widths.
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    let config: ExperimentConfig = serde_json::from_value(manifest.config.clone()).unwrap();
    let model = config.build_model(None).unwrap();
    let read_dos = |name: &str| {
        let artifact: DosArtifact =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join(name)).unwrap()).unwrap();
        artifact.into_estimate().unwrap()
    };
    let dos_env = read_dos("dos_env.json");
    let dos_total = read_dos("dos_total.json");
    let sidecar: CrossoverSidecar =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("crossover_fits.json")).unwrap())
            .unwrap();

    assert_eq!(sidecar.initial_index, config.initial_index(&model).unwrap());
    let mut checked = 0;
    for entry in &sidecar.entries {
        let (Some(width), Some(stored)) = (entry.fit_width, entry.p1_kernel_fit) else {
            continue; // degenerate fit: no prediction was stored
        };
        let f = ShapeFunction::new(entry.fit_kind, width).unwrap();
        let g = self_convolve(&f);
        let pred =
            predict_equilibrium(&model, &g, sidecar.initial_index, &dos_env, &dos_total).unwrap();
        let recomputed = pred.probs[sidecar.sys_level];
        assert!(
            (recomputed - stored).abs() <= 1e-12,
            "sigma_w {}: stored {stored} vs recomputed {recomputed}",
            entry.sigma_w
        );
        assert_eq!(Some(g.gamma_prime()), entry.gamma_prime_fit);
        checked += 1;
    }
    assert!(checked >= 2, "at least two strengths produced usable fits, got {checked}");
}
