use std::fs;
use std::path::Path;
use std::process::Command;

use burgers_cli::run_criterion;
use burgers_core::GridSpec;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_burgers-spectra"))
}

fn run(args: &[&str], out: &Path) -> std::process::Output {
    bin().args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn digest(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

fn data_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines().skip(2).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn profile_starts_at_the_vortex_center_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["profile"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let path = dir.path().join("profile.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# burgers-spectra v1"));
    assert_eq!(lines.next(), Some("r,g,u_g,u_theta"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 201);
    let pi = std::f64::consts::PI;
    assert_eq!(rows[0][0], 0.0);
    assert!((rows[0][1] - 1.0 / (4.0 * pi)).abs() < 1e-15);
    assert!((rows[0][2] - 1.0 / (8.0 * pi)).abs() < 1e-15);
    let first = digest(&path);
    assert!(run(&["profile"], dir.path()).status.success());
    assert_eq!(digest(&path), first);
}

#[test]
fn evolve_is_deterministic_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["evolve", "--set", "grid.n_r=24", "--set", "grid.n_max=3", "--set", "evolve.t_end=1", "--set", "evolve.order=2", "--set", "evolve.fit_window=[]"];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert!(run(&[&args[..], &["--seed", "5"]].concat(), &a).status.success());
    assert!(run(&[&args[..], &["--seed", "5"]].concat(), &b).status.success());
    assert!(run(&[&args[..], &["--seed", "6"]].concat(), &c).status.success());
    assert_eq!(digest(&a.join("evolution.csv")), digest(&b.join("evolution.csv")));
    assert_ne!(digest(&a.join("evolution.csv")), digest(&c.join("evolution.csv")));
    let text = fs::read_to_string(a.join("evolution.csv")).unwrap();
    assert!(text.starts_with("# burgers-spectra v1\nt,norm_h,norm_3,k,circulation\n"));
    assert_eq!(data_rows(&text).len(), 11);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("evolution.json")).unwrap()).unwrap();
    assert_eq!(json["model"], "nonlinear2d");
    assert_eq!(json["grid"]["n_r"], 24);
}

#[test]
fn stretched_evolution_from_config_file_writes_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"grid": {"n_r": 24, "n_max": 3},
            "evolve": {"model": "stretched", "alpha": 2, "k0": 1, "t_end": 0.5, "order": 2,
                       "fit_window": [], "snapshots": [0.5]}}"#,
    )
    .unwrap();
    let o = run(&["evolve", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let snap: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("snapshot_t0.5.json")).unwrap()).unwrap();
    assert_eq!(snap["format"], "burgers-spectra/modefield/v1");
    assert_eq!(snap["components"], 3);
    let rows = data_rows(&fs::read_to_string(dir.path().join("evolution.csv")).unwrap());
    for r in &rows {
        assert_eq!(r[3], (-r[0]).exp());
    }
}

#[test]
fn spectrum_summary_respects_the_gap() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["spectrum", "--set", "grid.n_r=32", "--set", "grid.n_max=4", "--set", "spectrum.alphas=[0, 5]"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("spectrum_summary.csv")).unwrap();
    assert!(text.contains("alpha,gap_h,gap_3,gap_h_divfree"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(r[1] <= -1.5 + 1e-6 && r[2] <= -0.5 + 1e-6 && r[3] <= -2.0 + 1e-6, "{r:?}");
    }
    assert!(dir.path().join("spectrum_h_alpha5.json").exists());
    assert!(dir.path().join("spectrum_3_alpha0.json").exists());
}

#[test]
fn growth_of_the_passive_vortex_starts_at_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["growth", "--set", "grid.n_r=16", "--set", "grid.n_max=2", "--set", "growth.alphas=[0]", "--set", "growth.t_end=2", "--threads", "1"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&fs::read_to_string(dir.path().join("growth_summary.csv")).unwrap());
    assert_eq!(rows.len(), 1);
    assert!((rows[0][2] - 1.0).abs() < 1e-10);
    assert_eq!(rows[0][3], 0.0);
    assert!(dir.path().join("growth_alpha0_k1.csv").exists());
}

#[test]
fn verify_reports_pass_and_failure_through_the_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--set", "verify.criteria=[1, 3]"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["criteria"].as_array().unwrap().len(), 2);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.contains("PASS")).count(), 2);

    // a grid too coarse for the quadrature self-test fails every criterion without a panic
    let o = run(&["verify", "--set", "verify.criteria=[1]", "--set", "grid.n_r=3"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn bad_arguments_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["profile", "--set", "grid.bogus=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown configuration key"));
    let o = run(&["verify", "--set", "verify.criteria=[13]"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_criterion_is_a_failed_result() {
    let spec = GridSpec { n_r: 16, n_max: 2, r_max: 20.0 };
    let r = run_criterion(spec, 0, 13);
    assert!(!r.passed);
}
