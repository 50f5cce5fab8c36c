use std::path::Path;
use std::process::{Command, Output};

use replica_sync::output::Table;
use replica_sync::protocols::PROTOCOL2_SUMMARY_HEADER;
use replica_sync_cli::manifest::{sha256_hex, Manifest};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_replica-sync")).args(args).output().expect("binary runs")
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let out = run(&["protocol1", "--g", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
    assert_eq!(run(&["protocol1", "--out", "x", "--backend", "gpu"]).status.code(), Some(2));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"protocol1": {"t_int_stepp": 2}}"#).unwrap();
    let out = run(&["protocol1", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t_int_stepp"));

    let out = run(&["protocol2", "--seeds", "4", "--out", dir.path().join("o2").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("protocol2") && err.contains("seeds"), "{err}");
    // nothing is computed or written before validation passes
    assert!(!dir.path().join("o2").join("manifest.json").exists());
}

#[test]
fn bifurcation_prints_the_root_and_checksums_match() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["bifurcation", "--kappa", "2.0", "--g-grid", "0,0.5,1", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let u: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("u*(kappa=2) = "))
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| panic!("no root in {stdout}"));
    assert!((u - 1.91501).abs() < 5e-6, "{u}");

    let m = manifest(dir.path());
    assert_eq!(m.command, "bifurcation");
    assert_eq!(m.config.bifurcation.kappa, Some(2.0));
    assert_eq!(m.config.g_grid, Some(vec![0.0, 0.5, 1.0]));
    for a in &m.artifacts {
        let bytes = std::fs::read(dir.path().join(&a.file)).unwrap();
        assert_eq!((sha256_hex(&bytes), bytes.len()), (a.sha256.clone(), a.bytes), "{}", a.file);
    }
    let summary = std::fs::read_to_string(dir.path().join("gap_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn out_of_regime_results_are_flagged_not_dropped() {
    let dir = tempfile::tempdir().unwrap();
    // σ = 0 starts both replicas together, leaving no difference signal
    let out = run(&[
        "protocol2",
        "--sigma",
        "0",
        "--steps",
        "60",
        "--seeds",
        "16",
        "--bands",
        "1-2,7-8",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let cfg_err = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "{cfg_err}");
    let t =
        Table::read(std::fs::File::open(dir.path().join("protocol2_summary.csv")).unwrap(), &PROTOCOL2_SUMMARY_HEADER)
            .unwrap();
    assert_eq!(t.rows().len(), 1);
    assert_eq!(t.column("gint").unwrap(), vec![None]);
    let json = std::fs::read_to_string(dir.path().join("protocol2.json")).unwrap();
    assert!(json.contains("\"flag\": \""), "{json}");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"seed": 1, "g": 0.2, "ou": {"trajectories": 50}}"#).unwrap();
    let out_dir = dir.path().join("o");
    let out = run(&[
        "simulate-ou",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--steps",
        "10",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&out_dir);
    assert_eq!((m.seed, m.config.g, m.config.schedule.steps, m.config.ou.trajectories), (9, Some(0.2), 10, 50));
    let csv = std::fs::read_to_string(out_dir.join("ou.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 11);
}
