use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use thinnet::cli::{main_with, EXIT_OK, EXIT_USAGE};

const COARSE: &str = r#"schema_version = 1

[data]
q1 = "step(t/0.9)"
q2 = "0.5*step(t/0.9)"
q3 = "0.5*step(t/0.9)"
phi1 = "step(t/0.9)*bump((x-0.1)/0.7)*(1+0.5*cos(theta))"
phi2 = "step(t/0.9)*bump((x-0.1)/0.7)*(1+0.5*cos(theta))"
phi3 = "step(t/0.9)*bump((x-0.1)/0.7)*(1+0.5*cos(theta))"
phi0 = "step(t/0.9)*step((-x-0.24)/0.06)"

[run]
mode = "sweep"
M = 2
eps_list = [0.3]
M_list = [1]
seed = 4

[numerics]
disk_nx = 40
disk_nt = 20
node_spacing = 0.05
time_samples = 4
node_solvability_tol = 1e-3
residual_samples = 300
ref_cells_per_radius = 4
ref_steps = 10
"#;

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("thinnet-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn run(dir: &Path, extra: &[&str]) -> i32 {
    let cfg = dir.join("run.toml");
    if !cfg.exists() {
        fs::write(&cfg, COARSE).unwrap();
    }
    let mut argv: Vec<String> = vec!["thinnet".into(), "--config".into(), cfg.display().to_string()];
    argv.extend(extra.iter().map(|s| s.to_string()));
    main_with(&argv)
}

fn manifest_hashes(dir: &Path) -> Vec<(String, String)> {
    let text = fs::read_to_string(dir.join("manifest.toml")).unwrap();
    let doc: toml::Table = text.parse().unwrap();
    doc["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["path"].as_str().unwrap().to_string(), f["sha256"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn sweep_is_deterministic_and_manifest_matches() {
    let dir = scratch("det");
    let (a, b) = (dir.join("a"), dir.join("b"));
    assert_eq!(run(&dir, &["--out", a.to_str().unwrap()]), EXIT_OK);
    assert_eq!(run(&dir, &["--out", b.to_str().unwrap()]), EXIT_OK);
    for f in ["residuals.csv", "convergence.csv", "reference.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let files = manifest_hashes(&a);
    assert!(files.iter().any(|(p, _)| p == "residuals.csv"));
    for (path, sha) in files {
        let data = fs::read(a.join(&path)).unwrap();
        assert_eq!(format!("{:x}", Sha256::digest(&data)), sha, "{path}");
    }
    let res = fs::read_to_string(a.join("residuals.csv")).unwrap();
    assert!(res.starts_with("M,alpha,gamma,eps,zone,samples,sup,predicted,ratio"));
    assert!(res.lines().skip(1).all(|l| l.split(',').nth(6).unwrap().parse::<f64>().unwrap().is_finite()));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn seed_changes_sampling() {
    let dir = scratch("seed");
    let (a, b) = (dir.join("a"), dir.join("b"));
    assert_eq!(run(&dir, &["--mode", "sweep", "--out", a.to_str().unwrap()]), EXIT_OK);
    assert_eq!(run(&dir, &["--mode", "sweep", "--seed", "99", "--out", b.to_str().unwrap()]), EXIT_OK);
    assert_ne!(fs::read(a.join("residuals.csv")).unwrap(), fs::read(b.join("residuals.csv")).unwrap());
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn expand_writes_every_coefficient() {
    let dir = scratch("expand");
    let out = dir.join("o");
    assert_eq!(run(&dir, &["--mode", "expand", "--eps-override", "0.2", "--out", out.to_str().unwrap()]), EXIT_OK);
    let inv = fs::read_to_string(out.join("inventory.txt")).unwrap();
    for name in ["w_a-1", "w_a", "w_a+1", "w_0", "w_1", "N_a", "Pi_0"] {
        assert!(inv.lines().any(|l| l == name), "{name} missing from inventory");
    }
    for label in ["a-1", "a", "a+1", "0", "1"] {
        for e in 1..=3 {
            assert!(out.join(format!("coefficients/w_{label}_edge{e}.csv")).exists());
        }
        assert!(out.join(format!("coefficients/N_{label}.txt")).exists());
    }
    let deps = fs::read_to_string(out.join("dependencies.csv")).unwrap();
    assert!(deps.lines().any(|l| l.starts_with("d_a,") && l.contains("phi0")));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn reference_mode_closes_mass_ledger() {
    let dir = scratch("reference");
    let out = dir.join("o");
    assert_eq!(run(&dir, &["--mode", "reference", "--out", out.to_str().unwrap()]), EXIT_OK);
    let summary = fs::read_to_string(out.join("reference/summary.csv")).unwrap();
    let header: Vec<&str> = summary.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| h.contains("ledger")).expect("ledger column");
    for line in summary.lines().skip(1) {
        let v: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
        assert!(v <= 1e-8, "{line}");
    }
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = scratch("usage");
    assert_eq!(main_with(&["thinnet".into(), "--config".into(), dir.join("missing.toml").display().to_string()]), EXIT_USAGE);
    assert_eq!(main_with(&["thinnet".into(), "--bogus".into()]), EXIT_USAGE);
    assert_eq!(run(&dir, &["--mode", "fly"]), EXIT_USAGE);
    let bad = dir.join("bad.toml");
    fs::write(&bad, "schema_version = 1\n[network]\nalpha = 0.5\ngamma = 0.2\n").unwrap();
    assert_eq!(main_with(&["thinnet".into(), "--config".into(), bad.display().to_string()]), EXIT_USAGE);
    let _ = fs::remove_dir_all(&dir);
}
