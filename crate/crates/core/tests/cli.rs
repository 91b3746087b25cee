//! End-to-end runs of the binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"))
}

fn run(args: &[&str], scenario: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_impact-hedge"))
        .args(args)
        .arg("--scenario")
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn price_constant_and_linear() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["price"], &scenario("constant"), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&dir.path().join("price.json"));
    assert!((v["price"].as_f64().unwrap() - 1.5).abs() < 1e-14);
    assert_eq!(v["claim_mean_gap"].as_f64().unwrap(), 0.0);

    let out = run(&["price"], &scenario("linear"), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("unique root      true"), "{stdout}");
    let v = json(&dir.path().join("price.json"));
    assert!((v["price"].as_f64().unwrap() - 1.0).abs() < 1e-8);
}

#[test]
fn invalid_scenarios_exit_two_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("call")).unwrap().replace("rate = 1.0", "rate = -1.0");
    let out = run(&["price"], &write_scenario(dir.path(), &text), dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("utility.terms[0].rate"));

    let text = std::fs::read_to_string(scenario("call")).unwrap().replace("[numerics]", "[numerics]\nseeed = 3");
    let out = run(&["price"], &write_scenario(dir.path(), &text), dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeed"));
}

fn surface_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn surface_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["surface", "--t-grid", "0:1:5", "--b-grid=-2:2:9"], &scenario("linear"), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let (header, rows) = surface_rows(&dir.path().join("surface.csv"));
    assert_eq!(header, ["t", "b1", "s_tilde1", "g_hat", "sigma11", "min_sv", "h1"]);
    assert_eq!(rows.len(), 45);
    for r in &rows {
        assert!((r[2] - (r[1] + (1.0 - r[0]))).abs() < 1e-10);
        assert!((r[4] - 1.0).abs() < 1e-10 && (r[6] - 1.0).abs() < 1e-10);
    }

    let out = run(&["surface", "--t-grid", "0:1:6", "--b-grid=-3:3:13"], &scenario("call"), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let (_, rows) = surface_rows(&dir.path().join("surface.csv"));
    for r in &rows {
        assert!((0.0..=1.0).contains(&r[6]), "H = {}", r[6]);
        if r[0] == 1.0 {
            assert_eq!((r[2], r[4]), (r[1], 1.0));
        }
    }

    let out = run(&["surface", "--t-grid", "0:2:3", "--b-grid", "0:1:2"], &scenario("call"), dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn hedge_linear_is_exact_and_manifest_lists_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["hedge", "--trajectories"], &scenario("linear"), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&dir.path().join("hedge.json"));
    assert!(summary["rms"].as_f64().unwrap() <= 1e-8);
    assert_eq!(summary["martingale_residual"]["exact"], Value::Bool(true));
    let manifest = json(&dir.path().join("manifest.json"));
    let names: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["hedge_errors.csv", "trajectories.csv", "hedge.json"]);
    assert_eq!(manifest["command"], "hedge");
    assert_eq!(manifest["numerics"]["time_steps"], 16);

    let again = run(&["hedge", "--trajectories", "--check-manifest"], &scenario("linear"), dir.path());
    assert_eq!(again.status.code(), Some(0), "{}", String::from_utf8_lossy(&again.stderr));

    let other_seed = run(&["hedge", "--trajectories", "--seed", "1", "--check-manifest"], &scenario("linear"), dir.path());
    assert_eq!(other_seed.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&other_seed.stderr).contains("manifest mismatch"));
}

#[test]
fn hedge_threshold_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["hedge", "--steps", "8", "--paths", "200", "--threshold", "1e-6"];
    let out = run(&args, &scenario("call"), dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds threshold"));
}

#[test]
fn scan_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["scan"], &scenario("basket2"), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&dir.path().join("scan.json"));
    assert_eq!(v["verdict"], "COMPLETE");
    let out = run(&["scan", "--t-grid", "0:1:11", "--b-grid", "0:0:1"], &scenario("example1"), dir.path());
    assert_eq!(out.status.code(), Some(4));
    let csv = std::fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    let zeros = csv.lines().skip(1).filter(|l| l.ends_with(",0")).count();
    assert_eq!(zeros, 5);
}

#[test]
fn verify_suites() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["verify", "--paths", "4000", "--steps", "32"], &scenario("call"), dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 8, "{stdout}");

    let text = std::fs::read_to_string(scenario("call")).unwrap().replace("[numerics]", "[numerics]\nsv_tolerance = 10.0");
    let out = run(&["verify", "--paths", "500", "--steps", "8"], &write_scenario(dir.path(), &text), dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(5), "{stdout}");
    let failing: Vec<&str> = stdout.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert_eq!(failing.len(), 1, "{stdout}");
    assert!(failing[0].contains("completeness"));

    let out = run(&["verify"], &scenario("example1"), dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("SKIP")).count(), 7, "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("FAIL") && l.contains("completeness")));
}

#[test]
fn simulate_writes_a_monotone_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--paths", "300", "--steps-list", "4,16,64"], &scenario("call"), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&dir.path().join("convergence.json"));
    assert_eq!(v["monotone"], Value::Bool(true));
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
}
