mod common;

use std::path::Path;
use std::process::{Command, Output};

use schur_alloc::{covmat, portfolio, WeightVector};
use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_schur-alloc"))
        .args(args)
        .output()
        .unwrap()
}

fn equi3(dir: &Path) -> String {
    let rows = vec![vec![1.0, 0.5, 0.5], vec![0.5, 1.0, 0.5], vec![0.5, 0.5, 1.0]];
    common::write_csv(dir, "equi3.csv", &rows).to_str().unwrap().to_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn weights(v: &Value) -> Vec<f64> {
    v["weights"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

#[test]
fn allocate_debiased_gives_equal_weights() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.json");
    let o = bin(&[
        "allocate",
        "--cov",
        &equi3(dir.path()),
        "--gamma",
        "1",
        "--mode",
        "schur_debiased",
        "--terminal",
        "minvar",
        "--m",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&out);
    assert!(common::max_abs_diff(&weights(&v), &[1.0 / 3.0; 3]) < 1e-10);
    assert_eq!(v["mode"], "schur_debiased");
    assert_eq!(v["labels"][0], "a0");
    assert!(v["diagnostics"]["splits"].is_array());
}

#[test]
fn allocate_hrp_vector() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&[
        "allocate",
        "--cov",
        &equi3(dir.path()),
        "--gamma",
        "0",
        "--mode",
        "hrp",
        "--m",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(common::max_abs_diff(&weights(&v), &[2.0 / 7.0, 2.0 / 7.0, 3.0 / 7.0]) < 1e-12);
    assert_eq!(v["gamma"]["gamma_c"], 0.0);
}

#[test]
fn allocate_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.json");
    let missing = dir.path().join("nope.csv");
    let o = bin(&[
        "allocate",
        "--cov",
        missing.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    assert_eq!(String::from_utf8_lossy(&o.stderr).lines().count(), 1);
}

#[test]
fn allocate_singular_is_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cov = common::write_csv(dir.path(), "s.csv", &[vec![1.0, 1.0], vec![1.0, 1.0]]);
    let o = bin(&["allocate", "--cov", cov.to_str().unwrap(), "--m", "5"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn allocate_invalid_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["allocate", "--cov", &equi3(dir.path()), "--gamma", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn allocate_from_returns_with_labels_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    std::fs::write(
        &path,
        "x,y,z\n0.01,0.02,-0.01\n-0.02,0.01,0.00\n0.03,-0.01,0.02\n0.00,0.02,-0.02\n0.01,0.00,0.01\n",
    )
    .unwrap();
    let o = bin(&[
        "allocate",
        "--returns",
        path.to_str().unwrap(),
        "--format",
        "csv",
        "--m",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "label,weight");
    assert!(lines[1].starts_with("x,"));
    let total: f64 = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn weights_json_round_trips_variance() {
    let dir = tempfile::tempdir().unwrap();
    let cov_path = common::write_csv(dir.path(), "u.csv", &common::UNSTABLE_FOUR.map(|r| r.to_vec()));
    let out = dir.path().join("w.json");
    let o = bin(&[
        "allocate",
        "--cov",
        cov_path.to_str().unwrap(),
        "--m",
        "1",
        "--gamma",
        "0.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&out);
    let cov = covmat::read_matrix_file(&cov_path).unwrap();
    let var = portfolio::portfolio_variance(&cov, &WeightVector::from_slice(&weights(&v))).unwrap();
    assert!((var - v["diagnostics"]["portfolio_variance"].as_f64().unwrap()).abs() <= 1e-12);
}

#[test]
fn shrink_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cov = common::write_csv(dir.path(), "u.csv", &common::UNSTABLE_FOUR.map(|r| r.to_vec()));
    let (shrunk, curve) = (dir.path().join("s.csv"), dir.path().join("c.csv"));
    let o = bin(&[
        "shrink",
        "--cov",
        cov.to_str().unwrap(),
        "--shrunk",
        shrunk.to_str().unwrap(),
        "--curve",
        curve.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let xi = v["xi"].as_f64().unwrap();
    assert!((0.96..=0.98).contains(&xi));
    let s = covmat::read_matrix_file(&shrunk).unwrap();
    assert!((s.get(0, 1) - xi * common::UNSTABLE_FOUR[0][1]).abs() < 1e-12);
    let c = std::fs::read_to_string(&curve).unwrap();
    assert_eq!(c.lines().next().unwrap(), "xi,clipped_variance");
    assert_eq!(c.lines().count(), 202);
}

#[test]
fn shrink_diagonal_picks_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cov = common::write_csv(
        dir.path(),
        "d.csv",
        &[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 3.0]],
    );
    let curve = dir.path().join("c.csv");
    let o = bin(&[
        "shrink",
        "--cov",
        cov.to_str().unwrap(),
        "--curve",
        curve.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["xi"].as_f64().unwrap(), 0.0);
    let text = std::fs::read_to_string(&curve).unwrap();
    let vals: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert!(vals.iter().all(|x| *x == vals[0]));
}

#[test]
fn shrink_non_square() {
    let dir = tempfile::tempdir().unwrap();
    let cov = common::write_csv(dir.path(), "n.csv", &[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]]);
    let o = bin(&["shrink", "--cov", cov.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seriate_reports_order() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["seriate", "--cov", &equi3(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["order"], serde_json::json!([0, 1, 2]));
}

fn simulate(dir: &Path, tag: &str, extra: &[&str]) -> (Output, std::path::PathBuf, std::path::PathBuf) {
    let out = dir.join(format!("{tag}-rows.csv"));
    let summary = dir.join(format!("{tag}-summary.csv"));
    let mut args = vec![
        "simulate",
        "--out",
        out.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    (bin(&args), out, summary)
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("g.svg");
    let extra = ["--trials", "3", "--seed", "5", "--svg", svg.to_str().unwrap()];
    let (o1, r1, s1) = simulate(dir.path(), "a", &extra);
    let (o2, r2, s2) = simulate(dir.path(), "b", &extra);
    assert_eq!(o1.status.code(), Some(0), "{}", String::from_utf8_lossy(&o1.stderr));
    assert_eq!(o2.status.code(), Some(0));
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());
    assert_eq!(std::fs::read(&s1).unwrap(), std::fs::read(&s2).unwrap());
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    let rows = std::fs::read_to_string(&r1).unwrap();
    assert_eq!(rows.lines().next().unwrap(), "trial,gamma,oos_variance,normalized");
    assert_eq!(rows.lines().count(), 1 + 3 * 5);
}

#[test]
fn simulate_zero_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _, s) = simulate(dir.path(), "z", &["--trials", "2", "--gamma-grid", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&s).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines, ["gamma,mean,median,q10,q90", "0,1,1,1,1"]);
}

#[test]
fn simulate_invalid_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (o, r, _) = simulate(dir.path(), "bad", &["--gamma-grid", "0,1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!r.exists());
}

#[test]
fn simulate_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"p": 10, "rho": 0.3, "a": 40, "o": 20, "gamma_grid": [0, 1], "trials": 2, "seed": 3,
            "allocation": {"terminal_size": 2, "fitness": "minvar_variance"}}"#,
    )
    .unwrap();
    let (o, r, _) = simulate(dir.path(), "cfg", &["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&r).unwrap().lines().count(), 5);
    std::fs::write(
        &cfg,
        r#"{"p": 10, "rho": 0.3, "o": 20, "gamma_grid": [0], "trials": 1, "surprise": 1}"#,
    )
    .unwrap();
    let (o, _, _) = simulate(dir.path(), "cfg2", &["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
