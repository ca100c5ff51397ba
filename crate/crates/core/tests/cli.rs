use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn faf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faf")).args(args).output().expect("run faf")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const MODEL: &str = r#"{"d": 2, "noise_var": 1.0,
    "red": {"beta": [1.0, 0.0], "sigma": [[2.0, 0.0], [0.0, 1.0]]},
    "blue": {"beta": [0.0, 1.0], "sigma": [[1.0, 0.0], [0.0, 2.0]]}}"#;

const MC: &str = r#"{"model": {"d": 2, "noise_var": 1.0,
    "red": {"beta": [1.0, 0.0], "rho": 1.0}, "blue": {"beta": [0.0, 1.0], "rho": 2.0}},
    "lambda": 0.4, "n_r": 30, "n_b": 40, "estimator": "known_cov", "replicates": 200}"#;

#[test]
fn frontier_csv_has_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "m.json", MODEL);
    let out = dir.path().join("f.csv");
    let o = faf(&["frontier", "--model", model.to_str().unwrap(), "--grid", "101", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let text = std::fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 102);
    assert_eq!(lines[0], "lambda,risk_r,risk_b,beta_0,beta_1");
    assert!(lines[101].starts_with("1.0000000000000000e0,"));
}

#[test]
fn invalid_model_exits_2_and_names_the_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", &MODEL.replace("[[2.0, 0.0], [0.0, 1.0]]", "[[1.0, 2.0], [2.0, 1.0]]"));
    let o = faf(&["validate", "--model", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("red.sigma"));
    let good = write(dir.path(), "good.json", MODEL);
    assert!(faf(&["validate", "--model", good.to_str().unwrap()]).status.success());
}

#[test]
fn mc_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "mc.json", MC);
    let a = faf(&["mc", "--config", cfg.to_str().unwrap(), "--seed", "7"]);
    let b = faf(&["mc", "--config", cfg.to_str().unwrap(), "--seed", "7"]);
    assert!(a.status.success(), "{a:?}");
    assert_eq!(a.stdout, b.stdout);
    let c = faf(&["mc", "--config", cfg.to_str().unwrap(), "--seed", "8"]);
    assert_ne!(a.stdout, c.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let first_keys: Vec<&str> = text.lines().skip(1).take(3).map(str::trim).collect();
    assert!(first_keys[0].starts_with("\"estimator\""), "{first_keys:?}");
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(faf(&["nonsense"]).status.code(), Some(64));
    assert_eq!(faf(&["frontier", "--bogus"]).status.code(), Some(64));
    assert_eq!(faf(&[]).status.code(), Some(64));
    assert_eq!(faf(&["--help"]).status.code(), Some(0));
}

#[test]
fn strict_bounds_exit_4_on_violated_precondition() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "b.json",
        r#"{"d": 2, "n_r": 20, "n_b": 20, "lambda": 0.5, "rho_r": 1.0, "rho_b": 1.0, "noise_var": 1.0, "het": 1.0}"#,
    );
    let p = cfg.to_str().unwrap();
    assert_eq!(faf(&["bounds", "--config", p]).status.code(), Some(0));
    let o = faf(&["bounds", "--config", p, "--strict"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("48/alpha_g"));
    let csv = dir.path().join("s.csv");
    let o = faf(&["bounds", "--config", p, "--sweep", "n=50:800:log:5", "--out", csv.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 6);
}

#[test]
fn allocation_and_rank_deficiency_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.json", r#"{"d": 2, "lambda": 0.9, "rho_r": 1.0, "rho_b": 1.0, "noise_var": 1.0}"#);
    let o = faf(&["allocate", "--budget", "100", "--config", cfg.to_str().unwrap(), "--regime", "known-cov"]);
    let plan: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!((plan["n_r"].as_u64(), plan["n_b"].as_u64()), (Some(90), Some(10)));
    let o = faf(&["allocate", "--budget", "3", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));

    let small = write(dir.path(), "mc.json", &MC.replace("\"n_r\": 30", "\"n_r\": 1"));
    assert_eq!(faf(&["mc", "--config", small.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn sample_then_estimate_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "m.json", MODEL);
    let m = model.to_str().unwrap();
    let r = dir.path().join("r.csv");
    let b = dir.path().join("b.csv");
    for (g, p, s) in [("red", &r, "0"), ("blue", &b, "1")] {
        let o = faf(&["sample", "--model", m, "--group", g, "--n", "40", "--seed", "3", "--stream", s, "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{o:?}");
    }
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.csv.json")).unwrap()).unwrap();
    assert_eq!(sidecar["n"], 40);
    let from_csv = write(
        dir.path(),
        "e1.json",
        &format!(
            r#"{{"model": {MODEL}, "estimator": "pooled_ols", "lambda": 0.5, "red": {{"csv": "{}"}}, "blue": {{"csv": "{}"}}}}"#,
            r.display(),
            b.display()
        ),
    );
    let sampled = write(
        dir.path(),
        "e2.json",
        &format!(
            r#"{{"model": {MODEL}, "estimator": "pooled_ols", "lambda": 0.5, "red": {{"n": 40, "seed": 3}}, "blue": {{"n": 40, "seed": 3}}}}"#
        ),
    );
    let a = faf(&["estimate", "--config", from_csv.to_str().unwrap()]);
    let s = faf(&["estimate", "--config", sampled.to_str().unwrap()]);
    assert!(a.status.success(), "{a:?}");
    // the CSV round trip is exact, so both fits agree bit for bit
    assert_eq!(a.stdout, s.stdout);
}
