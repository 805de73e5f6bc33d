use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn fpd(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_fpd")).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const STRAIGHT: &str = r#"{"path": {"kind": "straight", "d_src_m": 550, "theta_src_rad": 0}}"#;
const STRAIGHT_MP: &str = r#"{
  "channel": {"n_pl": 4.2, "sigma_sh_sq_db2": 8.41, "beta_sh_m": 12.92, "gamma_th_db": -110,
              "multipath": {"kind": "rician", "k_ric": 1.59}},
  "path": {"kind": "straight", "d_src_m": 550, "theta_src_rad": 0}
}"#;
const LOG_SPIRAL: &str = r#"{
  "channel": {"k_db": -48.46, "n_pl": 4.2, "sigma_sh_sq_db2": 8.41, "beta_sh_m": 12.92, "gamma_th_db": -110},
  "path": {"kind": "log_spiral", "a_m": 11, "b_per_rad": 0.5, "theta_range_rad": [2.5, 0]}
}"#;
const CIRCLE: &str = r#"{
  "path": {"kind": "circle", "center_m": {"x": 300, "y": 0}, "radius_m": 0.5, "turns": 6},
  "grid": {"d_max_m": 15}
}"#;

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap()
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn certify_log_spiral() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", LOG_SPIRAL);
    let r = fpd(&["certify", "--config", s(&cfg)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = json(&r.stdout);
    assert_eq!(v["verdict"], "certified");
    let d_th = v["d_th_m"].as_f64().unwrap();
    assert!((d_th - 9.5).abs() <= 0.25, "{d_th}");
    assert!(v["kappa_max_per_m"].as_f64().unwrap() < v["kappa_th_per_m"].as_f64().unwrap());
}

#[test]
fn certify_straight_zero_curvature() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", STRAIGHT);
    let out = dir.path().join("cert.json");
    let r = fpd(&["certify", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(r.code, 0);
    let v = json(&std::fs::read_to_string(out).unwrap());
    assert!(v["certified"].as_bool().unwrap());
    assert!(v["kappa_max_per_m"].as_f64().unwrap().abs() < 1e-9);
}

#[test]
fn certify_small_circle_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", CIRCLE);
    let r = fpd(&["certify", "--config", s(&cfg)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("curvature"), "{}", r.stderr);
    assert_eq!(json(&r.stdout)["curvature_ok"], false);
}

#[test]
fn fpd_requires_certification_unless_forced() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", CIRCLE);
    let out = dir.path().join("f.csv");
    assert_eq!(fpd(&["fpd", "--config", s(&cfg), "--out", s(&out)]).code, 2);
    let r = fpd(&["fpd", "--config", s(&cfg), "--out", s(&out), "--force", "--multipath", "off"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("warning"));
}

#[test]
fn fpd_off_mode_contract_and_determinism() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", STRAIGHT);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(fpd(&["fpd", "--config", s(&cfg), "--out", s(&a), "--multipath", "off"]).code, 0);
    assert_eq!(fpd(&["fpd", "--config", s(&cfg), "--out", s(&b)]).code, 0);
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let (header, rows) = csv_rows(&String::from_utf8(ta).unwrap());
    assert_eq!(header, ["distance_m", "pdf_per_m", "cdf"]);
    assert_eq!(rows.len(), 2001);
    assert!(rows.windows(2).all(|w| w[1][2] >= w[0][2]));
    assert!(rows.iter().all(|r| r[2] <= 1.0));
}

fn expected_from_stderr(stderr: &str) -> f64 {
    let tail = stderr.split("expected_fpd_m=").nth(1).unwrap();
    tail.split_whitespace().next().unwrap().parse().unwrap()
}

#[test]
fn multipath_changes_the_law() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", STRAIGHT_MP);
    let on = fpd(&["fpd", "--config", s(&cfg), "--multipath", "on"]);
    let off = fpd(&["fpd", "--config", s(&cfg), "--multipath", "off"]);
    assert_eq!((on.code, off.code), (0, 0));
    let (e_on, e_off) = (expected_from_stderr(&on.stderr), expected_from_stderr(&off.stderr));
    assert!((e_on - e_off).abs() > 1.0, "{e_on} vs {e_off}");
    let (_, rows) = csv_rows(&on.stdout);
    assert_eq!(rows.len(), 2000);
    assert!((rows[0][0] - 0.03).abs() < 1e-12);
}

#[test]
fn multipath_on_without_rician_channel_is_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", STRAIGHT);
    assert_eq!(fpd(&["fpd", "--config", s(&cfg), "--multipath", "on"]).code, 3);
}

#[test]
fn config_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.json", r#"{"path": {"kind": "straight"}}"#);
    let neg = write(&dir, "neg.json", r#"{"path": {"kind": "straight", "d_src_m": 550, "theta_src_rad": 0}, "delta_d_m": 0}"#);
    let missing = write(&dir, "w.json", r#"{"path": {"kind": "waypoints", "file": "nope.csv"}}"#);
    for cfg in [&bad, &neg, &missing] {
        assert_eq!(fpd(&["certify", "--config", s(cfg)]).code, 3);
    }
    assert_eq!(fpd(&["certify", "--config", s(&dir.path().join("absent.json"))]).code, 3);
    assert_eq!(fpd(&["certify"]).code, 3);
    assert_eq!(fpd(&["certify", "--bogus"]).code, 3);
    assert_eq!(fpd(&["--help"]).code, 0);
}

#[test]
fn waypoints_config_relative_to_file() {
    let dir = TempDir::new().unwrap();
    let rows: String = (0..=40).map(|i| format!("{},{}\n", 200.0 - i as f64, 0.5 * i as f64)).collect();
    write(&dir, "w.csv", &format!("x_m,y_m\n{rows}"));
    let cfg = write(&dir, "c.json", r#"{"path": {"kind": "waypoints", "file": "w.csv"}, "grid": {"d_max_m": 30}}"#);
    let r = fpd(&["certify", "--config", s(&cfg)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
}

#[test]
fn validate_straight_no_multipath_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", STRAIGHT);
    let r = fpd(&["validate", "--config", s(&cfg)]);
    assert_eq!(r.code, 0, "{}\n{}", r.stdout, r.stderr);
    let v = json(&r.stdout);
    assert_eq!(v["pass"], true);
    assert_eq!(v["trials"], 100_000);
    assert!(v["ks"].as_f64().unwrap() < 0.02);
}

#[test]
fn validate_straight_multipath_passes_and_dumps_trials() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", STRAIGHT_MP);
    let trials = dir.path().join("t.csv");
    let r = fpd(&["validate", "--config", s(&cfg), "--trials-out", s(&trials)]);
    assert_eq!(r.code, 0, "{}\n{}", r.stdout, r.stderr);
    let v = json(&r.stdout);
    assert_eq!(v["solver"], "recursion");
    assert!(v["ks"].as_f64().unwrap() < 0.02);
    let text = std::fs::read_to_string(trials).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "trial,crossing_step,crossing_distance_m,censored");
    assert_eq!(lines.count() as u64, v["accepted"].as_u64().unwrap());
}

#[test]
fn validate_detects_corrupted_kernel() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        r#"{"path": {"kind": "straight", "d_src_m": 550, "theta_src_rad": 0}, "mc": {"trials": 20000, "seed": 9}}"#,
    );
    let r = fpd(&["validate", "--config", s(&cfg), "--corrupt-kernel"]);
    assert_eq!(r.code, 4, "{}", r.stdout);
    assert_eq!(json(&r.stdout)["pass"], false);
}

#[test]
fn sweep_rows_follow_input_order() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", STRAIGHT_MP);
    let r = fpd(&["sweep", "--config", s(&cfg), "--parameter", "beta-sh", "--values", "5,12.92,25"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let (header, rows) = csv_rows(&r.stdout);
    assert_eq!(header, ["value", "expected_fpd_m", "residual_mass"]);
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), [5.0, 12.92, 25.0]);

    let rev = fpd(&["sweep", "--config", s(&cfg), "--parameter", "beta-sh", "--values", "25,12.92,5"]);
    assert_eq!(rev.code, 4);
    assert!(rev.stderr.contains("not strictly increasing"));
    let (_, back) = csv_rows(&rev.stdout);
    assert_eq!(back[0][1], rows[2][1]);
}

#[test]
fn sweep_from_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", STRAIGHT_MP);
    let sweep = write(&dir, "s.json", r#"{"parameter": "k_ric", "values": [0.5, 1.59, 10]}"#);
    let out = dir.path().join("s.csv");
    let r = fpd(&["sweep", "--config", s(&cfg), "--sweep", s(&sweep), "--out", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let (_, rows) = csv_rows(&std::fs::read_to_string(out).unwrap());
    assert!(rows.windows(2).all(|w| w[1][1] > w[0][1]));
    let bad = write(&dir, "b.json", r#"{"parameter": "k_ric", "values": []}"#);
    assert_eq!(fpd(&["sweep", "--config", s(&cfg), "--sweep", s(&bad)]).code, 3);
}
