//! End-to-end checks of the `cdf-mpc` binary: exit codes and output files.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cdf_mpc::scenario::Scenario;
use tempfile::TempDir;

const SHORT: &str = r#"
name = "short"
model = "unicycle"
x0 = [0.0, 0.0, 0.0, 0.0]
target = [1.0, 0.0, 0.0, 0.0]
duration = 1.0
dt = 0.1
horizon = 5
plant = "euler"

[cost]
q = [10.0, 10.0, 0.3, 0.3]
r = [1.0, 1.0]
p = [1000.0, 1000.0, 30.0, 30.0]

[safety]
mode = "cdf"
alpha = 1.0
delta = 0.01

[[obstacles]]
shape = "circle2d"
center = [5.0, 3.0]
radius = 1.0
sense_radius = 2.0
"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdf-mpc")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn run_writes_csv_and_json() {
    let tmp = TempDir::new().unwrap();
    let sc = write(tmp.path(), "short.toml", SHORT);
    let out_dir = tmp.path().join("out");
    let out = cli(&["run", "--scenario", &sc, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("short_cdf_s2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 11);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("short_cdf_s2.json")).unwrap()).unwrap();
    assert_eq!(json["safety_violations"], 0);
}

#[test]
fn short_run_short_of_target_exits_four() {
    let tmp = TempDir::new().unwrap();
    let sc = write(tmp.path(), "far.toml", &SHORT.replace("target = [1.0,", "target = [6.0,"));
    let out = cli(&["run", "--scenario", &sc, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn start_at_target_exits_zero() {
    let tmp = TempDir::new().unwrap();
    let text = SHORT.replace("x0 = [0.0, 0.0, 0.0, 0.0]", "x0 = [1.0, 0.0, 0.0, 0.0]");
    let sc = write(tmp.path(), "rest.toml", &text);
    let out = cli(&["run", "--scenario", &sc, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reruns_are_identical_apart_from_timing() {
    let tmp = TempDir::new().unwrap();
    let sc = write(tmp.path(), "short.toml", SHORT);
    let strip = |dir: &Path| {
        let text = fs::read_to_string(dir.join("short_cdf_s2.csv")).unwrap();
        let mut lines = text.lines().skip(1);
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let timing = header.iter().position(|h| *h == "solve_time").unwrap();
        lines
            .map(|l| l.split(',').enumerate().filter(|(i, _)| *i != timing).map(|(_, c)| c).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cli(&["run", "--scenario", &sc, "--out", a.to_str().unwrap()]);
    cli(&["run", "--scenario", &sc, "--out", b.to_str().unwrap()]);
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn malformed_field_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let sc = write(tmp.path(), "bad.toml", &SHORT.replace("radius = 1.0", "radius = \"one\""));
    let out = cli(&["run", "--scenario", &sc]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line") && err.contains("expected f64"), "{err}");
}

#[test]
fn unknown_key_and_missing_file_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let sc = write(tmp.path(), "extra.toml", &format!("colour = \"red\"\n{SHORT}"));
    assert_eq!(code(&cli(&["run", "--scenario", &sc])), 1);
    assert_eq!(code(&cli(&["run", "--scenario", "/nonexistent/x.toml"])), 1);
}

#[test]
fn bad_arguments_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let sc = write(tmp.path(), "short.toml", SHORT);
    assert_eq!(code(&cli(&["sweep", "--scenario", &sc, "--param", "gamma", "--values", ""])), 1);
    assert_eq!(code(&cli(&["sweep", "--scenario", &sc, "--param", "mass", "--values", "1"])), 1);
    assert_eq!(code(&cli(&["reproduce", "--suite", "table9"])), 1);
    assert_eq!(code(&cli(&["frobnicate"])), 1);
    assert_eq!(code(&cli(&["--help"])), 0);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = TempDir::new().unwrap();
    let sc = write(tmp.path(), "short.toml", SHORT);
    let out = cli(&["sweep", "--scenario", &sc, "--param", "sense_radius", "--values", "2,3", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(tmp.path().join("short_cdf_sweep_sense_radius.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("controller,tuning,start,solve_time_mean"));
    assert!(rows[1].starts_with("MPC-CDF,s2,0,") && rows[2].starts_with("MPC-CDF,s3,0,"), "{table}");
}

#[test]
fn validate_pf_reports_second_order() {
    let out = cli(&["validate-pf"]);
    assert_eq!(code(&out), 0);
    let reports: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for r in reports.as_array().unwrap() {
        let ratio = r["ratio"].as_f64().unwrap();
        assert!((3.2..=4.8).contains(&ratio), "{r}");
    }
}

#[test]
fn shipped_scenarios_round_trip() {
    for entry in fs::read_dir(cdf_mpc_cli::default_scenario_dir()).unwrap() {
        let path = entry.unwrap().path();
        let sc = Scenario::load(&path).unwrap();
        let again = Scenario::from_toml_str(&sc.to_toml_string().unwrap()).unwrap();
        assert_eq!(sc, again, "{}", path.display());
    }
}
