//! Command-line behavior: outputs, files and exit codes.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dualmesh"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn analyze_prints_tables_and_flags() {
    let o = run(&["analyze"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for needle in [
        "End-to-end latency",
        "Battery life (500 mAh)",
        "Architecture comparison",
        "434 ms",
        "19.0120 mJ",
        "FLAG ble_capacity",
        "FLAG sf7_max_nodes",
        "FLAG aggregation_gain",
        "FLAG toa_sf10",
    ] {
        assert!(out.contains(needle), "missing {needle}");
    }
}

#[test]
fn analyze_formula_mode_and_bad_input() {
    let o = run(&["analyze", "--airtime-mode", "formula"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("airtime mode: formula"));
    let o = run(&["analyze", "--beta", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("beta"));
    let o = run(&["analyze", "--airtime-mode", "guess"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_bridged_topology() {
    let fig1 = scenario("fig1.scenario");
    let o = run(&["simulate", fig1.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("latency inter-1"), "{out}");
    assert!(out.contains("cluster heads at end: 30 60"), "{out}");
}

#[test]
fn simulate_csv_is_deterministic_per_seed() {
    let fig1 = scenario("fig1.scenario");
    let path = fig1.to_str().unwrap();
    let a = run(&["simulate", path, "--seed", "7", "--csv"]);
    let b = run(&["simulate", path, "--seed", "7", "--csv"]);
    assert_eq!(a.status.code(), Some(0));
    assert!(stdout(&a).starts_with("schema_version,1\n"));
    assert!(stdout(&a).contains("meta,seed,7"));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn malformed_scenario_exits_2_with_field() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = dir.path().join("unknown.scenario");
    std::fs::write(&unknown, "[scenario]\nduration_s = 1.0\nspeed = 3\n").unwrap();
    let o = run(&["simulate", unknown.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("speed"), "{}", stderr(&o));

    let invalid = dir.path().join("invalid.scenario");
    std::fs::write(&invalid, "[scenario]\nduration_s = 0.0\n").unwrap();
    let o = run(&["simulate", invalid.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scenario.duration_s"), "{}", stderr(&o));

    let o = run(&["simulate", dir.path().join("missing.scenario").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn out_dir_receives_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let line = scenario("line.scenario");
    let o = run(&["simulate", line.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("line.csv")).unwrap();
    assert!(csv.starts_with("schema_version,1"));
    assert!(dir.path().join("line.txt").exists());
}

#[test]
fn sweep_runs_each_value() {
    let line = scenario("line.scenario");
    let o = run(&["sweep", line.to_str().unwrap(), "--param", "scenario.seed", "--values", "1,2,3", "--csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("param,value,"));
    assert!(rows[1].starts_with("scenario.seed,1,2,"));
    let o = run(&["sweep", line.to_str().unwrap(), "--param", "radio.warp", "--values", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("radio.warp"));
}

#[test]
fn validate_passes_on_a_correct_build() {
    let o = run(&["validate"]);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{out}");
    assert!(out.contains("13/13 checks passed"), "{out}");
    assert!(!out.contains("FAIL"));
}
