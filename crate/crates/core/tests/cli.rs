use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_photoreact"))
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn photoreact")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn window_on_toy_matches_exact_value() {
    let toy = data("toy3.fcidump");
    let out = run(&["simulate-window", toy.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!((v["exact"]["p_window"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    assert!((v["estimate"]["estimate"].as_f64().unwrap() - 0.8).abs() < 0.1);
    assert_eq!(v["plan"]["s"], 265);
}

#[test]
fn fit_degree_csv_has_one_row_per_point() {
    let out = run(&["fit-degree", "--range", "50:2000:6"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("50,560"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["fit-degree", "--range", "bad"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_3_with_error_json() {
    let out = run(&["simulate-window", "/nonexistent/h.fcidump", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["exit_code"], 3);
}

#[test]
fn reruns_are_byte_identical() {
    let toy = data("isc_toy.fcidump");
    let args = ["isc-proxy", toy.to_str().unwrap(), "--initial", "S0", "--seed", "9"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.csv");
    let out = run(&["--out", path.to_str().unwrap(), "estimate", "absorption", "--format", "csv"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 13);
    assert!(text.starts_with("label,n_orb,logical_qubits,toffoli_per_shot,shots"));
}

#[test]
fn vibronic_resources_default_anchor() {
    let out = run(&["vibronic-resources"]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["logical_qubits"], 146);
}
