use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use quantaw_core::examples::example_json;
use quantaw_core::problem::ResultFile;
use serde_json::{json, Value};
use tempfile::TempDir;

fn quantaw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quantaw"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path
}

fn example(id: &str) -> Value {
    serde_json::from_str(example_json(id).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Example 1 synthesized once per test that needs it.
fn synthesized_example1(dir: &Path) -> (PathBuf, PathBuf) {
    let problem = write_json(dir, "problem.json", &example("example1"));
    let result = dir.join("result.json");
    let out = quantaw(&["synth", s(&problem), "-o", s(&result)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    (problem, result)
}

#[test]
fn wrong_b_height_is_schema_error_naming_b() {
    let dir = TempDir::new().unwrap();
    let mut v = example("example1");
    v["plant"]["B"] = json!([[0.0], [1.0]]);
    let problem = write_json(dir.path(), "bad.json", &v);
    let out = quantaw(&["synth", s(&problem), "-o", s(&dir.path().join("r.json"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("B_p"), "{}", stderr(&out));
}

#[test]
fn malformed_json_and_unknown_fields_are_schema_errors() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(
        code(&quantaw(&["synth", s(&path), "-o", s(&dir.path().join("r.json"))])),
        2
    );

    let mut v = example("example2");
    v["plant"]["F"] = json!([[1.0]]);
    let path = write_json(dir.path(), "extra.json", &v);
    assert_eq!(
        code(&quantaw(&["synth", s(&path), "-o", s(&dir.path().join("r.json"))])),
        2
    );
}

#[test]
fn unstable_loop_exits_3() {
    let dir = TempDir::new().unwrap();
    let v = json!({
        "plant": {"A": [[2.0]], "B": [[1.0]], "C": [[1.0]]},
        "controller": {"A": [[0.0]], "B": [[0.0]], "C": [[0.0]], "D": [[0.0]]},
        "theta": [0.1]
    });
    let problem = write_json(dir.path(), "unstable.json", &v);
    let out = quantaw(&["synth", s(&problem), "-o", s(&dir.path().join("r.json"))]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn grid_without_feasible_point_exits_4() {
    let dir = TempDir::new().unwrap();
    let problem = write_json(dir.path(), "p.json", &example("example2"));
    let out = quantaw(&[
        "synth",
        s(&problem),
        "-o",
        s(&dir.path().join("r.json")),
        "--tau-grid",
        "0.995:0.999:3",
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(!dir.path().join("r.json").exists());
}

#[test]
fn bad_override_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let problem = write_json(dir.path(), "p.json", &example("example2"));
    let r = s(&dir.path().join("r.json")).to_string();
    assert_eq!(
        code(&quantaw(&["synth", s(&problem), "-o", &r, "--tau-grid", "0.5:0.1"])),
        2
    );
    assert_eq!(
        code(&quantaw(&["synth", s(&problem), "-o", &r, "--backend", "nope"])),
        2
    );
    assert_eq!(code(&quantaw(&["synth", s(&problem), "-o", &r, "--tol", "abc"])), 2);
}

#[test]
fn synth_verify_and_tampering() {
    let dir = TempDir::new().unwrap();
    let (problem, result) = synthesized_example1(dir.path());

    let out = quantaw(&["verify", s(&problem), s(&result), "--samples", "20", "--seed", "7"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mu"));
    assert!(stdout.contains("lambda_max(main)"));

    let original: Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();

    let mut scaled = original.clone();
    for row in scaled["E"].as_array_mut().unwrap() {
        for v in row.as_array_mut().unwrap() {
            *v = json!(v.as_f64().unwrap() * 100.0);
        }
    }
    let path = write_json(dir.path(), "scaled.json", &scaled);
    let out = quantaw(&["verify", s(&problem), s(&path), "--samples", "0"]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("main condition"), "{}", stderr(&out));

    let mut negated = original.clone();
    negated["P"][0][0] = json!(-1.0);
    let path = write_json(dir.path(), "negated.json", &negated);
    let out = quantaw(&["verify", s(&problem), s(&path), "--samples", "0"]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("P > 0"), "{}", stderr(&out));

    let mut other = example("example1");
    other["synthesis"]["epsilon"] = json!(1e-5);
    let other = write_json(dir.path(), "other.json", &other);
    assert_eq!(code(&quantaw(&["verify", s(&other), s(&result), "--samples", "0"])), 2);
}

#[test]
fn result_file_round_trips_bit_for_bit() {
    let dir = TempDir::new().unwrap();
    let (_, result) = synthesized_example1(dir.path());
    let text = std::fs::read_to_string(&result).unwrap();
    let r = ResultFile::from_json(&text).unwrap();
    let back = ResultFile::from_json(&r.to_json()).unwrap();
    assert_eq!(r, back);
    for (a, b) in r.p.iter().zip(back.p.iter()).chain(r.e.iter().zip(back.e.iter())) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(r.to_json(), back.to_json());
    assert!(r.converged);
    assert_eq!(r.omega_trace.len(), r.iterations + 1);
}

#[test]
fn simulate_writes_both_runs() {
    let dir = TempDir::new().unwrap();
    let (problem, result) = synthesized_example1(dir.path());
    let out_dir = dir.path().join("sim");
    let out = quantaw(&["simulate", s(&problem), s(&result), "-o", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let on = std::fs::read_to_string(out_dir.join("trajectory_compensated.csv")).unwrap();
    let off = std::fs::read_to_string(out_dir.join("trajectory_uncompensated.csv")).unwrap();
    assert_eq!(on.lines().count(), 62);
    assert_eq!(off.lines().count(), 62);
    assert!(on.lines().skip(1).all(|l| l.ends_with(",1")));
    assert!(off.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn horizon_zero_gives_single_row() {
    let dir = TempDir::new().unwrap();
    let (_, result) = synthesized_example1(dir.path());
    let mut v = example("example1");
    v["simulation"]["horizon"] = json!(0);
    let problem = write_json(dir.path(), "h0.json", &v);
    let out_dir = dir.path().join("sim");
    let out = quantaw(&["simulate", s(&problem), s(&result), "-o", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let on = std::fs::read_to_string(out_dir.join("trajectory_compensated.csv")).unwrap();
    assert_eq!(on.lines().count(), 2);
    assert!(on.lines().nth(1).unwrap().starts_with("0,1,2,-1,0,0,0,"));
}

#[test]
fn example2_schedule_timeline() {
    let dir = TempDir::new().unwrap();
    let out = quantaw(&["reproduce", "example2", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in [
        "problem.json",
        "result.json",
        "certificate.json",
        "trace.csv",
        "trajectory_compensated.csv",
        "trajectory_uncompensated.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let on = std::fs::read_to_string(dir.path().join("trajectory_compensated.csv")).unwrap();
    let flags: Vec<bool> = on.lines().skip(1).map(|l| l.ends_with(",1")).collect();
    assert_eq!(flags.len(), 201);
    for (j, f) in flags.iter().enumerate().take(200) {
        assert_eq!(*f, (50..100).contains(&j), "step {j}");
    }
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "k,tau,omega,lambda_max_8a,status,ms");

    let verify = quantaw(&[
        "verify",
        s(&dir.path().join("problem.json")),
        s(&dir.path().join("result.json")),
        "--samples",
        "10",
    ]);
    assert_eq!(code(&verify), 0, "{}", stderr(&verify));
}

#[test]
fn unknown_example_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = quantaw(&["reproduce", "example3", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("example1"));
}

#[test]
fn missing_arguments_exit_2() {
    assert_eq!(code(&quantaw(&["synth"])), 2);
    assert_eq!(code(&quantaw(&["frobnicate"])), 2);
}
