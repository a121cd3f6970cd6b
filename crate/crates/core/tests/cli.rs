use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_catalyst");

fn catalyst(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn sequence_outputs() {
    let o = catalyst(&["sequence", "--strategy", "counter", "-n", "8"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "1\n1\n2\n1\n1\n2\n4\n1\n");
    let o = catalyst(&["sequence", "--strategy", "fixed", "--ttl", "5", "-n", "3"]);
    assert_eq!(stdout(&o), "5\n5\n5\n");
}

#[test]
fn seeded_bin_sequence_is_frozen() {
    let o = catalyst(&["sequence", "--strategy", "bin", "-n", "3", "--seed", "7"]);
    assert_eq!(stdout(&o), "253\n1\n1\n");
    let z = catalyst(&["sequence", "--strategy", "zeta2", "-n", "5", "--seed", "7"]);
    assert_eq!(stdout(&z), stdout(&catalyst(&["sequence", "--strategy", "zeta2", "-n", "5", "--seed", "7"])));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(catalyst(&["sequence", "--strategy", "fastest"]).status.code(), Some(1));
    assert_eq!(catalyst(&["simulate", "--strategy", "counter"]).status.code(), Some(1));
    assert_eq!(catalyst(&[]).status.code(), Some(1));
}

#[test]
fn analyze_censored_samples() {
    let tmp = TempDir::new().unwrap();
    let mut csv = String::from("runtime_ticks,censored\n1,0\n");
    csv.push_str(&"3000,1\n".repeat(99));
    let path = write(tmp.path(), "s.csv", &csv);
    let o = catalyst(&["analyze", "--samples", &path]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("optimal threshold: 1\n"), "{out}");
    assert!(out.contains("expected runtime at optimum: 100.0000"), "{out}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn analyze_small_samples() {
    let tmp = TempDir::new().unwrap();
    let equal = write(tmp.path(), "a.csv", &format!("runtime_ticks,censored\n{}", "5,0\n".repeat(10)));
    let out = stdout(&catalyst(&["analyze", "--samples", &equal]));
    assert!(out.contains("profile: 1/p = 1.0000, t* = 5"), "{out}");
    assert!(out.contains("expected runtime at optimum: 5.0000"), "{out}");

    let split = write(tmp.path(), "b.csv", &format!("runtime_ticks,censored\n{}{}", "1,0\n".repeat(50), "10,0\n".repeat(50)));
    let dir = tmp.path().join("out");
    let o = catalyst(&["analyze", "--samples", &split, "--out", dir.to_str().unwrap()]);
    let out = stdout(&o);
    assert!(out.contains("optimal threshold: 1\n"), "{out}");
    assert!(out.contains("expected runtime at optimum: 2.0000"), "{out}");
    let table = std::fs::read_to_string(dir.join("thresholds.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("t,f,r"));
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn analyze_rejects_bad_input() {
    let tmp = TempDir::new().unwrap();
    let none = write(tmp.path(), "n.csv", "runtime_ticks,censored\n3000,1\n");
    assert_eq!(catalyst(&["analyze", "--samples", &none]).status.code(), Some(1));
    let bad = write(tmp.path(), "bad.csv", "runtime_ticks,censored\nabc,0\n");
    assert_eq!(catalyst(&["analyze", "--samples", &bad]).status.code(), Some(1));
}

#[test]
fn simulate_worked_example_and_outputs() {
    let tmp = TempDir::new().unwrap();
    let law = write(tmp.path(), "law.txt", "# one in a hundred\n1 0.01\ninf 0.99\n");
    let out_dir = tmp.path().join("out");
    let args = ["simulate", "--dist", &law, "--strategy", "fixed", "--ttl", "1", "--workers", "1", "--trials", "10000", "--seed", "3", "--out", out_dir.to_str().unwrap()];
    let o = catalyst(&args);
    assert_eq!(o.status.code(), Some(0));
    let report = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(report, stdout(&o));
    let row: Vec<&str> = report.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..4], ["TTL 1", "10000", "10000", "0"]);
    let mean: f64 = row[4].parse().unwrap();
    assert!((mean - 100.0).abs() < 5.0, "{mean}");
    let log = std::fs::read_to_string(out_dir.join("trials.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 10_000);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["trial"], 0);
    assert_eq!(first["success"], true);

    // identical flags, identical CSV
    assert_eq!(stdout(&catalyst(&args)), report);
}

#[test]
fn simulate_parallel_or_fails_about_half() {
    let tmp = TempDir::new().unwrap();
    let law = write(tmp.path(), "law.txt", "1 0.01\ninf 0.99\n");
    let o = catalyst(&["simulate", "--dist", &law, "--strategy", "parallel", "--workers", "64", "--trials", "100000"]);
    let row: Vec<String> = stdout(&o).lines().nth(1).unwrap().split(',').map(String::from).collect();
    let fails: f64 = row[3].parse().unwrap();
    assert!((fails / 100_000.0 - 0.5256).abs() < 0.01, "{fails}");
}

#[test]
fn simulate_counter_on_deterministic_law() {
    let tmp = TempDir::new().unwrap();
    let law = write(tmp.path(), "law.txt", "5 1.0\n");
    let out_dir = tmp.path().join("out");
    let o = catalyst(&["simulate", "--dist", &law, "--strategy", "counter", "--workers", "1", "--trials", "5", "--out", out_dir.to_str().unwrap()]);
    assert!(o.status.success());
    let log = std::fs::read_to_string(out_dir.join("trials.jsonl")).unwrap();
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        // 1+1+2+1+1+2+4+1+1+2+1+1+2+4 fail, then 5 ticks of the TTL-8 attempt
        assert_eq!(v["total_work"], 29);
        assert_eq!(v["time_to_success"], 29);
    }
}

#[test]
fn simulate_rejects_bad_mass() {
    let tmp = TempDir::new().unwrap();
    let law = write(tmp.path(), "law.txt", "1 0.5\n2 0.2\n");
    let o = catalyst(&["simulate", "--dist", &law, "--strategy", "counter"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn all_failures_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let law = write(tmp.path(), "law.txt", "inf 1.0\n");
    let o = catalyst(&["simulate", "--dist", &law, "--strategy", "parallel", "--workers", "2", "--trials", "61", "--cap", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stdout(&o).lines().nth(1), Some("Parallel x2,61,0,61,,,,,"));
}

#[test]
fn run_supervises_the_sleeper() {
    let tmp = TempDir::new().unwrap();
    let law = write(tmp.path(), "law.txt", "1 1.0\n");
    let out_dir = tmp.path().join("out");
    let work = tmp.path().join("work");
    let o = catalyst(&[
        "run", "--strategy", "single", "--trials", "3", "--tick", "0.1", "--cap", "20",
        "--out", out_dir.to_str().unwrap(), "--workdir", work.to_str().unwrap(),
        "--", BIN, "sleeper", "--dist", &law, "--tick", "0.1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().nth(1), Some("Single,3,3,0,1.00,1.00,0.00,1.00,1.00"));
    let log = std::fs::read_to_string(out_dir.join("trials.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let o = catalyst(&[
        "run", "--strategy", "fixed", "--ttl", "1", "--trials", "2", "--tick", "0.05", "--cap", "3",
        "--workdir", work.to_str().unwrap(), "--discard-failed",
        "--", BIN, "sleeper", "--hidden", "5", "--tick", "0.05",
    ]);
    assert_eq!(o.status.code(), Some(2));
}
