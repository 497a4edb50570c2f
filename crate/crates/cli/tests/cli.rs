use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use equistop::examples;

fn equistop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_equistop")).args(args).output().unwrap()
}

fn report_value(dir: &Path, key: &str) -> String {
    let text = fs::read_to_string(dir.join("report.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(" = ")))
        .unwrap_or_else(|| panic!("{key} missing from\n{text}"))
        .to_string()
}

#[test]
fn solve_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.model");
    fs::write(&model, examples::EARLY_BIS).unwrap();
    let out = dir.path().join("out");
    let o = equistop(&["solve", model.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report_value(&out, "tau_b_root"), "0");
    assert_eq!(report_value(&out, "tau_star"), "4");
    assert_eq!(report_value(&out, "bruteforce_agrees"), "true");
    for f in ["bis.csv", "naive_chain.csv", "sophisticated.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let soph = fs::read_to_string(out.join("sophisticated.csv")).unwrap();
    assert_eq!(soph.lines().filter(|l| l.ends_with(",1")).collect::<Vec<_>>(), ["4,4,1"]);
}

#[test]
fn time_consistent_model_waits_to_the_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.model");
    fs::write(&model, "tree line 0..3\npref default functional \"tau\"\n").unwrap();
    let o = equistop(&["solve", model.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(report_value(dir.path(), "tau_b_root"), "3");
    assert_eq!(report_value(dir.path(), "tau_star"), "3");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.model");
    fs::write(&bad, "tree line 0..2\npref t=0 functional \"tau +\"\n").unwrap();
    let o = equistop(&["solve", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));

    let big = dir.path().join("big.model");
    fs::write(
        &big,
        "tree walk depth=3 moves=1,2,3,4,5,6 probs=1/6,1/6,1/6,1/6,1/6,1/6\npref default discounted hyperbolic beta=1 reward \"x\"\n",
    )
    .unwrap();
    let o = equistop(&["solve", big.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("overflow"));

    let missing = dir.path().join("nope.model");
    assert_eq!(equistop(&["solve", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn examples_filter_and_principle() {
    let o = equistop(&["examples", "--only", "counterexample"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let items: Vec<&str> = text.lines().filter(|l| l.contains('/')).collect();
    assert!(!items.is_empty() && items.iter().all(|l| l.starts_with("PASS counterexample/")), "{text}");

    let o = equistop(&["examples", "--principle", "earlier"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("SKIPPED") && !text.contains("FAIL "), "{text}");
}

#[test]
fn examples_default_run_passes() {
    let o = equistop(&["examples"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(o.status.success(), "{text}");
    assert!(text.contains("0 failed"));
}

#[test]
fn fuzz_dumps_counterexamples_when_inverted() {
    let dir = tempfile::tempdir().unwrap();
    let o = equistop(&["fuzz", "--seed", "3", "--n", "4", "--invert", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let dumps: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".model"))
        .collect();
    assert_eq!(dumps.len(), 4);
    // A dump replays as a model.
    let m = dir.path().join("fail_0000.model");
    let o = equistop(&["solve", m.to_str().unwrap(), "--out", dir.path().join("replay").to_str().unwrap()]);
    assert!(o.status.success());

    let clean = equistop(&["fuzz", "--seed", "42", "--n", "20"]);
    assert!(clean.status.success());
    assert!(String::from_utf8_lossy(&clean.stdout).contains("failed = 0"));
}

#[test]
fn counterexample_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = equistop(&["counterexample", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("counterexample.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,rho_n,closed_form,abs_err"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r[3] < 1e-5));
    let w = fs::read_to_string(dir.path().join("witness.csv")).unwrap();
    assert!(w.lines().any(|l| l.starts_with("1.000000000,false,0.5")), "{w}");
}

#[test]
fn hyperbolic_report_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = equistop(&["hyperbolic", "--beta", "4", "--paths", "0", "--a", "0.3,0.9", "--grid", "3", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a: f64 = report_value(dir.path(), "a_star").parse().unwrap();
    assert!((a - 0.9464754631 / 2.0).abs() < 1e-5);
    assert_eq!(report_value(dir.path(), "x_star(0.300000)"), "none");
    let x: f64 = report_value(dir.path(), "x_star(0.900000)").parse().unwrap();
    assert!(x > 0.0 && x < a);
    let grid = fs::read_to_string(dir.path().join("eta_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 7);
    assert!(grid.lines().nth(1).unwrap().ends_with(",,"));
}

#[test]
fn check_reports_witness() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.model");
    fs::write(&model, examples::EARLY_BIS).unwrap();
    let m = model.to_str().unwrap();
    let o = equistop(&["check", m, "--stop-set", "5"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("approachable = false") && text.contains("witness_time = 4") && text.contains("witness_band_sup = 0"), "{text}");
    let o = equistop(&["check", m, "--stop-set", "4"]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("approachable = true"));
    assert_eq!(equistop(&["check", m, "--stop-set", "zz"]).status.code(), Some(2));
}
