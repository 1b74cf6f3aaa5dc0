use std::path::Path;
use std::process::{Command, Output};

fn ttmep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttmep")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = ttmep(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json summary on stdout")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let mut rd = csv::Reader::from_path(p).unwrap();
    rd.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn generate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    ok(&["generate", "--m", "3", "--n", "4", "--seed", "7", "--out", s(&a)]);
    ok(&["generate", "--m", "3", "--n", "4", "--seed", "7", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let (p, _) = ttmep::problem::MEProblem::read_json(&a).unwrap();
    assert_eq!(p.sizes(), vec![4, 4, 4]);
}

#[test]
fn oracle_reuses_metadata_and_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let prob = dir.path().join("p.json");
    let table = dir.path().join("o.csv");
    ok(&["generate", "--m", "3", "--n", "10", "--seed", "1", "--out", s(&prob)]);
    let t = std::time::Instant::now();
    let summary = ok(&["oracle", "--problem", s(&prob), "--how-many", "20", "--out", s(&table)]);
    assert!(t.elapsed().as_secs_f64() < 5.0);
    assert_eq!(summary["enumerated"], "1000");
    assert_eq!(summary["skipped_singular"], 0);
    let rows = csv_rows(&table);
    assert_eq!(rows.len(), 20);
    // the library oracle on the regenerated problem agrees
    let g = ttmep::problem::generate_random_mep(3, 10, 1).unwrap();
    let exact = ttmep::problem::oracle_eigenvalues(&g, 20, 0.0).unwrap();
    for (row, t) in rows.iter().zip(&exact.tuples) {
        assert_eq!(row[4].parse::<f64>().unwrap(), t.lambda_m());
    }
    let again = dir.path().join("o2.csv");
    ok(&["oracle", "--problem", s(&prob), "--how-many", "20", "--out", s(&again)]);
    assert_eq!(std::fs::read(&table).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn solve_and_compare_positive_problem() {
    let dir = tempfile::tempdir().unwrap();
    let prob = dir.path().join("p.json");
    let table = dir.path().join("o.csv");
    let prefix = dir.path().join("run");
    let summary = ok(&["generate", "--m", "3", "--n", "5", "--seed", "2", "--positive", "--out", s(&prob)]);
    assert!(summary["shift"].as_f64().is_some());
    ok(&["oracle", "--problem", s(&prob), "--how-many", "125", "--out", s(&table)]);
    let run = ok(&["solve", "--problem", s(&prob), "--sweeps", "4", "--b", "3", "--out", s(&prefix)]);
    let found = run["found"].as_u64().unwrap() as usize;
    assert!(found > 0);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run.report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["sweeps"], 4);
    assert_eq!(report["config"]["b"], 3);
    assert_eq!(report["tuples"].as_array().unwrap().len(), found);
    let rows = csv_rows(&dir.path().join("run.tuples.csv"));
    assert_eq!(rows.len(), found);
    assert!(std::fs::metadata(dir.path().join("run.vectors.tt")).unwrap().len() > 0);

    let cmp = dir.path().join("cmp.csv");
    let summary = ok(&[
        "compare",
        "--report",
        s(&dir.path().join("run.report.json")),
        "--oracle",
        s(&table),
        "--out",
        s(&cmp),
    ]);
    assert_eq!(summary["spurious"], 0);
    assert_eq!(summary["wanted_considered"], 20);
    assert_eq!(csv_rows(&cmp).len(), 20);
}

#[test]
fn compare_flags_planted_spurious_value() {
    let dir = tempfile::tempdir().unwrap();
    let prob = dir.path().join("p.json");
    let table = dir.path().join("o.csv");
    let prefix = dir.path().join("run");
    ok(&["generate", "--m", "2", "--n", "4", "--seed", "3", "--positive", "--out", s(&prob)]);
    ok(&["oracle", "--problem", s(&prob), "--how-many", "16", "--out", s(&table)]);
    ok(&["solve", "--problem", s(&prob), "--sweeps", "2", "--b", "2", "--out", s(&prefix)]);
    let path = dir.path().join("run.report.json");
    let mut report: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    let tuples = report["tuples"].as_array_mut().unwrap();
    let mut fake = tuples[0].clone();
    fake["lambda"][1][0] = serde_json::json!(12345.5);
    tuples.push(fake);
    std::fs::write(&path, serde_json::to_vec(&report).unwrap()).unwrap();
    let cmp = dir.path().join("cmp.csv");
    let summary = ok(&["compare", "--report", s(&path), "--oracle", s(&table), "--out", s(&cmp)]);
    assert_eq!(summary["spurious"], 1);
    let exact = ok(&["compare", "--report", s(&path), "--oracle", s(&table), "--tol", "0", "--out", s(&cmp)]);
    assert!(exact["spurious"].as_u64().unwrap() >= 1);
}

#[test]
fn empty_result_exits_zero_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let prob = dir.path().join("p.json");
    ok(&["generate", "--m", "3", "--n", "6", "--seed", "4", "--out", s(&prob)]);
    let prefix = dir.path().join("run");
    let out = ttmep(&[
        "solve", "--problem", s(&prob), "--sweeps", "1", "--b", "1", "--eps", "1e-300", "--out", s(&prefix),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run.report.json")).unwrap()).unwrap();
    assert!(report["tuples"].as_array().unwrap().is_empty());
    assert_eq!(report["warnings"].as_array().unwrap().len(), 1);
    assert!(csv_rows(&dir.path().join("run.tuples.csv")).is_empty());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = ttmep(&["solve", "--problem", s(&missing), "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));

    let prob = dir.path().join("p.json");
    ok(&["generate", "--m", "3", "--n", "4", "--out", s(&prob)]);
    let out = ttmep(&["solve", "--problem", s(&prob), "--b", "3", "--max-rank", "2", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));

    let big = dir.path().join("big.json");
    ok(&["generate", "--m", "8", "--n", "8", "--out", s(&big)]);
    let out = ttmep(&["oracle", "--problem", s(&big), "--out", s(&dir.path().join("o.csv"))]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("16777216"));
}

#[test]
fn delta_writes_operators() {
    let dir = tempfile::tempdir().unwrap();
    let prob = dir.path().join("p.json");
    ok(&["generate", "--m", "3", "--n", "3", "--out", s(&prob)]);
    let ranks = ok(&["delta", "--problem", s(&prob), "--out", s(&dir.path().join("ops"))]);
    assert_eq!(ranks["delta0"].as_array().unwrap().len(), 4);
    let mut f = std::fs::File::open(dir.path().join("ops/delta3.tt")).unwrap();
    let op = ttmep::tt::read_operator(&mut f).unwrap();
    assert_eq!(op.mode_sizes(), vec![3, 3, 3]);
    let full = ok(&["delta", "--problem", s(&prob), "--no-round", "--out", s(&dir.path().join("full"))]);
    assert_eq!(full["delta0"], serde_json::json!([1, 3, 3, 1]));
}

#[test]
fn bench_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    ok(&["bench", "--m-range", "2:3", "--n", "3", "--b", "2", "--out", s(&out)]);
    let mut rd = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), ["param", "value", "phase", "rounded", "seconds"]);
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 2 * 2 * 5);
    for chunk in rows.chunks(5) {
        let phases: f64 = chunk[..4].iter().map(|r| r[4].parse::<f64>().unwrap()).sum();
        let total: f64 = chunk[4][4].parse().unwrap();
        assert!(phases <= total * 1.1 + 1e-3);
    }
    let out = ttmep(&["bench", "--m-range", "3:2", "--out", s(&dir.path().join("b.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}
