//! Per-command behavior: row counts, exit codes, printed numbers matching
//! the persisted files.

use std::path::PathBuf;
use std::process::Command;

use hofmn_core::eval::RobustnessCurve;
use hofmn_core::io;
use hofmn_core::model::{Architecture, Model, Provenance};

struct Cli {
    dir: PathBuf,
}

impl Cli {
    fn new(tag: &str) -> Cli {
        let dir = std::env::temp_dir().join(format!("hofmn-cli-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        Cli { dir }
    }

    fn run(&self, args: &[&str]) -> (i32, String) {
        let out = Command::new(env!("CARGO_BIN_EXE_hofmn"))
            .current_dir(&self.dir)
            .args(args)
            .output()
            .expect("binary runs");
        (
            out.status.code().unwrap_or(-1),
            format!(
                "{}{}",
                String::from_utf8_lossy(&out.stdout),
                String::from_utf8_lossy(&out.stderr)
            ),
        )
    }

    fn ok(&self, args: &[&str]) -> String {
        let (code, log) = self.run(args);
        assert_eq!(code, 0, "{args:?} failed:\n{log}");
        log
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

impl Drop for Cli {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}

fn prepare_subject(cli: &Cli) {
    cli.ok(&[
        "train-toy", "--samples", "120", "--mode", "adversarial", "--epochs", "50", "--seed",
        "5", "--out", "model.json", "--data-out", "data.csv",
    ]);
}

#[test]
fn tune_row_counts_and_precondition() {
    let cli = Cli::new("tune");
    prepare_subject(&cli);

    // Two configurations, T = 10, P = 4: 20 history rows, 2 summary rows
    // sorted ascending by median.
    cli.ok(&[
        "tune", "--model", "model.json", "--data", "data.csv", "--configs",
        "gd-calr-ll,adamax-fixed-ce", "--trials", "10", "--init", "4", "--batch-size", "12",
        "--iterations", "30", "--seed", "7", "--history-out", "hist.jsonl", "--summary-out",
        "summary.json",
    ]);
    let (_, records) = io::load_history(cli.path("hist.jsonl")).unwrap();
    assert_eq!(records.len(), 20);
    assert_eq!(records.iter().filter(|r| r.config_id == "gd-calr-ll").count(), 10);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cli.path("summary.json")).unwrap()).unwrap();
    let ranking = summary["ranking"].as_array().unwrap();
    assert_eq!(ranking.len(), 2);
    let medians: Vec<f64> = ranking
        .iter()
        .map(|r| r["median"].as_f64().unwrap_or(f64::INFINITY))
        .collect();
    assert!(medians[0] <= medians[1], "summary must sort ascending");

    // T <= P is rejected with a diagnostic and exit code 2.
    let (code, log) = cli.run(&[
        "tune", "--model", "model.json", "--data", "data.csv", "--trials", "4", "--init", "4",
        "--history-out", "x.jsonl",
    ]);
    assert_eq!(code, 2);
    assert!(log.contains("exceed"), "diagnostic missing: {log}");
}

#[test]
fn unreadable_files_exit_2() {
    let cli = Cli::new("badfiles");
    let (code, _) = cli.run(&[
        "attack", "--model", "missing.json", "--data", "missing.csv", "--baseline", "--out",
        "r.json",
    ]);
    assert_eq!(code, 2);
    // Mismatched model/dataset dimensions also exit 2.
    prepare_subject(&cli);
    let model = Model::load(cli.path("model.json")).unwrap();
    assert_eq!(model.input_dim(), 2);
    let mut bad = hofmn_core::Dataset::new(3);
    bad.push(hofmn_core::InputSample { x: vec![0.1, 0.2, 0.3], y: 0 }).unwrap();
    bad.save_csv(cli.path("bad.csv")).unwrap();
    let (code, log) = cli.run(&[
        "attack", "--model", "model.json", "--data", "bad.csv", "--baseline", "--out", "r.json",
    ]);
    assert_eq!(code, 2, "dimension mismatch must exit 2: {log}");
}

#[test]
fn attack_outputs_match_recomputation() {
    let cli = Cli::new("attack");
    prepare_subject(&cli);
    let log = cli.ok(&[
        "attack", "--model", "model.json", "--data", "data.csv", "--baseline", "--iterations",
        "60", "--ra-eps", "0.05", "--out", "result.json",
    ]);

    let (_, result) = io::load_result(cli.path("result.json")).unwrap();
    // Result row count equals the dataset size.
    let data = hofmn_core::Dataset::load(cli.path("data.csv")).unwrap();
    assert_eq!(result.per_sample.len(), data.len());

    // The printed robust accuracy equals a recount from the file.
    let curve = RobustnessCurve::from_attack_result(&result).unwrap();
    let expect = format!("robust accuracy at 0.050000: {:.4}", curve.robust_accuracy(0.05));
    assert!(log.contains(&expect), "printed RA mismatch:\n{log}\nwanted: {expect}");
}

#[test]
fn attack_found_nothing_exits_1() {
    let cli = Cli::new("robust");
    // A constant classifier never flips: bias pins class 0 everywhere.
    let arch = Architecture::new(vec![2, 2]).unwrap();
    let model = Model::from_parts(
        arch,
        vec![vec![0.0, 0.0, 0.0, 0.0]],
        vec![vec![1.0, 0.0]],
        Provenance::default(),
    )
    .unwrap();
    model.save(cli.path("const.json")).unwrap();
    let mut ds = hofmn_core::Dataset::new(2);
    for i in 0..6 {
        ds.push(hofmn_core::InputSample {
            x: vec![0.1 + 0.1 * i as f64, 0.5],
            y: 0,
        })
        .unwrap();
    }
    ds.save_csv(cli.path("const.csv")).unwrap();
    let (code, log) = cli.run(&[
        "attack", "--model", "const.json", "--data", "const.csv", "--baseline", "--iterations",
        "30", "--out", "r.json",
    ]);
    assert_eq!(code, 1, "all-robust batch must exit 1:\n{log}");
    assert!(log.contains("attack successes: 0"));
}

#[test]
fn curve_csv_is_monotone_with_grid_endpoints() {
    let cli = Cli::new("curve");
    prepare_subject(&cli);
    cli.ok(&[
        "attack", "--model", "model.json", "--data", "data.csv", "--baseline", "--iterations",
        "60", "--out", "result.json",
    ]);
    cli.ok(&[
        "curve", "--result-in", "result.json", "--grid", "0:0.2:21", "--out", "curve.csv",
    ]);
    let text = std::fs::read_to_string(cli.path("curve.csv")).unwrap();
    let rows = io::curve_from_csv(&text).unwrap();
    assert_eq!(rows.first().unwrap().0, 0.0, "grid start present");
    assert!(rows.iter().any(|(e, _)| *e == 0.2), "grid end present");
    for w in rows.windows(2) {
        assert!(w[1].1 <= w[0].1, "robust accuracy increased");
    }
    // Round trip: querying the exported rows reproduces the curve.
    let (_, result) = io::load_result(cli.path("result.json")).unwrap();
    let curve = RobustnessCurve::from_attack_result(&result).unwrap();
    for eps in [0.0, 0.013, 0.05, 0.111, 0.2] {
        assert_eq!(
            RobustnessCurve::query_exported(&rows, eps),
            curve.robust_accuracy(eps)
        );
    }
}

#[test]
fn compare_has_one_row_per_bisection_step() {
    let cli = Cli::new("compare");
    prepare_subject(&cli);
    cli.ok(&[
        "compare", "--model", "model.json", "--data", "data.csv", "--baseline", "--iterations",
        "60", "--budget-steps", "30", "--steps", "5", "--batch-size", "10", "--out", "cmp.csv",
    ]);
    let text = std::fs::read_to_string(cli.path("cmp.csv")).unwrap();
    let data: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .collect();
    assert_eq!(data[0], "method,total_time_s,median_norm");
    assert_eq!(data.len(), 1 + 1 + 5, "header + fmn row + one row per step");
    assert!(data[1].starts_with("fmn,"));
    for (i, row) in data[2..].iter().enumerate() {
        assert!(row.starts_with(&format!("bisect-{},", i + 1)));
    }
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let cli = Cli::new("configfile");
    prepare_subject(&cli);
    std::fs::write(
        cli.path("run.json"),
        serde_json::json!({
            "model": "model.json",
            "data": "data.csv",
            "iterations": 25,
            "ra_eps": 0.05
        })
        .to_string(),
    )
    .unwrap();
    // File only.
    let log = cli.ok(&["attack", "--config", "run.json", "--baseline", "--out", "a.json"]);
    assert!(log.contains("robust accuracy at 0.050000"));
    // Flag overrides the file's ra_eps.
    let log = cli.ok(&[
        "attack", "--config", "run.json", "--baseline", "--ra-eps", "0.1", "--out", "b.json",
    ]);
    assert!(log.contains("robust accuracy at 0.100000"), "{log}");
}

#[test]
fn selftest_passes() {
    let cli = Cli::new("selftest");
    let log = cli.ok(&["selftest"]);
    assert!(log.matches(" ok").count() >= 7, "{log}");
    assert!(!log.contains("FAIL"));
}
