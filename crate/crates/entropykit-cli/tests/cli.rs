//! End-to-end tests against the compiled binary.

use std::fs;
use std::process::{Command, Output};

use entropykit::validate::synthetic_corpus_csv;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_entropykit"));
    // Keep host environment overrides out of the tests.
    for (key, _) in std::env::vars() {
        if key.starts_with("ENTROPYKIT_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

const RING_SPEC: &str = r#"{
  "version": 1,
  "alphabet": ["a", "b", "c"],
  "probs": [[0.0, 0.7, 0.3], [0.3, 0.0, 0.7], [0.7, 0.3, 0.0]]
}"#;

#[test]
fn features_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("events.csv");
    fs::write(&corpus, synthetic_corpus_csv(&[("h1", 41), ("h2", 42)], 18, 24)).unwrap();
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    for out in [&out_a, &out_b] {
        let output = run(&[
            "features",
            "--input",
            corpus.to_str().unwrap(),
            "--epochs",
            "40",
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    }
    let a = fs::read(&out_a).unwrap();
    let b = fs::read(&out_b).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);

    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# {"));
    assert!(text.contains("household_id,week_start,shannon_day_raw"));
    // 18 weeks - 16 baseline = 2 rows per household.
    assert_eq!(text.lines().count(), 2 + 4);
}

#[test]
fn empty_input_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty.csv");
    fs::write(&corpus, "household_id,timestamp,location\n").unwrap();
    let output = run(&["features", "--input", corpus.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_of(&output).contains("no events"), "{}", stderr_of(&output));
}

#[test]
fn usage_errors_exit_2() {
    let output = run(&["features", "--no-such-flag"]);
    assert_eq!(output.status.code(), Some(2));
    let output = run(&["features"]);
    assert_eq!(output.status.code(), Some(2));
    let output = run(&["no-such-command"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn fit_then_inspect_round_trips_the_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("events.csv");
    fs::write(&corpus, synthetic_corpus_csv(&[("h1", 7)], 2, 24)).unwrap();
    let matrix_path = dir.path().join("matrix.json");
    let output = run(&[
        "fit",
        "--input",
        corpus.to_str().unwrap(),
        "--out",
        matrix_path.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));

    let written = fs::read_to_string(&matrix_path).unwrap();
    let matrix = entropykit::markov::TransitionMatrix::from_json(&written).unwrap();
    assert_eq!(matrix.to_json(), written);

    let output = run(&["inspect", "--input", matrix_path.to_str().unwrap()]);
    assert!(output.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    assert_eq!(report["kind"], "transition_matrix");
    assert_eq!(report["n_states"], 5);
    let counts = report["counts"].as_array().unwrap();
    for (i, row) in counts.iter().enumerate() {
        for (j, value) in row.as_array().unwrap().iter().enumerate() {
            assert_eq!(value.as_u64().unwrap(), matrix.count(i, j));
        }
    }
    for i in 0..5 {
        let row = report["probs"][i].as_array().unwrap();
        for (j, value) in row.iter().enumerate() {
            assert!((value.as_f64().unwrap() - matrix.probs_row(i)[j]).abs() <= 1e-15);
        }
    }
}

#[test]
fn inspect_rejects_unrecognized_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.json");
    fs::write(&path, "{\"version\": 99}").unwrap();
    let output = run(&["inspect", "--input", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_of(&output).contains("not a transition matrix"));
}

#[test]
fn simulate_is_deterministic_and_reports_oracles() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("ring.json");
    fs::write(&spec, RING_SPEC).unwrap();
    let out = dir.path().join("events.csv");
    let mut events = Vec::new();
    let mut reports = Vec::new();
    for _ in 0..2 {
        let output = run(&[
            "simulate",
            "--matrix",
            spec.to_str().unwrap(),
            "--steps",
            "10",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(output.status.success(), "stderr: {}", stderr_of(&output));
        events.push(fs::read(&out).unwrap());
        reports.push(stdout_of(&output));
    }
    assert_eq!(events[0], events[1]);
    assert_eq!(reports[0], reports[1]);
    let out_a = out;

    let report: serde_json::Value = serde_json::from_str(&reports[0]).unwrap();
    let sigma = report["analytic_ep_rate"].as_f64().unwrap();
    assert!((sigma - 0.4 * (7.0f64 / 3.0).ln()).abs() < 1e-12, "sigma = {sigma}");
    assert_eq!(report["stationary_unique"], true);

    // The synthetic corpus is valid ingestion input.
    let output = run(&[
        "fit",
        "--input",
        out_a.to_str().unwrap(),
        "--alphabet",
        "a,b,c",
    ]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
}

#[test]
fn symmetric_spec_reports_zero_ep() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sym.json");
    fs::write(
        &spec,
        r#"{"version":1,"alphabet":["x","y"],"probs":[[0.5,0.5],[0.5,0.5]]}"#,
    )
    .unwrap();
    let out = dir.path().join("events.csv");
    let output = run(&[
        "simulate",
        "--matrix",
        spec.to_str().unwrap(),
        "--steps",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    assert_eq!(report["analytic_ep_rate"].as_f64().unwrap(), 0.0);
}

#[test]
fn invalid_matrix_spec_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.json");
    fs::write(
        &spec,
        r#"{"version":1,"alphabet":["x","y"],"probs":[[0.5,0.5],[0.9,0.9]]}"#,
    )
    .unwrap();
    let output = run(&[
        "simulate",
        "--matrix",
        spec.to_str().unwrap(),
        "--out",
        dir.path().join("out.csv").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_of(&output).contains("row 1"), "{}", stderr_of(&output));
}

#[test]
fn env_variables_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("events.csv");
    fs::write(&corpus, synthetic_corpus_csv(&[("h1", 3)], 4, 24)).unwrap();
    let output = bin()
        .env("ENTROPYKIT_SEED", "5")
        .env("ENTROPYKIT_EPOCHS", "2")
        .env("ENTROPYKIT_BASELINE_WEEKS", "3")
        .args(["features", "--input", corpus.to_str().unwrap()])
        .output()
        .expect("binary runs");
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let text = stdout_of(&output);
    let meta: serde_json::Value = serde_json::from_str(text.lines().next().unwrap().trim_start_matches("# ")).unwrap();
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["config"]["train"]["epochs"], 2);
    assert_eq!(meta["config"]["baseline_weeks"], 3);
    assert_eq!(text.lines().count(), 2 + 1);
}

#[test]
fn short_household_is_skipped_with_diagnostic_not_failure() {
    let dir = tempfile::tempdir().unwrap();
    let long = dir.path().join("h1.csv");
    let short = dir.path().join("h2.csv");
    fs::write(&long, synthetic_corpus_csv(&[("h1", 11)], 4, 24)).unwrap();
    fs::write(&short, synthetic_corpus_csv(&[("h2", 12)], 2, 24)).unwrap();
    let output = run(&[
        "features",
        "--input",
        long.to_str().unwrap(),
        "--input",
        short.to_str().unwrap(),
        "--baseline-weeks",
        "3",
        "--epochs",
        "2",
    ]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let stdout = stdout_of(&output);
    let households: Vec<&str> = stdout
        .lines()
        .skip(2)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(households, ["h1"]);
    let diag_line = stderr_of(&output)
        .lines()
        .next()
        .expect("diagnostic emitted")
        .to_string();
    let diag: serde_json::Value = serde_json::from_str(&diag_line).unwrap();
    assert_eq!(diag["household_id"], "h2");
    assert!(diag["reason"].as_str().unwrap().contains("skipped"));
}

#[test]
fn labels_join_and_unknown_targets_are_diagnosed() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("events.csv");
    fs::write(&corpus, synthetic_corpus_csv(&[("h1", 21)], 4, 24)).unwrap();
    let labels = dir.path().join("labels.csv");
    // Week 4 of a corpus starting 2021-03-01 begins 2021-03-22.
    fs::write(
        &labels,
        "household_id,week_start,label\nh1,2021-03-22,fall\nh9,2021-03-22,ghost\n",
    )
    .unwrap();
    let output = run(&[
        "features",
        "--input",
        corpus.to_str().unwrap(),
        "--baseline-weeks",
        "3",
        "--epochs",
        "2",
        "--labels",
        labels.to_str().unwrap(),
        "--output-format",
        "jsonl",
    ]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let text = stdout_of(&output);
    let row_line = text.lines().nth(1).expect("one feature row");
    let row: serde_json::Value = serde_json::from_str(row_line).unwrap();
    assert_eq!(row["labels"][0], "fall");
    assert_eq!(row["week_start"], "2021-03-22");
    assert!(stderr_of(&output).contains("h9"));
}

#[test]
fn jsonl_input_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("events.jsonl");
    fs::write(
        &corpus,
        concat!(
            "{\"household_id\":\"h1\",\"timestamp\":\"2021-03-01T10:00:00\",\"location\":\"kitchen\"}\n",
            "{\"household_id\":\"h1\",\"timestamp\":\"2021-03-01T10:05:00\",\"location\":\"lounge\"}\n",
            "{\"household_id\":\"h1\",\"timestamp\":\"2021-03-01T10:10:00\",\"location\":\"kitchen\"}\n",
        ),
    )
    .unwrap();
    let output = run(&[
        "fit",
        "--input",
        corpus.to_str().unwrap(),
        "--format",
        "jsonl",
    ]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let matrix =
        entropykit::markov::TransitionMatrix::from_json(&stdout_of(&output)).unwrap();
    assert_eq!(matrix.total_transitions(), 2);
}

#[test]
fn mode_flags_are_accepted_together() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("events.csv");
    fs::write(&corpus, synthetic_corpus_csv(&[("h1", 31)], 5, 24)).unwrap();
    let output = run(&[
        "features",
        "--input",
        corpus.to_str().unwrap(),
        "--baseline-weeks",
        "3",
        "--epochs",
        "2",
        "--quartile-mode",
        "--collapse-repeats",
        "--smoothing-alpha",
        "0.5",
        "--stationary-marginal",
        "--refit-t",
        "--retrain-neep",
    ]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    assert_eq!(stdout_of(&output).lines().count(), 2 + 2);
}
