//! End-to-end tests of the `dpse` binary: exit-code contracts, stdout
//! hygiene, input idempotence, and the full score -> ingest -> expand ->
//! train -> eval pipeline over real files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dpse() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dpse"))
}

fn run(args: &[&str]) -> Output {
    dpse().args(args).output().expect("binary runs")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn small_config(dir: &Path, threshold: usize) -> PathBuf {
    write_file(
        dir,
        "config.json",
        &format!(r#"{{ "trigger_threshold": {threshold} }}"#),
    )
}

const TABLE_SIGNALS: &str = r#"{"signals": [1, 1, 0.92, -0.2, 1]}
{"signals": [0, 2, 0.75, -0.4, 0]}
{"signals": [0, 0, 0.38, -0.6, -1]}
{"signals": [0, 2, 0.81, -0.5, -0.2]}
"#;

fn interactions_jsonl(n: usize) -> String {
    let mut out = String::new();
    for i in 0..n {
        let praise = i % 2 == 0;
        let comment = if praise { r#""Thanks, very clear!""# } else { "null" };
        let keywords = ["doctor symptom", "treatment wellness", "medicine health"][i % 3];
        out.push_str(&format!(
            concat!(
                r#"{{"session_id": "s{}", "query": "in brief tell me about {}", "#,
                r#""response": "the doctor explains the treatment in brief", "comment": {}, "#,
                r#""dwell_seconds": {}, "timestamp_ms": {}, "extra_key": true}}"#,
                "\n"
            ),
            i / 5,
            keywords,
            comment,
            if praise { 12.0 } else { 2.0 },
            i * 1000,
        ));
    }
    out
}

#[test]
fn help_exits_zero_for_every_command() {
    for cmd in [
        "score",
        "ingest",
        "expand",
        "train-sft",
        "train-dpo",
        "evolve",
        "simulate",
        "eval",
        "gradcheck",
    ] {
        let out = run(&[cmd, "--help"]);
        assert!(out.status.success(), "{cmd} --help failed");
        assert!(stdout_str(&out).contains("Usage"), "{cmd} --help has no usage text");
    }
    assert!(run(&["--help"]).status.success());
}

#[test]
fn unknown_flags_are_usage_errors() {
    let out = run(&["score", "--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["not-a-command"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn score_empty_input_is_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "empty.jsonl", "");
    let out = run(&["score", "--input", input.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout_str(&out).is_empty());
}

#[test]
fn score_stubbed_table_rows_in_paper_order() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "table.jsonl", TABLE_SIGNALS);
    let before = std::fs::read(&input).unwrap();

    let out = run(&["score", "--input", input.to_str().unwrap()]);
    assert!(out.status.success());
    let scores: Vec<f64> = stdout_str(&out)
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["final_score"].as_f64().unwrap()
        })
        .collect();
    assert_eq!(scores.len(), 4);
    // Praised > moderate > follow-up > negative.
    assert!(scores[0] > scores[1]);
    assert!(scores[1] > scores[3]);
    assert!(scores[3] > scores[2]);

    // Inputs are never mutated.
    assert_eq!(std::fs::read(&input).unwrap(), before);
}

#[test]
fn score_signals_only_emits_signal_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "ix.jsonl", &interactions_jsonl(3));
    let out = run(&["score", "--input", input.to_str().unwrap(), "--signals-only"]);
    assert!(out.status.success());
    for line in stdout_str(&out).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("fb").is_some());
        assert!(v.get("coherence").is_some());
        assert!(v.get("final_score").is_none());
    }
}

#[test]
fn score_corrupt_line_with_zero_budget_exits_two_with_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let contents = format!("{TABLE_SIGNALS}this is not json\n");
    let input = write_file(dir.path(), "corrupt.jsonl", &contents);
    let out = run(&["score", "--input", input.to_str().unwrap(), "--max-errors", "0"]);
    assert_eq!(out.status.code(), Some(2));
    // The four valid lines were flushed before the abort.
    assert_eq!(stdout_str(&out).lines().count(), 4);

    // A budget of one tolerates the corrupt line.
    let out = run(&["score", "--input", input.to_str().unwrap(), "--max-errors", "1"]);
    assert!(out.status.success());
    assert_eq!(stdout_str(&out).lines().count(), 4);
}

#[test]
fn gradcheck_exit_codes() {
    let ok = run(&["gradcheck", "--seed", "11", "--trials", "25"]);
    assert!(ok.status.success());
    let report: serde_json::Value = serde_json::from_str(stdout_str(&ok).trim()).unwrap();
    assert_eq!(report["passed"], serde_json::Value::Bool(true));

    // Injected fault must be caught (test of the test).
    let bad = run(&["gradcheck", "--seed", "11", "--trials", "3", "--perturb-loss", "1e-3"]);
    assert_eq!(bad.status.code(), Some(3));

    // Zero trials is a usage error.
    let usage = run(&["gradcheck", "--trials", "0"]);
    assert_eq!(usage.status.code(), Some(1));
}

#[test]
fn omitted_seed_is_generated_and_printed_for_replay() {
    let out = run(&["gradcheck", "--trials", "2"]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("seed:"), "generated seed must be announced: {stderr}");
}

#[test]
fn ingest_then_expand_builds_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 8);
    let input = write_file(dir.path(), "ix.jsonl", &interactions_jsonl(12));
    let run_dir = dir.path().join("run");

    let out = dpse()
        .args(["ingest", "--input", input.to_str().unwrap()])
        .args(["--run-dir", run_dir.to_str().unwrap()])
        .args(["--config", config.to_str().unwrap()])
        .args(["--seed", "5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let events: Vec<serde_json::Value> = stdout_str(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(events.len(), 12);
    assert!(events.iter().any(|e| e["trigger"] == serde_json::Value::Bool(true)));
    assert!(run_dir.join("memory.jsonl").exists());

    // Re-using the run directory is refused.
    let again = dpse()
        .args(["ingest", "--input", input.to_str().unwrap()])
        .args(["--run-dir", run_dir.to_str().unwrap()])
        .args(["--seed", "5"])
        .output()
        .unwrap();
    assert_eq!(again.status.code(), Some(2));

    let out_dir = dir.path().join("datasets");
    let out = dpse()
        .args(["expand", "--memory", run_dir.join("memory.jsonl").to_str().unwrap()])
        .args(["--out-dir", out_dir.to_str().unwrap()])
        .args(["--config", config.to_str().unwrap()])
        .args(["--all", "--seed", "7"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
    assert!(summary["n_sft_examples"].as_u64().unwrap() > 0);
    assert!(out_dir.join("sft.jsonl").exists());
    assert!(out_dir.join("pairs.jsonl").exists());
}

#[test]
fn train_stages_enforce_order_and_write_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let sft_data = write_file(
        dir.path(),
        "sft.jsonl",
        concat!(
            r#"{"instruction": "in brief tell me about doctor", "output": "the doctor explains in brief", "topic": "health", "provenance": "original"}"#,
            "\n",
            r#"{"instruction": "explain treatment in brief", "output": "rest and medication in brief", "topic": "health", "provenance": "generated"}"#,
            "\n"
        ),
    );
    let pairs_data = write_file(
        dir.path(),
        "pairs.jsonl",
        concat!(
            r#"{"prompt": "in brief tell me about doctor", "chosen": "the doctor explains in brief", "rejected": "unrelated words entirely", "weight": 3.0}"#,
            "\n"
        ),
    );

    let model_init = dir.path().join("init.json");
    let model_sft = dir.path().join("sft_model.json");
    let metrics = dir.path().join("sft_metrics.jsonl");
    let out = dpse()
        .args(["train-sft", "--data", sft_data.to_str().unwrap()])
        .args(["--out", model_sft.to_str().unwrap()])
        .args(["--metrics", metrics.to_str().unwrap()])
        .args(["--seed", "3", "--max-epochs", "5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(metrics.exists());
    let metric_lines = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(metric_lines.lines().count(), 6); // pre-training + 5 epochs

    // Build an untrained model for the stage-order check by training zero epochs.
    let out = dpse()
        .args(["train-sft", "--data", sft_data.to_str().unwrap()])
        .args(["--out", model_init.to_str().unwrap()])
        .args(["--seed", "3", "--max-epochs", "0"])
        .output()
        .unwrap();
    assert!(out.status.success());

    // DPO on the SFT-staged model works.
    let model_dpo = dir.path().join("dpo_model.json");
    let out = dpse()
        .args(["train-dpo", "--data", pairs_data.to_str().unwrap()])
        .args(["--model", model_sft.to_str().unwrap()])
        .args(["--out", model_dpo.to_str().unwrap()])
        .args(["--seed", "4", "--max-epochs", "4"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
    assert!(summary["final_margin"].as_f64().unwrap() > 0.0);
}

#[test]
fn eval_reports_metrics_for_a_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let sft_data = write_file(
        dir.path(),
        "sft.jsonl",
        concat!(
            r#"{"instruction": "in brief tell me about doctor and symptom", "output": "brief doctor symptom advice", "topic": "health", "provenance": "original"}"#,
            "\n"
        ),
    );
    let model = dir.path().join("model.json");
    let out = dpse()
        .args(["train-sft", "--data", sft_data.to_str().unwrap()])
        .args(["--out", model.to_str().unwrap()])
        .args(["--seed", "3", "--max-epochs", "300", "--learning-rate", "1.0"])
        .output()
        .unwrap();
    assert!(out.status.success());

    let probes = write_file(
        dir.path(),
        "probes.jsonl",
        concat!(r#"{"query": "in brief tell me about doctor and symptom", "style": ["brief"]}"#, "\n"),
    );
    let out = dpse()
        .args(["eval", "--model", model.to_str().unwrap()])
        .args(["--probes", probes.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
    // The memorized output starts with the style token.
    assert_eq!(metrics["alignment_rate"].as_f64().unwrap(), 1.0);
}

#[test]
fn simulate_zero_rounds_writes_manifest_only() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let out = dpse()
        .args(["simulate", "--run-dir", run_dir.to_str().unwrap()])
        .args(["--rounds", "0", "--seed", "1", "--ablate", "censor"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout_str(&out).is_empty());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(
        manifest["config"]["ablations"]["disable_censor"],
        serde_json::Value::Bool(true)
    );
    assert!(!run_dir.join("rounds.csv").exists());
}

/// Collect run artifacts for determinism comparison, with wall_time stripped
/// from reports.
fn run_fingerprint(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        let bytes = std::fs::read(&entry).unwrap();
        if rel.starts_with("reports/") {
            let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
            v.as_object_mut().unwrap().remove("wall_time_ms");
            files.push((rel, serde_json::to_vec(&v).unwrap()));
        } else {
            files.push((rel, bytes));
        }
    }
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn simulate_same_seed_is_byte_identical_apart_from_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 10);
    let mut dirs = Vec::new();
    for name in ["a", "b"] {
        let run_dir = dir.path().join(name);
        let out = dpse()
            .args(["simulate", "--run-dir", run_dir.to_str().unwrap()])
            .args(["--config", config.to_str().unwrap()])
            .args(["--rounds", "1", "--seed", "123"])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        dirs.push(run_dir);
    }
    assert_eq!(run_fingerprint(&dirs[0]), run_fingerprint(&dirs[1]));
}

#[test]
fn external_topic_backend_is_wired_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 20);
    let input = write_file(dir.path(), "ix.jsonl", &interactions_jsonl(3));
    let run_dir = dir.path().join("run");
    // A stub backend speaking the JSON protocol: always answers "sports".
    let out = dpse()
        .env("DPSE_BACKEND_TOPIC", r#"cat > /dev/null; printf '{"label": "sports"}'"#)
        .args(["ingest", "--input", input.to_str().unwrap()])
        .args(["--run-dir", run_dir.to_str().unwrap()])
        .args(["--config", config.to_str().unwrap()])
        .args(["--seed", "2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for line in stdout_str(&out).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["topic"], "sports");
    }
}

#[test]
fn dpse_config_env_var_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 33);
    let run_dir = dir.path().join("run");
    let out = dpse()
        .env("DPSE_CONFIG", config.to_str().unwrap())
        .args(["simulate", "--run-dir", run_dir.to_str().unwrap()])
        .args(["--rounds", "0", "--seed", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["trigger_threshold"], 33);
}

#[test]
fn evolve_runs_rounds_from_a_log() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 6);
    let input = write_file(dir.path(), "ix.jsonl", &interactions_jsonl(10));
    let probes = write_file(
        dir.path(),
        "probes.jsonl",
        concat!(r#"{"query": "in brief tell me about doctor and symptom", "style": ["brief"]}"#, "\n"),
    );
    let run_dir = dir.path().join("run");
    let out = dpse()
        .args(["evolve", "--input", input.to_str().unwrap()])
        .args(["--run-dir", run_dir.to_str().unwrap()])
        .args(["--probes", probes.to_str().unwrap()])
        .args(["--config", config.to_str().unwrap()])
        .args(["--seed", "9"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // Events plus at least one round report on stdout.
    let lines: Vec<serde_json::Value> = stdout_str(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines.iter().any(|v| v.get("round_index").is_some()));
    assert!(run_dir.join("reports/round_1.json").exists());
    assert!(run_dir.join("rounds.csv").exists());
}
