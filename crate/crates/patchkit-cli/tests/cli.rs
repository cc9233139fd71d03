//! Integration tests driving the `patchkit` binary through its external
//! interfaces: file formats, subcommands, exit codes, and error paths.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn patchkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchkit"))
        .args(args)
        .output()
        .expect("spawning patchkit")
}

fn json_of(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn run_prepare(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let dataset = dir.join("dataset.jsonl");
    let report = dir.join("prepare.json");
    let corpus = data("mini_corpus.jsonl");
    let mut args = vec![
        "prepare",
        "--input",
        corpus.to_str().unwrap(),
        "--output",
        dataset.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let out = patchkit(&args);
    assert!(out.status.success(), "prepare failed: {}", String::from_utf8_lossy(&out.stderr));
    (dataset, report)
}

#[test]
fn prepare_reports_every_record_once() {
    let dir = tempfile::tempdir().unwrap();
    let (dataset, report) = run_prepare(dir.path(), &["--tokenizer", "lexical"]);

    let report = json_of(&report);
    assert_eq!(report["parsed"], 4);
    assert_eq!(report["failed"], 1);
    assert_eq!(report["zero_dl"], serde_json::json!(["t2"]));
    assert_eq!(report["extra_fenced_blocks"], serde_json::json!(["t5"]));
    assert_eq!(report["errors"][0]["id"], "t4");
    assert_eq!(report["fallback_buggy_extraction"], serde_json::json!([]));
    assert_eq!(report["provenance"]["config"]["tokenizer"], "lexical");
    assert_eq!(report["provenance"]["config"]["w_align"], 2.0);

    let lines: Vec<String> = std::fs::read_to_string(&dataset)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    // header + one line per parsed record, input order preserved
    assert_eq!(lines.len(), 5);
    let header: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    assert!(header["header"]["inputs"]["mini_corpus.jsonl"].is_string());
    let ids: Vec<String> = lines[1..]
        .iter()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["id"]
            .as_str()
            .unwrap()
            .to_string())
        .collect();
    assert_eq!(ids, ["t1", "t2", "t3", "t5"]);
}

#[test]
fn prepared_sequences_hold_their_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let (dataset, _) = run_prepare(dir.path(), &["--tokenizer", "lexical"]);

    let lines = std::fs::read_to_string(&dataset).unwrap();
    for line in lines.lines().skip(1) {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        let tokens = rec["token_ids"].as_array().unwrap().len();
        assert_eq!(rec["mask"].as_array().unwrap().len(), tokens);
        assert_eq!(rec["weights"].as_array().unwrap().len(), tokens);
        let span = rec["response_span"].as_array().unwrap();
        let (start, end) = (span[0].as_u64().unwrap(), span[1].as_u64().unwrap());
        assert!(start <= end && end <= tokens as u64);
        for pos in rec["aligned"].as_array().unwrap() {
            let p = pos.as_u64().unwrap();
            assert!(p >= start && p < end, "aligned position outside response span");
            assert_eq!(rec["weights"][p as usize], 2.0);
        }
        // default masking: loss only on the response span
        for (t, m) in rec["mask"].as_array().unwrap().iter().enumerate() {
            let expected = u64::from((t as u64) >= start && (t as u64) < end);
            assert_eq!(m.as_u64().unwrap(), expected);
        }
        if rec["id"] == "t2" {
            assert_eq!(rec["dl"], 0);
            // identical buggy/fixed code: the whole response is copy-worthy
            assert_eq!(rec["aligned"].as_array().unwrap().len(), (end - start) as usize);
        }
        if rec["id"] == "t1" {
            assert_eq!(rec["dl"], 2);
        }
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"tokenizer": "lexical", "w_align": 4.0}"#).unwrap();
    let (_, report) = run_prepare(
        dir.path(),
        &["--config", config.to_str().unwrap(), "--w-align", "1.5"],
    );
    let report = json_of(&report);
    assert_eq!(report["provenance"]["config"]["tokenizer"], "lexical");
    assert_eq!(report["provenance"]["config"]["w_align"], 1.5);
}

#[test]
fn curriculum_orders_by_difficulty() {
    let dir = tempfile::tempdir().unwrap();
    let (dataset, _) = run_prepare(dir.path(), &[]);
    let report_path = dir.path().join("curriculum.json");
    let out = patchkit(&[
        "curriculum",
        "--input",
        dataset.to_str().unwrap(),
        "--output",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json_of(&report_path);
    // dl values: t1=2, t2=0, t3=6, t5=2; ascending and stable
    assert_eq!(report["order"], serde_json::json!(["t2", "t1", "t5", "t3"]));
    assert_eq!(report["zero_dl"], serde_json::json!(["t2"]));
    assert_eq!(report["stage_summary"]["zero_dl_count"], 1);
    assert_eq!(report["stage_summary"]["stages"][0]["count"], 2);
    assert_eq!(report["stage_summary"]["stages"][1]["count"], 1);
    assert_eq!(report["stage_summary"]["stages"][2]["count"], 0);
}

#[test]
fn eval_scores_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("eval.json");
    let out = patchkit(&[
        "eval",
        "--candidates",
        data("mini_candidates.jsonl").to_str().unwrap(),
        "--plausibility",
        data("mini_plausibility.jsonl").to_str().unwrap(),
        "--buggy-sources",
        data("mini_buggy.jsonl").to_str().unwrap(),
        "--output",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json_of(&report_path);
    assert_eq!(report["samples_per_task"], 3);
    assert_eq!(report["metrics"]["tasks"], 2);
    assert_eq!(report["metrics"]["tasks_with_plausible"], 1);
    assert_eq!(report["metrics"]["plausible_candidates"], 2);
    // t1: c=2 of n=3 -> pass@1 = 1 - 1/3; t2: 0; mean over tasks = 1/3
    let pass1 = report["metrics"]["pass_at"][0][1].as_f64().unwrap();
    assert!((pass1 - 1.0 / 3.0).abs() < 1e-12, "pass@1 = {pass1}");
    // c2 differs from the buggy source only by a comment
    let c2 = report["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["candidate_id"] == "c2")
        .unwrap();
    assert_eq!(c2["aed"], 0);
    assert_eq!(c2["ccr"], 1.0);
    let t1 = &report["per_task"][0];
    assert_eq!(t1["min_aed_candidate"], "c2");
    assert_eq!(t1["max_ccr_candidate"], "c2");
    let t2 = &report["per_task"][1];
    assert!(t2["min_aed_candidate"].is_null());
}

#[test]
fn eval_missing_verdict_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let partial = dir.path().join("verdicts.jsonl");
    // drop the t2/c1 verdict
    let kept: String = std::fs::read_to_string(data("mini_plausibility.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.contains("t2"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&partial, kept).unwrap();
    let out = patchkit(&[
        "eval",
        "--candidates",
        data("mini_candidates.jsonl").to_str().unwrap(),
        "--plausibility",
        partial.to_str().unwrap(),
        "--buggy-sources",
        data("mini_buggy.jsonl").to_str().unwrap(),
        "--output",
        dir.path().join("eval.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("t2") && stderr.contains("c1"), "stderr: {stderr}");
}

#[test]
fn train_demo_zero_steps_reports_uniform_loss() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("sweep.json");
    let out = patchkit(&[
        "train-demo",
        "--generate",
        "30",
        "--vocab",
        "16",
        "--steps",
        "0",
        "--output",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json_of(&report_path);
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let loss = row["final_loss"].as_f64().unwrap();
        assert!((loss - (16.0f64).ln()).abs() < 1e-12, "uniform loss should be ln V, got {loss}");
    }
}

#[test]
fn train_demo_weight_separates_aligned_nll() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("sweep.json");
    let out = patchkit(&[
        "train-demo",
        "--generate",
        "60",
        "--vocab",
        "16",
        "--steps",
        "120",
        "--output",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json_of(&report_path);
    let aligned: Vec<f64> = report["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["aligned_mean_nll"].as_f64().unwrap())
        .collect();
    // sweep order 0, 1, 2, 4: ignoring aligned tokens leaves them worst off
    assert!(aligned[0] > aligned[1] && aligned[1] > aligned[2] && aligned[2] > aligned[3]);
}

#[test]
fn train_demo_rejects_ambiguous_input() {
    let out = patchkit(&[
        "train-demo",
        "--input",
        data("mini_corpus.jsonl").to_str().unwrap(),
        "--generate",
        "10",
        "--output",
        "/dev/null",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pass_at_k_prints_estimate() {
    let out = patchkit(&["pass-at-k", "--n", "10", "--c", "3", "--k", "5"]);
    assert!(out.status.success());
    let value: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let expected = 1.0 - 21.0 / 252.0;
    assert!((value["pass_at_k"].as_f64().unwrap() - expected).abs() < 1e-12);
}

#[test]
fn agreement_reports_conflict_subsets() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("agreement.json");
    let out = patchkit(&[
        "agreement",
        "--annotations",
        data("mini_annotations.jsonl").to_str().unwrap(),
        "--metrics",
        data("mini_metric_table.jsonl").to_str().unwrap(),
        "--output",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json_of(&report_path);
    assert_eq!(report["items"], 4);
    assert_eq!(report["raters"], 3);
    assert!(report["fleiss_kappa"].is_number());

    let metric = |name: &str| {
        report["metrics"]
            .as_array()
            .unwrap()
            .iter()
            .find(|m| m["metric"] == name)
            .unwrap()
            .clone()
    };
    let aed = metric("aed");
    assert_eq!(aed["tie_count"], 1); // i2 ties on AED
    assert_eq!(aed["conflict_subset"], serde_json::json!(["i4"]));
    let ccr = metric("ccr");
    assert_eq!(ccr["conflict_subset"], serde_json::json!(["i2", "i4"]));
    assert!(ccr["conflict_fleiss_kappa"].is_number());
    assert_eq!(aed["per_rater"].as_array().unwrap().len(), 3);
}

#[test]
fn agreement_missing_cell_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let partial = dir.path().join("annotations.jsonl");
    let kept: String = std::fs::read_to_string(data("mini_annotations.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !(l.contains("i3") && l.contains("r2")))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&partial, kept).unwrap();
    let out = patchkit(&[
        "agreement",
        "--annotations",
        partial.to_str().unwrap(),
        "--metrics",
        data("mini_metric_table.jsonl").to_str().unwrap(),
        "--output",
        dir.path().join("agreement.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn contamination_finds_perturbed_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("contamination.json");
    let out = patchkit(&[
        "contamination",
        "--train",
        data("train_snippets.jsonl").to_str().unwrap(),
        "--eval",
        data("eval_snippets.jsonl").to_str().unwrap(),
        "--output",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json_of(&report_path);
    assert_eq!(report["clean"], false);
    assert_eq!(report["pairs"], serde_json::json!([["train-1", "eval-1"]]));
}

#[test]
fn contamination_corpus_format_flags_self_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("contamination.json");
    let out = patchkit(&[
        "contamination",
        "--train",
        data("mini_corpus.jsonl").to_str().unwrap(),
        "--eval",
        data("mini_corpus.jsonl").to_str().unwrap(),
        "--format",
        "corpus",
        "--output",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json_of(&report_path);
    assert_eq!(report["clean"], false);
    // t2's fixed equals its buggy code, so the duplicate also shows up
    // within each set
    let pairs = report["pairs"].as_array().unwrap();
    assert!(pairs
        .iter()
        .any(|p| p[0] == "t1#buggy" && p[1] == "t1#buggy"));
    assert!(!report["intra_train_duplicates"].as_array().unwrap().is_empty());
}

#[test]
fn normalize_strips_comments_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("input.java");
    std::fs::write(&input, "int  x = 1;  // note\n\n/* block */int y;\n").unwrap();
    let out = patchkit(&["normalize", "--input", input.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "int x = 1;\nint y;\n");
}

#[test]
fn extract_patch_without_fence_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("response.txt");
    std::fs::write(&input, "no code here\n").unwrap();
    let out = patchkit(&["extract-patch", "--input", input.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn extract_patch_takes_first_block() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("response.txt");
    std::fs::write(&input, "prose\n```java\nint a;\n```\n```java\nint b;\n```\n").unwrap();
    let out = patchkit(&["extract-patch", "--input", input.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "int a;\n");
}
