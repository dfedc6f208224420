use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn groundscore(args: &[&str], files: &[(&str, &str)]) -> (Output, TempDir) {
    let dir = tempfile::tempdir().unwrap();
    for (name, body) in files {
        std::fs::write(dir.path().join(name), body).unwrap();
    }
    let out = Command::new(env!("CARGO_BIN_EXE_groundscore"))
        .current_dir(dir.path())
        .args(args)
        .output()
        .unwrap();
    (out, dir)
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn out_json(dir: &Path, name: &str) -> Value {
    read_json(dir.join(name))
}

const TRUTH: &str = r#"{"id": "a", "task": "area", "frames": {"1": [[0, 0], [500, 0], [500, 500], [0, 500]]}}
{"id": "b", "task": "affordance", "frames": {"2": [[300, 300]]}}
{"id": "c", "task": "object", "frames": {"0": [100, 100, 300, 300]}}
"#;

#[test]
fn plan_small_example() {
    let (out, dir) = groundscore(
        &[
            "plan",
            "--lengths",
            "len.jsonl",
            "--world-size",
            "2",
            "--out",
            "plan.json",
        ],
        &[("len.jsonl", "8\n7\n6\n5\n")],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let plan = out_json(dir.path(), "plan.json");
    assert_eq!(plan["makespan"], 13);
    assert_eq!(plan["loads"], serde_json::json!([13, 13]));
    assert_eq!(plan["buckets"], serde_json::json!([["0", "3"], ["1", "2"]]));
}

#[test]
fn plan_single_worker_keeps_input_order() {
    let lengths = r#"{"id": "x", "est_tokens": 3}
{"id": "y", "est_tokens": 9}
{"id": "z", "est_tokens": 5}
"#;
    let (out, dir) = groundscore(
        &[
            "plan",
            "--lengths",
            "len.jsonl",
            "--world-size",
            "1",
            "--out",
            "plan.json",
        ],
        &[("len.jsonl", lengths)],
    );
    assert!(out.status.success());
    let plan = out_json(dir.path(), "plan.json");
    assert_eq!(plan["buckets"], serde_json::json!([["x", "y", "z"]]));
    assert_eq!(plan["makespan"], 17);
}

#[test]
fn plan_rejects_zero_world_size() {
    let (out, _dir) = groundscore(
        &[
            "plan",
            "--lengths",
            "len.jsonl",
            "--world-size",
            "0",
            "--out",
            "plan.json",
        ],
        &[("len.jsonl", "4\n")],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn filter_keeps_band_and_frame_misses() {
    let scores = r#"{"id": "a", "score": 20}
{"id": "b", "score": 50}
{"id": "c", "score": 95}
{"id": "d", "score": 0, "frame_valid": false}
{"id": "e", "score": 80}
"#;
    let (out, dir) = groundscore(
        &["filter", "--scores", "s.jsonl", "--out", "kept.json"],
        &[("s.jsonl", scores)],
    );
    assert!(out.status.success());
    let kept = out_json(dir.path(), "kept.json");
    assert_eq!(kept["kept"], serde_json::json!(["b", "d", "e"]));
}

#[test]
fn filter_rejects_inverted_band() {
    let (out, _dir) = groundscore(
        &[
            "filter", "--scores", "s.jsonl", "--low", "80", "--high", "40", "--out", "k.json",
        ],
        &[("s.jsonl", "")],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_input_is_io_error() {
    let (out, _dir) = groundscore(
        &[
            "score",
            "--truth",
            "nope.jsonl",
            "--pred",
            "nope.jsonl",
            "--out",
            "r.json",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_truth_is_data_error() {
    let (out, _dir) = groundscore(
        &[
            "score", "--truth", "t.jsonl", "--pred", "p.jsonl", "--out", "r.json",
        ],
        &[
            (
                "t.jsonl",
                "{\"id\": \"a\", \"task\": \"area\", \"frames\": {\"1\": [[0, 0]]}}\n",
            ),
            ("p.jsonl", ""),
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn bad_config_is_config_error() {
    for args in [
        vec!["--task", "teleport"],
        vec!["--workers", "0"],
        vec!["--lambda-traj", "-1"],
        vec!["--traj-mode", "sideways"],
    ] {
        let mut full = vec![
            "score", "--truth", "t.jsonl", "--pred", "p.jsonl", "--out", "r.json",
        ];
        full.extend(args.iter().copied());
        let (out, _dir) = groundscore(&full, &[("t.jsonl", TRUTH), ("p.jsonl", "")]);
        assert_eq!(out.status.code(), Some(3), "{args:?}");
    }
}

#[test]
fn score_reports_per_task_means() {
    let preds = r#"{"id": "a", "raw": "<area> <frame 1>: (100, 100), (900, 900) </area>"}
{"id": "b", "raw": "<affordance> <frame 2>: (300, 300) </affordance>"}
{"id": "c", "parsed": {"frame": 0, "coords": [[100, 100], [300, 300]]}}
"#;
    let (out, dir) = groundscore(
        &[
            "score", "--truth", "t.jsonl", "--pred", "p.jsonl", "--out", "r.json",
        ],
        &[("t.jsonl", TRUTH), ("p.jsonl", preds)],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = out_json(dir.path(), "r.json");
    assert_eq!(report["tasks"]["area"]["mean"], 50.0);
    assert_eq!(report["tasks"]["affordance"]["mean"], 100.0);
    assert_eq!(report["tasks"]["object"]["mean"], 100.0);
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn all_frames_missing_scores_zero() {
    let preds = r#"{"id": "a", "raw": "<area> <frame 9>: (100, 100) </area>"}
{"id": "b", "raw": "<affordance> <frame 9>: (300, 300) </affordance>"}
{"id": "c", "raw": "<object> <frame 9>: (100, 100), (300, 300) </object>"}
"#;
    let (out, dir) = groundscore(
        &[
            "score", "--truth", "t.jsonl", "--pred", "p.jsonl", "--out", "r.json",
        ],
        &[("t.jsonl", TRUTH), ("p.jsonl", preds)],
    );
    assert!(out.status.success());
    let report = out_json(dir.path(), "r.json");
    let mut misses = 0;
    for (_, s) in report["tasks"].as_object().unwrap() {
        assert_eq!(s["mean"], 0.0);
        misses += s["frame_misses"].as_u64().unwrap();
    }
    assert_eq!(misses, 3);
}

#[test]
fn parse_failure_threshold_exits_with_data_error() {
    let preds = r#"{"id": "a", "raw": "no tags here"}
{"id": "b", "raw": "<affordance> <frame 2>: (300, 300) </affordance>"}
{"id": "c", "raw": "still nothing"}
"#;
    let (out, _dir) = groundscore(
        &[
            "score",
            "--truth",
            "t.jsonl",
            "--pred",
            "p.jsonl",
            "--out",
            "r.json",
            "--max-parse-failures",
            "0.5",
        ],
        &[("t.jsonl", TRUTH), ("p.jsonl", preds)],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_is_identical_across_worker_counts() {
    let mut truth = String::new();
    let mut preds = String::new();
    for i in 0..60 {
        let (x, y) = (100 + i * 7, 900 - i * 11);
        truth.push_str(&format!(
            "{{\"id\": \"t{i:02}\", \"task\": \"trajectory\", \"frames\": {{\"{}\": [[{x}, {y}], [{}, {}], [500, 500]]}}}}\n",
            i % 4,
            y,
            x
        ));
        preds.push_str(&format!(
            "{{\"id\": \"t{i:02}\", \"raw\": \"<trajectory> <frame {}>: ({x}, {y}), (500, 500) </trajectory>\"}}\n",
            i % 3
        ));
    }
    let mut reports = Vec::new();
    for workers in ["1", "3", "8"] {
        let (out, dir) = groundscore(
            &[
                "score",
                "--truth",
                "t.jsonl",
                "--pred",
                "p.jsonl",
                "--out",
                "r.json",
                "--workers",
                workers,
            ],
            &[("t.jsonl", &truth), ("p.jsonl", &preds)],
        );
        assert!(out.status.success());
        let mut report = out_json(dir.path(), "r.json");
        report["config"]["workers"] = Value::Null;
        reports.push(report);
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}
