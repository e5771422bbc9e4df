//! Drives the `dialcoord` binary through the offline workflow on the mock
//! provider: annotate → cluster → train → evaluate → chat.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dialcoord"));
    c.env_remove("RUST_LOG");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn dialcoord");
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let start = text.find(['{', '[']).expect("json in stdout");
    serde_json::from_str(&text[start..]).expect("valid json")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("config.toml"),
        "embedding_dim = 16\n[tasks.esc]\ndata_dir = \"data\"\n",
    )
    .unwrap();
    dir
}

#[test]
fn offline_workflow_then_chat() {
    let dir = setup();
    let d = dir.path();
    let corpus = fixture("esc_tiny.json");
    let corpus = corpus.to_str().unwrap();
    let base = ["--config", "config.toml"];
    let data = ["--task", "esc", "--corpus", corpus, "--out", "data"];

    for split in ["train", "val", "test"] {
        let out = run(
            d,
            &[&base[..], &["annotate"], &data[..], &["--split", split]].concat(),
        );
        let report = json(&out);
        assert!(report["written"].as_u64().unwrap() > 0, "{split}: {report}");
        assert_eq!(report["failures"].as_array().unwrap().len(), 0);
    }
    // Resuming a finished split writes nothing new.
    let again = json(&run(
        d,
        &[
            &base[..],
            &["annotate"],
            &data[..],
            &["--split", "train", "--resume"],
        ]
        .concat(),
    ));
    assert_eq!(again["written"], 0);
    assert!(again["skipped_existing"].as_u64().unwrap() > 0);

    let clusters = json(&run(
        d,
        &[
            &base[..],
            &["cluster"],
            &data[..],
            &["--k-min", "2", "--k-max", "4", "--seed", "1"],
        ]
        .concat(),
    ));
    let clusters = clusters.as_array().unwrap();
    assert_eq!(clusters.len(), 3);
    for c in clusters {
        let k = c["k"].as_u64().unwrap();
        assert!((2..=4).contains(&k));
        assert_eq!(c["points"], 16);
    }

    let trained = json(&run(
        d,
        &[
            &base[..],
            &["train"],
            &data[..],
            &[
                "--d-b",
                "8",
                "--d-h",
                "8",
                "--epochs",
                "3",
                "--lr",
                "0.001",
                "--batch-size",
                "8",
            ],
        ]
        .concat(),
    ));
    assert_eq!(trained["history"].as_array().unwrap().len(), 3);
    assert!(d.join("data/model/ranker.ckpt").exists());
    assert!(d.join("data/checkpoints/epoch-003.ckpt").exists());

    let ranking = json(&run(
        d,
        &[
            &base[..],
            &["eval", "ranking"],
            &data[..],
            &["--annotations", "data/annotations/test.ndjson"],
        ]
        .concat(),
    ));
    for key in ["p_at_1", "p_at_3", "p_at_5"] {
        let p = ranking[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p), "{key} = {p}");
    }
    assert!(ranking["n_examples"].as_u64().unwrap() > 0);

    // The trained model serves a chat session.
    let mut child = bin()
        .current_dir(d)
        .args(["--config", "config.toml", "chat", "--task", "esc"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"I failed my exam and feel awful.\n/quit\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Supporter: "), "{stdout}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("top topics:"));

    // Interactive evaluation with the trained system, then the aspect analysis.
    let problems = fixture("problems.txt");
    let summary = json(&run(
        d,
        &[
            "--config",
            "config.toml",
            "eval",
            "interactive",
            "--system",
            "cooper",
            "--n",
            "2",
            "--problems",
            problems.to_str().unwrap(),
            "--out",
            "sessions.ndjson",
            "--max-rounds",
            "3",
        ],
    ));
    assert_eq!(summary["sessions"], 2);
    let dist = json(&run(d, &["analyze", "aspects", "--in", "sessions.ndjson"]));
    for row in dist.as_array().unwrap() {
        let total: f64 = row["proportions"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn baseline_interactive_and_corpus_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let problems = fixture("problems.txt");
    let summary = json(&run(
        d,
        &[
            "eval",
            "interactive",
            "--system",
            "gpt35_cot",
            "--n",
            "3",
            "--problems",
            problems.to_str().unwrap(),
            "--out",
            "b.ndjson",
        ],
    ));
    assert_eq!(summary["sessions"], 3);
    let lines = std::fs::read_to_string(d.join("b.ndjson")).unwrap();
    assert_eq!(lines.lines().count(), 3);

    let corpus = fixture("esc_tiny.json");
    let dist = json(&run(
        d,
        &[
            "analyze",
            "aspects",
            "--corpus",
            corpus.to_str().unwrap(),
            "--rounds",
            "3",
        ],
    ));
    let rows = dist.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["round"], 1);
}

#[test]
fn static_metrics_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("pred.txt"), "a b c d\nhello there\n").unwrap();
    std::fs::write(d.join("ref.txt"), "a b x d\nhello there\n").unwrap();
    let out = run(
        d,
        &["eval", "static", "--pred", "pred.txt", "--ref", "ref.txt"],
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("BLEU-1"), "{text}");
    let report = json(&out);
    assert_eq!(report["n_examples"], 2);
    assert!((report["bleu1"].as_f64().unwrap() - 5.0 / 6.0).abs() < 1e-12);
}

#[test]
fn errors_exit_nonzero_with_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .current_dir(dir.path())
        .args([
            "eval",
            "static",
            "--pred",
            "missing.txt",
            "--ref",
            "missing.txt",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error [io]"));

    let out = bin()
        .current_dir(dir.path())
        .args(["chat", "--task", "esc"])
        .stdin(Stdio::null())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model_not_loaded"));
}
