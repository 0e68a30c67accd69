use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn ita(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ita")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_CONFIG: &str =
    r#"{"version": "ita-config/1", "dim": 8, "ff_dim": 16, "layers": 1, "heads": 2, "batch_size": 2}"#;

/// Train one seed on the golden corpus and return the run directory.
fn trained(dir: &TempDir) -> PathBuf {
    let config = dir.path().join("config.json");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let out = dir.path().join("run");
    let corpus = fixture("golden_corpus.tsv");
    let o = ita(&[
        "train",
        "--config",
        s(&config),
        "--train",
        s(&corpus),
        "--dev",
        s(&corpus),
        "--test",
        s(&corpus),
        "--contexts",
        s(&fixture("golden_contexts.jsonl")),
        "--seeds",
        "3",
        "--epochs",
        "2",
        "--output-dir",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn train_writes_checkpoint_and_reports() {
    let dir = TempDir::new().unwrap();
    let out = trained(&dir);
    for f in ["checkpoint-seed3.json", "report.json", "report.txt", "train_log.jsonl"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    for line in log.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn evaluate_writes_metrics_and_restricts_view() {
    let dir = TempDir::new().unwrap();
    let run = trained(&dir);
    let ck = run.join("checkpoint-seed3.json");
    let contexts = fixture("golden_contexts.jsonl");
    let both = dir.path().join("both");
    let o = ita(&[
        "evaluate",
        "--checkpoint",
        s(&ck),
        "--data",
        s(&fixture("golden_corpus.tsv")),
        "--contexts",
        s(&contexts),
        "--output-dir",
        s(&both),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(both.join("metrics.json")).unwrap()).unwrap();
    assert!(m.get("T").is_some() && m.get("I+T").is_some());
    assert_eq!(m["missing_images"], 1);
    let f1 = m["T"]["micro"]["f1"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&f1));

    let only = dir.path().join("only");
    let o = ita(&[
        "evaluate",
        "--checkpoint",
        s(&ck),
        "--data",
        s(&fixture("golden_corpus.tsv")),
        "--contexts",
        s(&contexts),
        "--view",
        "t",
        "--output-dir",
        s(&only),
    ]);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(only.join("metrics.json")).unwrap()).unwrap();
    assert!(m.get("T").is_some());
    assert!(m.get("I+T").is_none());
}

#[test]
fn corrupted_checkpoint_fails_without_output() {
    let dir = TempDir::new().unwrap();
    let ck = dir.path().join("bad.json");
    std::fs::write(&ck, "{\"version\": \"ita-checkpoint/1\", \"tensors\": [").unwrap();
    let out = dir.path().join("metrics");
    let o = ita(&[
        "evaluate",
        "--checkpoint",
        s(&ck),
        "--data",
        s(&fixture("golden_corpus.tsv")),
        "--output-dir",
        s(&out),
    ]);
    assert!(!o.status.success());
    assert!(!out.exists());
}

#[test]
fn checkpoint_version_mismatch_exits_one() {
    let dir = TempDir::new().unwrap();
    let run = trained(&dir);
    let text = std::fs::read_to_string(run.join("checkpoint-seed3.json")).unwrap();
    let ck = dir.path().join("old.json");
    std::fs::write(&ck, text.replacen("ita-checkpoint/1", "ita-checkpoint/0", 1)).unwrap();
    let o = ita(&[
        "predict",
        "--checkpoint",
        s(&ck),
        "--input",
        s(&fixture("golden_corpus.tsv")),
        "--output",
        s(&dir.path().join("p.tsv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));
}

#[test]
fn predict_is_deterministic_and_handles_unknown_tokens() {
    let dir = TempDir::new().unwrap();
    let run = trained(&dir);
    let ck = run.join("checkpoint-seed3.json");
    let input = dir.path().join("input.txt");
    std::fs::write(&input, "# img_id = img1\nMessi\nzzzunseen\nNou\n\nqqq\n").unwrap();
    let predict = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["predict", "--checkpoint", s(&ck), "--input", s(&input), "--output", s(&out)];
        args.extend_from_slice(extra);
        let o = ita(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out).unwrap()
    };
    let contexts = fixture("golden_contexts.jsonl");
    let a = predict("a.tsv", &["--contexts", s(&contexts)]);
    let b = predict("b.tsv", &["--contexts", s(&contexts)]);
    assert_eq!(a, b);
    assert!(a.starts_with("# img_id = img1\nMessi\t"));
    assert_eq!(a.lines().filter(|l| l.contains('\t')).count(), 4);

    // An empty context makes the I+T input equal to the sentence.
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let cross = predict("c.tsv", &["--contexts", s(&empty), "--view", "i+t"]);
    let text = predict("t.tsv", &["--view", "t"]);
    assert_eq!(cross, text);
}

#[test]
fn empty_corpus_aligns_to_empty_output() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("empty.tsv");
    std::fs::write(&corpus, "").unwrap();
    let out = dir.path().join("aligned.jsonl");
    let o = ita(&[
        "align",
        "--corpus",
        s(&corpus),
        "--contexts",
        s(&fixture("golden_contexts.jsonl")),
        "-o",
        s(&out),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(out).unwrap(), b"");
}

#[test]
fn aligned_jsonl_trains_like_raw_input() {
    let dir = TempDir::new().unwrap();
    let aligned = dir.path().join("aligned.jsonl");
    let o = ita(&[
        "align",
        "--corpus",
        s(&fixture("golden_corpus.tsv")),
        "--contexts",
        s(&fixture("golden_contexts.jsonl")),
        "-o",
        s(&aligned),
    ]);
    assert!(o.status.success());
    let config = dir.path().join("config.json");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let out = dir.path().join("run");
    let o = ita(&[
        "train",
        "--config",
        s(&config),
        "--train",
        s(&aligned),
        "--dev",
        s(&aligned),
        "--test",
        s(&aligned),
        "--seeds",
        "3",
        "--epochs",
        "2",
        "--output-dir",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let raw_dir = TempDir::new().unwrap();
    let raw = trained(&raw_dir);
    assert_eq!(
        std::fs::read(out.join("checkpoint-seed3.json")).unwrap(),
        std::fs::read(raw.join("checkpoint-seed3.json")).unwrap()
    );
}

#[test]
fn quick_ablation_prints_table() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("ablation.txt");
    let o = ita(&["ablate", "--quick", "--variants", "baseline,ita-all", "--seeds", "1", "-o", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(&out).unwrap();
    assert!(table.contains("baseline") && table.contains("ita-all"));
    assert!(!table.contains("ita-joint"));
    assert!(dir.path().join("ablation.txt.json").exists());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(ita(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(ita(&["--help"]).status.code(), Some(0));
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"version": "ita-config/1", "dimm": 8}"#).unwrap();
    let o = ita(&["align", "--config", s(&config), "--corpus", "x", "--contexts", "y", "-o", "z"]);
    assert_eq!(o.status.code(), Some(1));
}
