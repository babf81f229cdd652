use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture_copy() -> tempfile::TempDir {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy");
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
    }
    dir
}

fn kerm(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_kerm"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn work(dir: &Path, name: &str) -> PathBuf {
    dir.join("work").join(name)
}

#[test]
fn full_pipeline_emits_metrics_and_is_idempotent() {
    let dir = fixture_copy();
    let first = kerm(dir.path(), &["pipeline"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let text = stdout(&first);
    for m in ["mrr@10", "map@10", "map@30"] {
        assert!(text.contains(m), "{text}");
    }
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(work(dir.path(), "metrics.json")).unwrap()).unwrap();
    let mrr = metrics["mrr@10"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mrr));
    assert_eq!(metrics["queries"], 20);
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(work(dir.path(), "stats.json")).unwrap()).unwrap();
    assert!(stats["meta_graphs"]["avg_edge_count"].as_f64().is_some());

    let again = kerm(dir.path(), &["pipeline"]);
    assert!(again.status.success());
    let text = stdout(&again);
    assert_eq!(text.matches("up to date").count(), 8, "{text}");
    assert!(!text.contains("wrote"), "{text}");
}

#[test]
fn changed_settings_rerun_downstream_stages() {
    let dir = fixture_copy();
    assert!(kerm(dir.path(), &["pipeline"]).status.success());
    let run_before = fs::read(work(dir.path(), "run.trec")).unwrap();

    let pruned = kerm(dir.path(), &["distill", "prune", "--pi", "1"]);
    assert!(pruned.status.success(), "{}", stderr(&pruned));
    assert!(stdout(&pruned).contains("distill prune: wrote"));
    let build = kerm(dir.path(), &["distill", "build"]);
    assert!(stdout(&build).contains("distill build: wrote"), "{}", stdout(&build));

    let trained = kerm(dir.path(), &["train", "--mode", "vanilla", "--epochs", "1"]);
    assert!(stdout(&trained).contains("train: wrote"), "{}", stderr(&trained));
    assert!(kerm(dir.path(), &["rerank"]).status.success());
    let run_after = fs::read_to_string(work(dir.path(), "run.trec")).unwrap();
    assert!(run_after.contains("kerm-vanilla"));
    assert_ne!(run_after.as_bytes(), run_before.as_slice());
}

#[test]
fn train_before_distill_build_names_that_command() {
    let dir = fixture_copy();
    for args in [&["kg", "build"][..], &["kg", "transe"], &["distill", "prune"]] {
        assert!(kerm(dir.path(), args).status.success());
    }
    let out = kerm(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("kerm distill build"), "{}", stderr(&out));
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let a = fixture_copy();
    let b = fixture_copy();
    assert!(kerm(a.path(), &["pipeline"]).status.success());
    assert!(kerm(b.path(), &["pipeline"]).status.success());
    for name in ["graph.json", "transe.ckpt", "metagraphs.jsonl", "model.ckpt", "run.trec", "metrics.json", "stats.json"] {
        assert_eq!(fs::read(work(a.path(), name)).unwrap(), fs::read(work(b.path(), name)).unwrap(), "{name} differs");
    }
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = fixture_copy();
    // validation: unknown config key
    fs::write(dir.path().join("bad.toml"), "nonsense = 1\n").unwrap();
    assert_eq!(kerm(dir.path(), &["-c", "bad.toml", "kg", "build"]).status.code(), Some(1));

    // data: malformed triples file
    fs::write(dir.path().join("triples.tsv"), "a\tRelatedTo\n").unwrap();
    let out = kerm(dir.path(), &["kg", "build"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains(":1:"), "{}", stderr(&out));

    // usage mistakes are validation errors too
    assert_eq!(kerm(dir.path(), &["distill", "prune", "--pi", "x"]).status.code(), Some(1));
}
