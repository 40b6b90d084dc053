use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gain(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gain")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn apple_tsv() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/apple.tsv")
}

#[test]
fn match_prints_the_one_hot_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let g = apple_tsv();
    for policy in ["longest", "all"] {
        let o = gain(
            dir.path(),
            &["gazetteer", "match", "--gazetteer", g.to_str().unwrap(), "--tokens", "where to buy apple iphone 13", "--policy", policy],
        );
        assert!(o.status.success());
        let text = stdout(&o);
        let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split_whitespace().collect()).collect();
        assert_eq!(rows[0][1..], ["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-GRP", "I-GRP", "B-CORP", "I-CORP", "B-PROD", "I-PROD", "B-CW", "I-CW"]);
        let ones = |r: &Vec<&str>| -> Vec<&str> {
            r[1..].iter().zip(&rows[0][1..]).filter(|(v, _)| **v == "1").map(|(_, h)| *h).collect()
        };
        assert_eq!(rows[1][0], "where");
        for r in &rows[1..4] {
            assert_eq!(ones(r), ["O"]);
        }
        assert_eq!(ones(&rows[4]), ["B-CORP", "B-PROD"]);
        assert_eq!(ones(&rows[5]), ["B-PROD", "I-PROD"]);
        assert_eq!(ones(&rows[6]), ["I-PROD"]);
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = gain(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    fs::write(dir.path().join("bad.json"), r#"{"model": {"hidden": 0}}"#).unwrap();
    let o = gain(dir.path(), &["--config", "bad.json", "gradcheck"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.conll"), "a\tI-PER\n").unwrap();
    let o = gain(dir.path(), &["data", "validate", "--data", "bad.conll"]);
    assert_eq!(o.status.code(), Some(2));
    let o = gain(dir.path(), &["data", "validate", "--data", "missing.conll"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(gain(p, &["--out", "syn", "data", "synth", "--fresh", "--sentences", "40"]).status.success());
    fs::write(
        p.join("boom.json"),
        r#"{"model": {"embed_dim": 4, "hidden": 4, "gaz_hidden": 2}, "train": {"pretrain_epochs": 2, "pretrain_lr": 1e300}}"#,
    )
    .unwrap();
    let o = gain(p, &["--config", "boom.json", "--out", "pre", "pretrain", "--data", "syn/data.conll"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = gain(dir.path(), &["gradcheck"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let last = text.lines().last().unwrap();
    let value: f64 = last.strip_prefix("max relative error ").unwrap().parse().unwrap();
    assert!(value < 1e-4, "{last}");
}

fn pipeline(root: &Path) {
    let run = |args: &[&str]| {
        let o = gain(root, args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    fs::write(
        root.join("c.json"),
        r#"{"model": {"embed_dim": 8, "hidden": 8, "gaz_hidden": 4, "classifier": "crf"},
            "train": {"pretrain_epochs": 1, "stage1_epochs": 1, "stage2_epochs": 2}}"#,
    )
    .unwrap();
    run(&["--out", "rich", "data", "synth", "--fresh", "--sentences", "60"]);
    run(&["--out", "low", "--seed", "3", "data", "synth", "--fresh", "--context", "low", "--sentences", "40"]);
    run(&["--config", "c.json", "--out", "pre", "pretrain", "--data", "rich/data.conll", "--vocab-data", "low/data.conll"]);
    run(&["--config", "c.json", "--out", "ad", "adapt", "--checkpoint", "pre/pretrained.ckpt", "--data", "low/data.conll"]);
    run(&[
        "--config", "c.json", "--out", "tr", "train", "--checkpoint", "ad/adapted.ckpt", "--data", "low/data.conll",
        "--val", "low/data.conll", "--gazetteer", "low/companion.tsv",
    ]);
    run(&["--out", "ev", "eval", "--checkpoint", "tr/model.ckpt", "--data", "low/data.conll", "--gazetteer", "low/companion.tsv"]);
    run(&[
        "--out", "ens", "ensemble", "--mode", "vote", "--inputs", "ev/predictions.jsonl", "ev/predictions.jsonl",
        "--weights", "1,0", "--gold", "low/data.conll",
    ]);
}

#[test]
fn pipeline_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    for f in [
        "rich/data.conll",
        "low/companion.tsv",
        "pre/pretrained.ckpt",
        "pre/report.json",
        "ad/adapted.ckpt",
        "tr/model.ckpt",
        "tr/report.json",
        "tr/run.json",
        "ev/eval.json",
        "ev/predictions.jsonl",
        "ens/ensemble.jsonl",
    ] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let run: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("tr/run.json")).unwrap()).unwrap();
    assert_eq!(run["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(run["config"]["model"]["classifier"], "crf");
    // One-hot weights reproduce the single member.
    assert_eq!(
        fs::read_to_string(a.path().join("ens/eval.json")).unwrap(),
        fs::read_to_string(a.path().join("ev/eval.json")).unwrap()
    );
}
