mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{aligned_copy, overfit_texts, overfit_vocab, random_corpus};
use emoclf::cli::{read_prepared, EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK};
use emoclf::data::{Corpus, LabelSet, Source, UtteranceRecord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn emoclf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emoclf")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the overfit fixture as a one-dialogue-per-class corpus plus its vocabulary.
fn write_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let labels = LabelSet::default();
    let mut dialogues = vec![Vec::new(); 4];
    for (text, label) in overfit_texts() {
        dialogues[label].push(UtteranceRecord {
            speaker: "Ross".into(),
            utterance: text,
            emotion: labels.name(label).unwrap().into(),
            source: Source::Original,
        });
    }
    let corpus = Corpus {
        name: "fixture".into(),
        dialogues,
    };
    let corpus_path = dir.join("fixture.json");
    std::fs::write(&corpus_path, corpus.to_json()).unwrap();
    let vocab_path = dir.join("vocab.txt");
    std::fs::write(&vocab_path, overfit_vocab().to_file_text()).unwrap();
    (corpus_path, vocab_path)
}

fn prepare(dir: &Path, corpus: &Path, vocab: &Path) -> PathBuf {
    let out = dir.join("prep");
    let run = emoclf(&["prepare", "--corpus", s(corpus), "--vocab", s(vocab), "--out", s(&out)]);
    assert_eq!(code(&run), EXIT_OK, "{}", String::from_utf8_lossy(&run.stderr));
    out.join("train.jsonl")
}

fn train(data: &Path, vocab: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", s(data), "--vocab", s(vocab), "--out", s(out)];
    args.extend_from_slice(extra);
    emoclf(&args)
}

#[test]
fn missing_inputs_exit_with_code_2() {
    let dir = TempDir::new().unwrap();
    let (corpus, vocab) = write_fixture(dir.path());
    let missing = dir.path().join("nope.txt");
    let run = emoclf(&["prepare", "--corpus", s(&corpus), "--vocab", s(&missing), "--out", s(dir.path())]);
    assert_eq!(code(&run), EXIT_INPUT);
    assert!(String::from_utf8_lossy(&run.stderr).contains("nope.txt"));

    let run = emoclf(&["predict", "--checkpoint", s(&missing), "--vocab", s(&vocab), "hi"]);
    assert_eq!(code(&run), EXIT_INPUT);

    let corrupt = dir.path().join("bad.ckpt");
    std::fs::write(&corrupt, b"not a checkpoint at all").unwrap();
    let run = emoclf(&["predict", "--checkpoint", s(&corrupt), "--vocab", s(&vocab), "hi"]);
    assert_eq!(code(&run), EXIT_INPUT);

    assert_eq!(code(&emoclf(&["train", "--data", "x.jsonl"])), EXIT_INPUT);
    assert_eq!(code(&emoclf(&["--help"])), EXIT_OK);
}

#[test]
fn prepare_obeys_the_selection_rule_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let original = random_corpus("friends", &mut rng, 6);
    let augmented = aligned_copy(&original, "de", &mut rng);
    let orig_path = dir.path().join("friends.json");
    let aug_path = dir.path().join("friends.de.json");
    std::fs::write(&orig_path, original.to_json()).unwrap();
    std::fs::write(&aug_path, augmented.to_json()).unwrap();
    let vocab = dir.path().join("vocab.txt");
    std::fs::write(&vocab, overfit_vocab().to_file_text()).unwrap();

    let run_once = |name: &str| {
        let out = dir.path().join(name);
        let run = emoclf(&[
            "prepare", "--corpus", s(&orig_path), "--augmented", s(&aug_path), "--vocab", s(&vocab), "--out", s(&out),
        ]);
        assert_eq!(code(&run), EXIT_OK, "{}", String::from_utf8_lossy(&run.stderr));
        (stdout(&run), std::fs::read(out.join("train.jsonl")).unwrap(), out)
    };
    let (text, bytes, out) = run_once("a");
    let (text2, bytes2, _) = run_once("b");
    assert_eq!(bytes, bytes2);
    assert_eq!(text.replace("/b/", "/a/"), text2.replace("/b/", "/a/"));
    assert!(text.contains("original") && text.contains("augmented"));

    let labels = LabelSet::default();
    let count = |c: &Corpus, label: &str| c.records().filter(|r| r.emotion == label).count();
    let records = read_prepared(&out.join("train.jsonl")).unwrap();
    for (id, name) in labels.names().iter().enumerate() {
        let orig = records.iter().filter(|r| r.label_id == id && r.source == "original").count();
        let aug = records.iter().filter(|r| r.label_id == id && r.source != "original").count();
        assert_eq!(orig, count(&original, name));
        let want_aug = if name == "neutral" { 0 } else { count(&augmented, name) };
        assert_eq!(aug, want_aug, "{name}");
    }
}

#[test]
fn train_predict_and_eval_round_trip() {
    let dir = TempDir::new().unwrap();
    let (corpus, vocab) = write_fixture(dir.path());
    let data = prepare(dir.path(), &corpus, &vocab);
    let run_dir = dir.path().join("run");
    let run = train(&data, &vocab, &run_dir, &["--epochs", "40", "--lr", "1e-3", "--batch-size", "8", "--seed", "1"]);
    assert_eq!(code(&run), EXIT_OK, "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["manifest.json", "epochs.jsonl", "model.ckpt"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["train"]["epochs"], 40);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    let epochs = std::fs::read_to_string(run_dir.join("epochs.jsonl")).unwrap();
    assert_eq!(epochs.lines().count(), 40);

    let ckpt = run_dir.join("model.ckpt");
    let run = emoclf(&["predict", "--checkpoint", s(&ckpt), "--vocab", s(&vocab), "Okay!"]);
    assert_eq!(code(&run), EXIT_OK);
    let text = stdout(&run);
    assert!(text.ends_with("label: neutral\n"), "{text}");
    let total: f64 = text
        .lines()
        .filter(|l| !l.starts_with("label:"))
        .map(|l| l.split_whitespace().nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 5e-4, "{total}");

    let run = emoclf(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data)]);
    assert_eq!(code(&run), EXIT_OK);
    assert!(stdout(&run).contains("micro avg"));
}

#[test]
fn eval_of_perfect_predictions_reports_unit_micro_scores() {
    let dir = TempDir::new().unwrap();
    let preds = dir.path().join("preds.jsonl");
    let lines: String = ["neutral", "joy", "sadness", "anger", "joy", "neutral"]
        .iter()
        .map(|l| format!("{{\"gold\":\"{l}\",\"pred\":\"{l}\"}}\n"))
        .collect();
    std::fs::write(&preds, lines).unwrap();
    let out = dir.path().join("eval");
    let run = emoclf(&["eval", "--predictions", s(&preds), "--out", s(&out)]);
    assert_eq!(code(&run), EXIT_OK);
    let text = stdout(&run);
    let micro = text.lines().find(|l| l.trim_start().starts_with("micro avg")).unwrap();
    assert_eq!(micro.split_whitespace().collect::<Vec<_>>(), ["micro", "avg", "1.000", "1.000", "1.000", "6"]);
    assert!(out.join("report.json").is_file());

    std::fs::write(&preds, "{\"gold\":\"joy\",\"pred\":\"surprise\"}\n").unwrap();
    assert_eq!(code(&emoclf(&["eval", "--predictions", s(&preds)])), EXIT_INPUT);
}

#[test]
fn divergent_training_exits_with_code_3() {
    let dir = TempDir::new().unwrap();
    let (corpus, vocab) = write_fixture(dir.path());
    let data = prepare(dir.path(), &corpus, &vocab);
    let base = dir.path().join("base");
    let run = train(&data, &vocab, &base, &["--epochs", "40", "--lr", "1e-3", "--batch-size", "8", "--seed", "1"]);
    assert_eq!(code(&run), EXIT_OK);
    let init = base.join("model.ckpt");

    let stiff = |lr: &str, name: &str| {
        emoclf(&[
            "train", "--data", s(&data), "--init", s(&init), "--lr", lr, "--batch-size", "1", "--epochs", "4", "--out",
            s(&dir.path().join(name)),
        ])
    };
    let run = stiff("1e-2", "hot");
    assert_eq!(code(&run), EXIT_NUMERICAL, "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stderr).contains("learning rate"));
    assert_eq!(code(&stiff("2e-5", "calm")), EXIT_OK);
}
