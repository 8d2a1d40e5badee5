//! End-to-end checks of the command-line interface via the built binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use efparse::conll::write_conll;
use efparse::synth::generate_corpus;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_efparse"))
}

fn write_corpus(path: &Path, n: usize, seed: u64) {
    let corpus = generate_corpus(n, &mut ChaCha20Rng::seed_from_u64(seed));
    let mut buf = Vec::new();
    write_conll(&mut buf, &corpus, None).unwrap();
    fs::write(path, buf).unwrap();
}

fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "hyper": {
            "word_dim": 16, "pos_dim": 8, "dist_dim": 8, "rel_dim": 8,
            "distance_cap": 8, "bilstm_hidden": 16, "tree_dim": 16,
            "scorer_hidden": 32, "window": 2, "encoder": "tree-lstm",
            "labeled": true, "external_dim": 0
        },
        "epochs": 3,
        "learning_rate": 0.1,
        "seed": 11
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

struct Trained {
    dir: tempfile::TempDir,
    model: PathBuf,
    train: PathBuf,
    dev: PathBuf,
    summary: String,
    log: String,
}

fn train_tiny(seed_offset: u64) -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.conll");
    let dev = dir.path().join("dev.conll");
    write_corpus(&train, 30, 100 + seed_offset);
    write_corpus(&dev, 10, 200 + seed_offset);
    let config = tiny_config(dir.path());
    let model = dir.path().join("model.eftp");
    let out = run(bin()
        .arg("train")
        .arg("--config")
        .arg(&config)
        .arg("--train")
        .arg(&train)
        .arg("--dev")
        .arg(&dev)
        .arg("--model")
        .arg(&model));
    assert!(
        out.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    Trained {
        dir,
        model,
        train,
        dev,
        summary: String::from_utf8(out.stdout).unwrap(),
        log: String::from_utf8(out.stderr).unwrap(),
    }
}

#[test]
fn train_writes_checkpoint_and_logs() {
    let t = train_tiny(0);
    assert!(t.model.exists());
    assert!(efparse::model::Model::meta_path(&t.model).exists());
    // one log line per epoch with the expected fields
    let epoch_lines: Vec<&str> = t.log.lines().filter(|l| l.starts_with("epoch ")).collect();
    assert_eq!(epoch_lines.len(), 3);
    for line in epoch_lines {
        assert!(line.contains("loss"), "{line}");
        assert!(line.contains("dev-uas"), "{line}");
        assert!(line.contains("dev-las"), "{line}");
    }
    let summary: serde_json::Value = serde_json::from_str(&t.summary).unwrap();
    assert!(summary["best_dev_uas"].as_f64().unwrap() >= 0.0);
}

#[test]
fn parse_then_eval_matches_train_dev_score() {
    let t = train_tiny(1);
    let parsed = t.dir.path().join("dev.parsed.conll");
    let out = run(bin()
        .arg("parse")
        .arg("--model")
        .arg(&t.model)
        .arg("--input")
        .arg(&t.dev)
        .arg("--output")
        .arg(&parsed));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = run(bin()
        .arg("eval")
        .arg("--gold")
        .arg(&t.dev)
        .arg("--pred")
        .arg(&parsed)
        .arg("--json"));
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let evaluated_uas = report["uas"].as_f64().unwrap();

    // the checkpoint holds the best epoch; its dev score must reproduce
    let summary: serde_json::Value = serde_json::from_str(&t.summary).unwrap();
    let trained_uas = summary["best_dev_uas"].as_f64().unwrap();
    assert!(
        (evaluated_uas - trained_uas).abs() < 1e-12,
        "parse+eval {evaluated_uas} vs train log {trained_uas}"
    );
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let a = train_tiny(2);
    let b = train_tiny(2);
    assert_eq!(a.log, b.log, "training logs differ");
    assert_eq!(a.summary, b.summary);
    assert_eq!(
        fs::read(&a.model).unwrap(),
        fs::read(&b.model).unwrap(),
        "checkpoints differ"
    );
    assert_eq!(
        fs::read(efparse::model::Model::meta_path(&a.model)).unwrap(),
        fs::read(efparse::model::Model::meta_path(&b.model)).unwrap()
    );

    // parses and reports are byte-identical too
    let parse = |t: &Trained| {
        let out = run(bin()
            .arg("parse")
            .arg("--model")
            .arg(&t.model)
            .arg("--input")
            .arg(&t.dev));
        assert!(out.status.success());
        out.stdout
    };
    assert_eq!(parse(&a), parse(&b));
}

#[test]
fn parse_empty_input_gives_empty_output() {
    let t = train_tiny(3);
    let empty = t.dir.path().join("empty.conll");
    fs::write(&empty, "").unwrap();
    let out = run(bin()
        .arg("parse")
        .arg("--model")
        .arg(&t.model)
        .arg("--input")
        .arg(&empty));
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
}

#[test]
fn parse_output_is_single_rooted() {
    let t = train_tiny(4);
    let out = run(bin()
        .arg("parse")
        .arg("--model")
        .arg(&t.model)
        .arg("--input")
        .arg(&t.train));
    assert!(out.status.success());
    let records = efparse::conll::read_conll(&out.stdout[..]).unwrap();
    for rec in &records {
        let heads = rec.gold_heads().unwrap();
        assert!(efparse::conll::is_well_formed_tree(&heads));
    }
}

#[test]
fn usage_errors_exit_1() {
    // no train file
    let out = run(bin().arg("train"));
    assert_eq!(out.status.code(), Some(1));
    // unknown flag
    let out = run(bin().arg("parse").arg("--bogus"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conll");
    fs::write(&bad, "1\tonly\tthree\n").unwrap();
    let good = dir.path().join("good.conll");
    write_corpus(&good, 3, 5);

    // malformed training data
    let out = run(bin()
        .arg("train")
        .arg("--train")
        .arg(&bad)
        .arg("--dev")
        .arg(&good)
        .arg("--epochs")
        .arg("1"));
    assert_eq!(out.status.code(), Some(2));

    // missing dev file path
    let missing = dir.path().join("nope.conll");
    let out = run(bin()
        .arg("train")
        .arg("--train")
        .arg(&good)
        .arg("--dev")
        .arg(&missing)
        .arg("--epochs")
        .arg("1"));
    assert_eq!(out.status.code(), Some(2));

    // misaligned eval inputs
    let short = dir.path().join("short.conll");
    write_corpus(&short, 2, 5);
    let out = run(bin()
        .arg("eval")
        .arg("--gold")
        .arg(&good)
        .arg("--pred")
        .arg(&short));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn checkpoint_mismatch_exits_3() {
    let t = train_tiny(5);
    // tamper with the meta so dims no longer match the checkpoint
    let meta_path = efparse::model::Model::meta_path(&t.model);
    let mut meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&meta_path).unwrap()).unwrap();
    meta["hyper"]["word_dim"] = serde_json::json!(99);
    fs::write(&meta_path, serde_json::to_string(&meta).unwrap()).unwrap();

    let out = run(bin()
        .arg("parse")
        .arg("--model")
        .arg(&t.model)
        .arg("--input")
        .arg(&t.dev));
    assert_eq!(out.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("99"), "{msg}");
    assert!(msg.contains("16"), "{msg}");
}

#[test]
fn analyze_emits_csv_profiles() {
    let t = train_tiny(6);
    let parsed = t.dir.path().join("dev.parsed.conll");
    let out = run(bin()
        .arg("parse")
        .arg("--model")
        .arg(&t.model)
        .arg("--input")
        .arg(&t.dev)
        .arg("--output")
        .arg(&parsed));
    assert!(out.status.success());

    let out = run(bin()
        .arg("analyze")
        .arg("--gold")
        .arg(&t.dev)
        .arg("--pred")
        .arg(&parsed));
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("kind,bucket,errors,total,rate"));
    let rows: Vec<&str> = lines.collect();
    assert!(rows.iter().any(|r| r.starts_with("length,")));
    for group in ["noun", "verb", "pronoun", "adjective", "adverb", "conjunction"] {
        assert!(
            rows.iter().any(|r| r.starts_with(&format!("pos,{group},"))),
            "missing group {group}"
        );
    }
    for row in rows {
        assert_eq!(row.split(',').count(), 5, "{row}");
    }

    // gold vs gold: all rates zero
    let out = run(bin()
        .arg("analyze")
        .arg("--gold")
        .arg(&t.dev)
        .arg("--pred")
        .arg(&t.dev));
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    for row in csv.lines().skip(1) {
        let rate = row.split(',').nth(4).unwrap();
        assert_eq!(rate, "0.000000", "{row}");
    }
}

#[test]
fn eval_text_report_has_counts() {
    let t = train_tiny(7);
    let out = run(bin()
        .arg("eval")
        .arg("--gold")
        .arg(&t.dev)
        .arg("--pred")
        .arg(&t.dev));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("UAS      1.0000"), "{text}");
    assert!(text.contains("LAS      1.0000"), "{text}");
    assert!(text.contains("excluded"), "{text}");
}
