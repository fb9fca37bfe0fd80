//! End-to-end runs of the compiled binary: every subcommand, the exit
//! code contract, and output determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_polysense")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Generate a small dataset under dir/data.
fn synth_sized(dir: &Path, lemmas: &str, senses: &str, sentences: &str) {
    let out = run(
        dir,
        &[
            "synth",
            "--out-dir",
            "data",
            "--lemmas",
            lemmas,
            "--senses",
            senses,
            "--sentences",
            sentences,
            "--seed",
            "4",
        ],
    );
    assert_eq!(code(&out), 0, "synth failed: {}", stderr(&out));
}

fn synth(dir: &Path) {
    synth_sized(dir, "3", "2", "6");
}

/// Train a deliberately tiny model so tests stay fast.
fn train_with(dir: &Path, epochs: &str, freeze: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--config",
        "data/run.cfg",
        "--epochs",
        epochs,
        "--freeze-epochs",
        freeze,
        "--num-layers",
        "1",
        "--hidden",
        "16",
        "--num-heads",
        "2",
        "--ffn",
        "24",
        "--out",
        "model.ckpt",
        "--metrics",
        "metrics.tsv",
    ];
    args.extend_from_slice(extra);
    run(dir, &args)
}

fn train(dir: &Path) -> Output {
    train_with(dir, "3", "1", &[])
}

#[test]
fn synth_writes_a_complete_deterministic_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    for name in [
        "train.xml",
        "train.key",
        "val.xml",
        "val.key",
        "test.xml",
        "test.key",
        "inventory.tsv",
        "vocab.txt",
        "run.cfg",
    ] {
        assert!(tmp.path().join("data").join(name).exists(), "{name} missing");
    }
    let first = std::fs::read(tmp.path().join("data/train.xml")).unwrap();
    let tmp2 = tempfile::tempdir().unwrap();
    synth(tmp2.path());
    let second = std::fs::read(tmp2.path().join("data/train.xml")).unwrap();
    assert_eq!(first, second, "same seed, same corpus bytes");
}

#[test]
fn train_eval_predict_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let out = train(tmp.path());
    assert_eq!(code(&out), 0, "train failed: {}", stderr(&out));
    assert!(tmp.path().join("model.ckpt").exists());
    let metrics = std::fs::read_to_string(tmp.path().join("metrics.tsv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch\tlr\tmean_loss\tval_f1");
    assert_eq!(lines.len(), 4, "header plus one row per epoch");

    let out = run(
        tmp.path(),
        &[
            "eval",
            "--config",
            "data/run.cfg",
            "--checkpoint",
            "model.ckpt",
            "--buckets",
            "--out",
            "report.tsv",
        ],
    );
    assert_eq!(code(&out), 0, "eval failed: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("ALL"), "overall row printed:\n{text}");
    let report = std::fs::read_to_string(tmp.path().join("report.tsv")).unwrap();
    assert!(report.starts_with("section\tlabel\tattempted\tcorrect\ttotal\tprecision\trecall\tf1"));
    assert!(tmp.path().join("report.buckets.tsv").exists());

    // lemma names are generated; take one from the inventory
    let inventory = std::fs::read_to_string(tmp.path().join("data/inventory.tsv")).unwrap();
    let mut fields = inventory.lines().next().unwrap().split('\t');
    let lemma = fields.next().unwrap().to_owned();
    let pos = fields.next().unwrap().to_owned();
    let sentence = format!("the {lemma} is here");
    let predict = |_: ()| {
        run(
            tmp.path(),
            &[
                "predict",
                "--config",
                "data/run.cfg",
                "--checkpoint",
                "model.ckpt",
                "--sentence",
                &sentence,
                "--target",
                "1",
                "--lemma",
                &lemma,
                "--pos",
                &pos,
            ],
        )
    };
    let out = predict(());
    assert_eq!(code(&out), 0, "predict failed: {}", stderr(&out));
    let text = stdout(&out);
    let probs: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(probs.len(), 2, "two senses listed:\n{text}");
    let sum: f64 = probs.iter().sum();
    assert!((sum - 1.0).abs() <= 1e-6, "printed sum {sum}");
    assert!(probs[0] >= probs[1], "ranked by probability");

    let again = predict(());
    assert_eq!(stdout(&again), text, "repeated prediction is identical");
}

#[test]
fn monosemous_lemma_predicts_probability_one() {
    let tmp = tempfile::tempdir().unwrap();
    synth_sized(tmp.path(), "3", "1", "6");
    let out = train(tmp.path());
    assert_eq!(code(&out), 0, "train failed: {}", stderr(&out));
    let inventory = std::fs::read_to_string(tmp.path().join("data/inventory.tsv")).unwrap();
    let mut fields = inventory.lines().next().unwrap().split('\t');
    let lemma = fields.next().unwrap().to_owned();
    let pos = fields.next().unwrap().to_owned();
    let sentence = format!("the {lemma} is here");
    let out = run(
        tmp.path(),
        &[
            "predict",
            "--config",
            "data/run.cfg",
            "--checkpoint",
            "model.ckpt",
            "--sentence",
            &sentence,
            "--target",
            "1",
            "--lemma",
            &lemma,
            "--pos",
            &pos,
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let senses: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(senses.len(), 1, "{text}");
    assert_eq!(senses[0].split('\t').nth(1).unwrap(), "1.000000000");
}

#[test]
fn unknown_lemma_exits_one_with_the_message() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let out = train(tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(
        tmp.path(),
        &[
            "predict",
            "--config",
            "data/run.cfg",
            "--checkpoint",
            "model.ckpt",
            "--sentence",
            "the ghost is here",
            "--target",
            "1",
            "--pos",
            "NOUN",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("not in the sense inventory"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn missing_inventory_exits_two_naming_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    // a config without the inventory line
    let cfg = std::fs::read_to_string(tmp.path().join("data/run.cfg")).unwrap();
    let stripped: String = cfg
        .lines()
        .filter(|l| !l.starts_with("paths.inventory"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(tmp.path().join("partial.cfg"), stripped).unwrap();
    let out = run(
        tmp.path(),
        &["train", "--config", "partial.cfg", "--epochs", "2", "--freeze-epochs", "1"],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--inventory"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.cfg"), "bogus_key = 1\n").unwrap();
    let out = run(tmp.path(), &["train", "--config", "bad.cfg"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bogus_key"), "{}", stderr(&out));
}

#[test]
fn config_comments_and_flag_precedence_work() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    // the config asks for 2 epochs; the flag overrides to 3
    let mut cfg = std::fs::read_to_string(tmp.path().join("data/run.cfg")).unwrap();
    cfg.push_str("train.epochs = 2   # overridden by the flag\ntrain.freeze_epochs = 1\n");
    std::fs::write(tmp.path().join("data/run.cfg"), cfg).unwrap();
    let out = train(tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics = std::fs::read_to_string(tmp.path().join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 4, "3 epochs from the flag win:\n{metrics}");
    assert!(
        stderr(&out).contains("resolved configuration"),
        "config echo present"
    );
}

#[test]
fn invalid_schedule_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let out = train_with(tmp.path(), "3", "3", &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("freeze_epochs"), "{}", stderr(&out));
}

#[test]
fn corrupt_checkpoint_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    std::fs::write(tmp.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    let out = run(
        tmp.path(),
        &[
            "eval",
            "--config",
            "data/run.cfg",
            "--checkpoint",
            "junk.ckpt",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("junk.ckpt"), "{}", stderr(&out));
}

#[test]
fn mismatched_inventory_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let out = train(tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    // a larger regenerated inventory no longer matches the checkpoint
    let out = run(
        tmp.path(),
        &[
            "synth",
            "--out-dir",
            "other",
            "--lemmas",
            "3",
            "--senses",
            "3",
            "--sentences",
            "6",
            "--seed",
            "4",
        ],
    );
    assert_eq!(code(&out), 0);
    let out = run(
        tmp.path(),
        &[
            "eval",
            "--config",
            "data/run.cfg",
            "--inventory",
            "other/inventory.tsv",
            "--checkpoint",
            "model.ckpt",
        ],
    );
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn eval_requires_a_checkpoint_unless_mfs() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let out = run(tmp.path(), &["eval", "--config", "data/run.cfg"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--checkpoint"), "{}", stderr(&out));

    let out = run(
        tmp.path(),
        &["eval", "--config", "data/run.cfg", "--mfs", "--out", "mfs.tsv"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("ALL"));
    assert!(tmp.path().join("mfs.tsv").exists());
}

#[test]
fn stats_prints_a_row_per_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let out = run(
        tmp.path(),
        &[
            "stats",
            "--config",
            "data/run.cfg",
            "--corpus",
            "data/train.xml",
            "--corpus",
            "data/test.xml",
            "--out",
            "stats.tsv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("train"), "{text}");
    assert!(text.contains("test"), "{text}");
    let tsv = std::fs::read_to_string(tmp.path().join("stats.tsv")).unwrap();
    assert!(tsv.starts_with("corpus\tsentences\ttokens\tannotations\tavg_ambiguity"));
    assert_eq!(tsv.lines().count(), 3);
}

#[test]
fn ablate_prints_the_four_row_grid() {
    let tmp = tempfile::tempdir().unwrap();
    synth_sized(tmp.path(), "2", "2", "5");
    let out = run(
        tmp.path(),
        &[
            "ablate",
            "--config",
            "data/run.cfg",
            "--epochs",
            "2",
            "--freeze-epochs",
            "1",
            "--num-layers",
            "1",
            "--hidden",
            "16",
            "--num-heads",
            "2",
            "--ffn",
            "24",
            "--out",
            "grid.tsv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let tsv = std::fs::read_to_string(tmp.path().join("grid.tsv")).unwrap();
    let labels: Vec<&str> = tsv
        .lines()
        .skip(1)
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(labels, vec!["Mean", "Max", "Mean_Concat", "Max_Concat"]);
}

#[test]
fn training_twice_with_one_seed_is_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    synth_sized(tmp.path(), "2", "2", "5");
    let out = train_with(tmp.path(), "3", "1", &["--seed", "9"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let first = std::fs::read(tmp.path().join("model.ckpt")).unwrap();
    let first_metrics = std::fs::read(tmp.path().join("metrics.tsv")).unwrap();
    let out = train_with(tmp.path(), "3", "1", &["--seed", "9"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(first, std::fs::read(tmp.path().join("model.ckpt")).unwrap());
    assert_eq!(
        first_metrics,
        std::fs::read(tmp.path().join("metrics.tsv")).unwrap()
    );
}
