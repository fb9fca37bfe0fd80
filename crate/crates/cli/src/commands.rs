//! The subcommand bodies. Every command loads its inputs, does one job,
//! prints a human-readable result to stdout, and writes machine-readable
//! files atomically.

use std::path::{Path, PathBuf};
use std::time::Instant;

use polysense::data::synth::{synth_corpus, SynthSpec};
use polysense::data::{self, gold, inventory, AnnotatedCorpus, GoldKeys, Pos, SenseInventory};
use polysense::encoder::EncoderConfig;
use polysense::eval::{self, DataBundle};
use polysense::tokenizer::Vocabulary;
use polysense::train::{self, Checkpoint, TrainError};

use crate::config::RunConfig;
use crate::CliError;

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

/// Training errors are semantic except for checkpoint decoding, which is
/// an input parse failure.
fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Checkpoint { .. } => CliError::Parse(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str, key: &str) -> Result<&'a Path, CliError> {
    path.as_deref().ok_or_else(|| {
        CliError::Parse(format!("missing {flag} (pass the flag or set {key} in the config)"))
    })
}

pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_owned());
    let tmp = path.with_file_name(format!("{name}.tmp"));
    std::fs::write(&tmp, contents)
        .and_then(|()| std::fs::rename(&tmp, path))
        .map_err(|e| CliError::Validation(format!("writing {}: {e}", path.display())))
}

fn read_corpus(path: &Path) -> Result<AnnotatedCorpus, CliError> {
    let xml = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    data::parse_corpus(&xml).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn read_gold(path: &Path) -> Result<GoldKeys, CliError> {
    gold::load_gold(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn read_inventory(rc: &RunConfig) -> Result<SenseInventory, CliError> {
    let path = require(&rc.paths.inventory, "--inventory", "paths.inventory")?;
    inventory::load_inventory(path)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn read_vocab(rc: &RunConfig) -> Result<Vocabulary, CliError> {
    let path = require(&rc.paths.vocab, "--vocab", "paths.vocab")?;
    Vocabulary::load(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

/// Encoder config with `vocab_size` reconciled against the loaded vocab:
/// 0 derives it, anything else must match.
fn encoder_for(rc: &RunConfig, vocab: &Vocabulary) -> Result<EncoderConfig, CliError> {
    let mut config = rc.encoder.clone();
    if config.vocab_size == 0 {
        config.vocab_size = vocab.len();
    } else if config.vocab_size != vocab.len() {
        return Err(CliError::Validation(format!(
            "encoder.vocab_size is {} but the vocab file has {} pieces",
            config.vocab_size,
            vocab.len()
        )));
    }
    Ok(config)
}

enum Split {
    Train,
    Val,
    Test,
}

fn read_labeled(rc: &RunConfig, split: Split) -> Result<(AnnotatedCorpus, GoldKeys), CliError> {
    let (corpus, gold, cflag, ckey, gflag, gkey) = match split {
        Split::Train => (
            &rc.paths.train_corpus,
            &rc.paths.train_gold,
            "--train-corpus",
            "paths.train_corpus",
            "--train-gold",
            "paths.train_gold",
        ),
        Split::Val => (
            &rc.paths.val_corpus,
            &rc.paths.val_gold,
            "--val-corpus",
            "paths.val_corpus",
            "--val-gold",
            "paths.val_gold",
        ),
        Split::Test => (
            &rc.paths.test_corpus,
            &rc.paths.test_gold,
            "--test-corpus",
            "paths.test_corpus",
            "--test-gold",
            "paths.test_gold",
        ),
    };
    Ok((
        read_corpus(require(corpus, cflag, ckey)?)?,
        read_gold(require(gold, gflag, gkey)?)?,
    ))
}

pub fn cmd_train(rc: &RunConfig, out: &Path, metrics: &Path) -> Result<(), CliError> {
    let vocab = read_vocab(rc)?;
    let encoder_config = encoder_for(rc, &vocab)?;
    let inv = read_inventory(rc)?;
    let (train_corpus, train_gold) = read_labeled(rc, Split::Train)?;
    let (val_corpus, val_gold) = read_labeled(rc, Split::Val)?;
    data::validate(&train_corpus, &inv, &train_gold).map_err(validation)?;
    data::validate(&val_corpus, &inv, &val_gold).map_err(validation)?;
    rc.train.validate().map_err(train_err)?;

    let started = Instant::now();
    let outcome = train::train::<f64>(
        &train_corpus,
        &train_gold,
        &val_corpus,
        &val_gold,
        &inv,
        &vocab,
        &encoder_config,
        &rc.train,
    )
    .map_err(train_err)?;

    let checkpoint = Checkpoint::from_model(
        &outcome.model,
        &rc.train,
        outcome.best_epoch as u32,
        outcome.best_val_f1,
    );
    checkpoint.save(out).map_err(train_err)?;

    let mut tsv = String::from("epoch\tlr\tmean_loss\tval_f1\n");
    for s in &outcome.trace {
        tsv.push_str(&format!(
            "{}\t{:?}\t{:.6}\t{:.6}\n",
            s.epoch, s.lr, s.mean_loss, s.val_f1
        ));
    }
    write_atomic(metrics, &tsv)?;

    println!(
        "trained {} epochs in {:.1}s; best validation F1 {:.4} at epoch {}",
        outcome.trace.len(),
        started.elapsed().as_secs_f64(),
        outcome.best_val_f1,
        outcome.best_epoch
    );
    println!("checkpoint: {}", out.display());
    println!("metrics: {}", metrics.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    rc: &RunConfig,
    checkpoint: Option<&Path>,
    mfs: bool,
    buckets: bool,
    out: &Path,
) -> Result<(), CliError> {
    let inv = read_inventory(rc)?;
    let (test_corpus, test_gold) = read_labeled(rc, Split::Test)?;

    let predictions = if mfs {
        let (train_corpus, train_gold) = read_labeled(rc, Split::Train)?;
        eval::mfs_baseline(&train_corpus, &train_gold, &inv, &test_corpus, &test_gold)
            .map_err(validation)?
    } else {
        let path = checkpoint.ok_or_else(|| {
            CliError::Parse("missing --checkpoint (required unless --mfs is given)".into())
        })?;
        let ckpt = Checkpoint::load(path).map_err(train_err)?;
        let vocab = read_vocab(rc)?;
        if vocab.len() != ckpt.encoder_config.vocab_size {
            return Err(CliError::Validation(format!(
                "checkpoint was trained with a {}-piece vocab but {} has {} pieces",
                ckpt.encoder_config.vocab_size,
                require(&rc.paths.vocab, "--vocab", "paths.vocab")?.display(),
                vocab.len()
            )));
        }
        let model = ckpt.build_model::<f64>(&inv).map_err(train_err)?;
        eval::predict_all(&model, &vocab, &inv, &test_corpus, &test_gold).map_err(validation)?
    };

    let report = eval::score(&test_corpus, &predictions, &test_gold).map_err(validation)?;
    print!("{report}");
    write_atomic(out, &report.to_tsv())?;
    println!("report: {}", out.display());

    if buckets {
        let (train_corpus, train_gold) = read_labeled(rc, Split::Train)?;
        let freq = eval::frequency_report(
            &train_corpus,
            &train_gold,
            &test_corpus,
            &test_gold,
            &predictions,
            &inv,
        )
        .map_err(validation)?;
        print!("{freq}");
        let bucket_path = out.with_extension("buckets.tsv");
        write_atomic(&bucket_path, &freq.to_tsv())?;
        println!("buckets: {}", bucket_path.display());
    }
    Ok(())
}

pub fn cmd_predict(
    rc: &RunConfig,
    checkpoint: &Path,
    sentence: &str,
    target: usize,
    lemma: Option<&str>,
    pos: Option<&str>,
) -> Result<(), CliError> {
    let words: Vec<String> = sentence.split_whitespace().map(str::to_owned).collect();
    if words.is_empty() {
        return Err(CliError::Validation("the sentence has no words".into()));
    }
    if target >= words.len() {
        return Err(CliError::Validation(format!(
            "target index {target} is outside the {}-word sentence",
            words.len()
        )));
    }
    let lemma = lemma
        .map(str::to_owned)
        .unwrap_or_else(|| words[target].to_lowercase());
    let pos: Pos = match pos {
        Some(s) => s.parse().map_err(CliError::Parse)?,
        None => Pos::Noun,
    };

    let ckpt = Checkpoint::load(checkpoint).map_err(train_err)?;
    let inv = read_inventory(rc)?;
    let vocab = read_vocab(rc)?;
    if vocab.len() != ckpt.encoder_config.vocab_size {
        return Err(CliError::Validation(format!(
            "checkpoint was trained with a {}-piece vocab but the vocab file has {} pieces",
            ckpt.encoder_config.vocab_size,
            vocab.len()
        )));
    }
    let model = ckpt.build_model::<f64>(&inv).map_err(train_err)?;
    let prediction = model
        .predict(&vocab, &inv, &words, target, &lemma, pos)
        .map_err(validation)?;
    let senses = inv
        .senses(&lemma, pos)
        .expect("a prediction implies an inventory entry");

    if prediction.backoff {
        log::warn!("lemma unseen in training; first-listed sense by convention");
    }
    println!(
        "{lemma:?} ({pos}): {} senses, predicted {}",
        senses.len(),
        prediction.key
    );
    let mut order: Vec<usize> = (0..prediction.probs.len()).collect();
    order.sort_by(|&a, &b| {
        prediction.probs[b]
            .partial_cmp(&prediction.probs[a])
            .expect("probabilities are finite")
            .then(a.cmp(&b))
    });
    for i in order {
        println!(
            "{}\t{:.9}\t{}",
            senses[i].key, prediction.probs[i], senses[i].gloss
        );
    }
    Ok(())
}

pub fn cmd_stats(
    rc: &RunConfig,
    corpora: &[PathBuf],
    out: Option<&Path>,
) -> Result<(), CliError> {
    let inv = read_inventory(rc)?;
    let fallback;
    let list: &[PathBuf] = if corpora.is_empty() {
        fallback = [require(&rc.paths.test_corpus, "--corpus", "paths.test_corpus")?.to_path_buf()];
        &fallback
    } else {
        corpora
    };
    println!(
        "{:<20} {:>10} {:>10} {:>12} {:>10}",
        "corpus", "sentences", "tokens", "annotations", "ambiguity"
    );
    let mut tsv = String::from("corpus\tsentences\ttokens\tannotations\tavg_ambiguity\n");
    for path in list {
        let corpus = read_corpus(path)?;
        let stats = data::stats(&corpus, &inv);
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        println!(
            "{label:<20} {:>10} {:>10} {:>12} {:>10.2}",
            stats.sentences, stats.tokens, stats.annotations, stats.avg_ambiguity
        );
        tsv.push_str(&format!(
            "{label}\t{}\t{}\t{}\t{:.6}\n",
            stats.sentences, stats.tokens, stats.annotations, stats.avg_ambiguity
        ));
    }
    if let Some(path) = out {
        write_atomic(path, &tsv)?;
        println!("stats: {}", path.display());
    }
    Ok(())
}

pub fn cmd_ablate(rc: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let vocab = read_vocab(rc)?;
    let encoder_config = encoder_for(rc, &vocab)?;
    let inv = read_inventory(rc)?;
    let (train_corpus, train_gold) = read_labeled(rc, Split::Train)?;
    let (val_corpus, val_gold) = read_labeled(rc, Split::Val)?;
    let (test_corpus, test_gold) = read_labeled(rc, Split::Test)?;
    rc.train.validate().map_err(train_err)?;

    let bundle = DataBundle {
        train_corpus: &train_corpus,
        train_gold: &train_gold,
        val_corpus: &val_corpus,
        val_gold: &val_gold,
        test_corpus: &test_corpus,
        test_gold: &test_gold,
        inventory: &inv,
        vocab: &vocab,
    };
    let started = Instant::now();
    let report = eval::ablation_grid::<f64>(&bundle, &encoder_config, &rc.train).map_err(train_err)?;
    print!("{report}");
    println!("({:.1}s)", started.elapsed().as_secs_f64());
    if let Some(path) = out {
        write_atomic(path, &report.to_tsv())?;
        println!("grid: {}", path.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    out_dir: &Path,
    lemmas: usize,
    senses: usize,
    sentences: usize,
    vocab_size: usize,
    held_out: usize,
    zipf: Option<f64>,
    seed: u64,
) -> Result<(), CliError> {
    let spec = SynthSpec {
        num_lemmas: lemmas,
        senses_per_lemma: senses,
        sentences_per_sense: sentences,
        vocab_size,
        held_out_lemmas: held_out,
        zipf,
        seed,
    };
    if spec.num_lemmas == 0 || spec.senses_per_lemma == 0 || spec.sentences_per_sense == 0 {
        return Err(CliError::Validation(
            "lemmas, senses, and sentences must all be at least 1".into(),
        ));
    }
    if spec.held_out_lemmas >= spec.num_lemmas {
        return Err(CliError::Validation(format!(
            "--held-out {} must leave at least one trainable lemma of {}",
            spec.held_out_lemmas, spec.num_lemmas
        )));
    }
    let data = synth_corpus(&spec);
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Validation(format!("creating {}: {e}", out_dir.display())))?;

    let file = |name: &str| out_dir.join(name);
    write_atomic(&file("train.xml"), &data::serialize_corpus(&data.train.corpus))?;
    write_atomic(&file("train.key"), &gold::serialize_gold(&data.train.gold))?;
    write_atomic(&file("val.xml"), &data::serialize_corpus(&data.val.corpus))?;
    write_atomic(&file("val.key"), &gold::serialize_gold(&data.val.gold))?;
    write_atomic(&file("test.xml"), &data::serialize_corpus(&data.test.corpus))?;
    write_atomic(&file("test.key"), &gold::serialize_gold(&data.test.gold))?;
    write_atomic(
        &file("inventory.tsv"),
        &inventory::serialize_inventory(&data.inventory),
    )?;
    let mut vocab_text = String::new();
    for id in 0..data.vocab.len() {
        vocab_text.push_str(data.vocab.piece(id));
        vocab_text.push('\n');
    }
    write_atomic(&file("vocab.txt"), &vocab_text)?;

    let mut cfg = String::from("# generated dataset\n");
    for (key, name) in [
        ("paths.train_corpus", "train.xml"),
        ("paths.train_gold", "train.key"),
        ("paths.val_corpus", "val.xml"),
        ("paths.val_gold", "val.key"),
        ("paths.test_corpus", "test.xml"),
        ("paths.test_gold", "test.key"),
        ("paths.inventory", "inventory.tsv"),
        ("paths.vocab", "vocab.txt"),
    ] {
        cfg.push_str(&format!("{key} = {}\n", file(name).display()));
    }
    cfg.push_str(&format!("train.seed = {seed}\n"));
    write_atomic(&file("run.cfg"), &cfg)?;

    println!(
        "wrote {} train / {} val / {} test sentences, {} inventory entries, {} vocab pieces",
        data.train.corpus.sentences.len(),
        data.val.corpus.sentences.len(),
        data.test.corpus.sentences.len(),
        data.inventory.len(),
        data.vocab.len()
    );
    if !data.held_out.is_empty() {
        println!("held-out lemmas (test only): {}", data.held_out.join(", "));
    }
    println!("config: {}", file("run.cfg").display());
    Ok(())
}
