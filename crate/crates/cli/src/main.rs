//! Command-line surface for the sense-disambiguation pipeline: train,
//! evaluate, predict, inspect corpora, run the pooling ablation, and
//! generate synthetic datasets.
//!
//! Exit codes: 0 success, 1 semantic or validation failure, 2 input
//! parse failure (bad flags, config, or input files).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_pooling, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Inputs could not be understood: exit 2.
    Parse(String),
    /// Inputs were understood but are invalid: exit 1.
    Validation(String),
}

#[derive(Parser)]
#[command(
    name = "polysense",
    version,
    about = "Word sense disambiguation: a small transformer trained from scratch"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes the best-validation checkpoint and a per-epoch metrics trace.
    Train(TrainArgs),
    /// Score a checkpoint (or the most-frequent-sense baseline) on a labeled corpus.
    Eval(EvalArgs),
    /// Disambiguate one word of one sentence, printing ranked senses.
    Predict(PredictArgs),
    /// Print corpus statistics: sentences, tokens, annotations, ambiguity.
    Stats(StatsArgs),
    /// Train all four pooling variants with equal seeds and print the grid.
    Ablate(AblateArgs),
    /// Generate a synthetic sense-annotated dataset.
    Synth(SynthArgs),
}

/// Options shared by every data-driven command. Values resolve as
/// defaults, then the config file, then these flags.
#[derive(Args)]
struct CommonArgs {
    /// Flat `key = value` config file; '#' starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long, help = "Training corpus (xml)")]
    train_corpus: Option<PathBuf>,
    #[arg(long, help = "Training gold keys")]
    train_gold: Option<PathBuf>,
    #[arg(long, help = "Validation corpus (xml)")]
    val_corpus: Option<PathBuf>,
    #[arg(long, help = "Validation gold keys")]
    val_gold: Option<PathBuf>,
    #[arg(long, help = "Test corpus (xml)")]
    test_corpus: Option<PathBuf>,
    #[arg(long, help = "Test gold keys")]
    test_gold: Option<PathBuf>,
    #[arg(long, help = "Sense inventory (tsv)")]
    inventory: Option<PathBuf>,
    #[arg(long, help = "Wordpiece vocabulary, one piece per line")]
    vocab: Option<PathBuf>,

    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    freeze_epochs: Option<usize>,
    #[arg(long, help = "Classifier dropout rate")]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, help = "Classifier variant: bert or bert_def")]
    variant: Option<String>,
    #[arg(long, help = "Pooling: mean, max, mean_concat, or max_concat")]
    pooling: Option<String>,
    #[arg(long, help = "Encode glosses with the context encoder (true/false)")]
    share_encoders: Option<bool>,

    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    num_heads: Option<usize>,
    #[arg(long)]
    ffn: Option<usize>,
    #[arg(long)]
    max_positions: Option<usize>,
    #[arg(long, help = "Encoder dropout rate")]
    encoder_dropout: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint output path.
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    /// Per-epoch metrics trace (TSV).
    #[arg(long, default_value = "metrics.tsv")]
    metrics: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained checkpoint (required unless --mfs).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score the most-frequent-sense baseline instead of a model.
    #[arg(long)]
    mfs: bool,
    /// Also break results down by training-set frequency.
    #[arg(long)]
    buckets: bool,
    /// Score report output (TSV).
    #[arg(long, default_value = "report.tsv")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Whitespace-tokenized sentence.
    #[arg(long)]
    sentence: String,
    /// Zero-based index of the word to disambiguate.
    #[arg(long)]
    target: usize,
    /// Lemma of the target (default: the target word, lowercased).
    #[arg(long)]
    lemma: Option<String>,
    /// Part of speech: NOUN, VERB, ADJ, or ADV (default NOUN).
    #[arg(long)]
    pos: Option<String>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus files to summarize (default: the configured test corpus).
    #[arg(long)]
    corpus: Vec<PathBuf>,
    /// Optional TSV output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Optional TSV output for the grid.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for the generated files.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    lemmas: usize,
    #[arg(long, default_value_t = 3)]
    senses: usize,
    /// Sentences per (lemma, sense) pair.
    #[arg(long, default_value_t = 10)]
    sentences: usize,
    #[arg(long, default_value_t = 60)]
    vocab_size: usize,
    /// Lemmas kept out of train/val and placed only in the test set.
    #[arg(long, default_value_t = 0)]
    held_out: usize,
    /// Zipf exponent for skewed sense frequencies.
    #[arg(long)]
    zipf: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Defaults, then the config file, then flags; echo the result.
fn resolve(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut rc = RunConfig::default();
    if let Some(path) = &common.config {
        rc.apply_file(path)?;
    }
    if let Some(v) = common.epochs {
        rc.train.epochs = v;
    }
    if let Some(v) = common.base_lr {
        rc.train.base_lr = v;
    }
    if let Some(v) = common.freeze_epochs {
        rc.train.freeze_epochs = v;
    }
    if let Some(v) = common.dropout {
        rc.train.dropout = v;
    }
    if let Some(v) = common.batch_size {
        rc.train.batch_size = v;
    }
    if let Some(v) = common.seed {
        rc.train.seed = v;
    }
    if let Some(v) = &common.variant {
        rc.train.variant = v.parse().map_err(CliError::Parse)?;
    }
    if let Some(v) = &common.pooling {
        rc.train.pooling = parse_pooling(v).map_err(CliError::Parse)?;
    }
    if let Some(v) = common.share_encoders {
        rc.train.share_encoders = v;
    }
    if let Some(v) = common.num_layers {
        rc.encoder.num_layers = v;
    }
    if let Some(v) = common.hidden {
        rc.encoder.hidden = v;
    }
    if let Some(v) = common.num_heads {
        rc.encoder.num_heads = v;
    }
    if let Some(v) = common.ffn {
        rc.encoder.ffn = v;
    }
    if let Some(v) = common.max_positions {
        rc.encoder.max_positions = v;
    }
    if let Some(v) = common.encoder_dropout {
        rc.encoder.dropout_rate = v;
    }
    for (flag, slot) in [
        (&common.train_corpus, &mut rc.paths.train_corpus),
        (&common.train_gold, &mut rc.paths.train_gold),
        (&common.val_corpus, &mut rc.paths.val_corpus),
        (&common.val_gold, &mut rc.paths.val_gold),
        (&common.test_corpus, &mut rc.paths.test_corpus),
        (&common.test_gold, &mut rc.paths.test_gold),
        (&common.inventory, &mut rc.paths.inventory),
        (&common.vocab, &mut rc.paths.vocab),
    ] {
        if flag.is_some() {
            *slot = flag.clone();
        }
    }
    log::info!("resolved configuration:\n{rc}");
    Ok(rc)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            let rc = resolve(&args.common)?;
            commands::cmd_train(&rc, &args.out, &args.metrics)
        }
        Command::Eval(args) => {
            let rc = resolve(&args.common)?;
            commands::cmd_eval(
                &rc,
                args.checkpoint.as_deref(),
                args.mfs,
                args.buckets,
                &args.out,
            )
        }
        Command::Predict(args) => {
            let rc = resolve(&args.common)?;
            commands::cmd_predict(
                &rc,
                &args.checkpoint,
                &args.sentence,
                args.target,
                args.lemma.as_deref(),
                args.pos.as_deref(),
            )
        }
        Command::Stats(args) => {
            let rc = resolve(&args.common)?;
            commands::cmd_stats(&rc, &args.corpus, args.out.as_deref())
        }
        Command::Ablate(args) => {
            let rc = resolve(&args.common)?;
            commands::cmd_ablate(&rc, args.out.as_deref())
        }
        Command::Synth(args) => commands::cmd_synth(
            &args.out_dir,
            args.lemmas,
            args.senses,
            args.sentences,
            args.vocab_size,
            args.held_out,
            args.zipf,
            args.seed,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Parse(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
