//! Flat `key = value` run configuration. Defaults are overridden by the
//! config file, which is overridden by command-line flags; the resolved
//! result is echoed to the log before any work starts.

use std::fmt;
use std::path::{Path, PathBuf};

use polysense::encoder::EncoderConfig;
use polysense::model::{Merge, PoolingSpec};
use polysense::train::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct Paths {
    pub train_corpus: Option<PathBuf>,
    pub train_gold: Option<PathBuf>,
    pub val_corpus: Option<PathBuf>,
    pub val_gold: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub test_gold: Option<PathBuf>,
    pub inventory: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// `vocab_size` 0 means "derive from the vocab file".
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            encoder: EncoderConfig::desk(0),
            train: TrainConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Apply a config file on top of the current values. Lines hold one
    /// `key = value` pair; '#' starts a comment; unknown keys are errors.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("config {}: {e}", path.display())))?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Parse(format!(
                    "config {} line {}: expected `key = value`, got {raw:?}",
                    path.display(),
                    idx + 1
                ))
            })?;
            self.set(key.trim(), value.trim()).map_err(|msg| {
                CliError::Parse(format!("config {} line {}: {msg}", path.display(), idx + 1))
            })?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("key {key:?} has unreadable value {value:?}"))
        }
        match key {
            "encoder.num_layers" => self.encoder.num_layers = num(key, value)?,
            "encoder.hidden" => self.encoder.hidden = num(key, value)?,
            "encoder.num_heads" => self.encoder.num_heads = num(key, value)?,
            "encoder.ffn" => self.encoder.ffn = num(key, value)?,
            "encoder.vocab_size" => self.encoder.vocab_size = num(key, value)?,
            "encoder.max_positions" => self.encoder.max_positions = num(key, value)?,
            "encoder.dropout_rate" => self.encoder.dropout_rate = num(key, value)?,
            "train.epochs" => self.train.epochs = num(key, value)?,
            "train.base_lr" => self.train.base_lr = num(key, value)?,
            "train.freeze_epochs" => self.train.freeze_epochs = num(key, value)?,
            "train.dropout" => self.train.dropout = num(key, value)?,
            "train.batch_size" => self.train.batch_size = num(key, value)?,
            "train.seed" => self.train.seed = num(key, value)?,
            "variant" => self.train.variant = value.parse()?,
            "share_encoders" => self.train.share_encoders = num(key, value)?,
            "pooling.merge" => self.train.pooling.merge = value.parse()?,
            "pooling.concat_sentence_vector" => {
                self.train.pooling.concat_sentence_vector = num(key, value)?
            }
            "paths.train_corpus" => self.paths.train_corpus = Some(PathBuf::from(value)),
            "paths.train_gold" => self.paths.train_gold = Some(PathBuf::from(value)),
            "paths.val_corpus" => self.paths.val_corpus = Some(PathBuf::from(value)),
            "paths.val_gold" => self.paths.val_gold = Some(PathBuf::from(value)),
            "paths.test_corpus" => self.paths.test_corpus = Some(PathBuf::from(value)),
            "paths.test_gold" => self.paths.test_gold = Some(PathBuf::from(value)),
            "paths.inventory" => self.paths.inventory = Some(PathBuf::from(value)),
            "paths.vocab" => self.paths.vocab = Some(PathBuf::from(value)),
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }
}

/// Shorthand pooling names accepted on the command line, matching the
/// ablation row labels.
pub fn parse_pooling(s: &str) -> Result<PoolingSpec, String> {
    let (merge, concat) = match s.to_ascii_lowercase().as_str() {
        "mean" => (Merge::Mean, false),
        "max" => (Merge::Max, false),
        "mean_concat" => (Merge::Mean, true),
        "max_concat" => (Merge::Max, true),
        other => {
            return Err(format!(
                "unknown pooling {other:?} (expected mean, max, mean_concat, or max_concat)"
            ))
        }
    };
    Ok(PoolingSpec {
        merge,
        concat_sentence_vector: concat,
    })
}

fn path_line(f: &mut fmt::Formatter<'_>, key: &str, path: &Option<PathBuf>) -> fmt::Result {
    match path {
        Some(p) => writeln!(f, "{key} = {}", p.display()),
        None => writeln!(f, "# {key} unset"),
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = &self.encoder;
        let t = &self.train;
        writeln!(f, "encoder.num_layers = {}", e.num_layers)?;
        writeln!(f, "encoder.hidden = {}", e.hidden)?;
        writeln!(f, "encoder.num_heads = {}", e.num_heads)?;
        writeln!(f, "encoder.ffn = {}", e.ffn)?;
        writeln!(f, "encoder.vocab_size = {}", e.vocab_size)?;
        writeln!(f, "encoder.max_positions = {}", e.max_positions)?;
        writeln!(f, "encoder.dropout_rate = {:?}", e.dropout_rate)?;
        writeln!(f, "train.epochs = {}", t.epochs)?;
        writeln!(f, "train.base_lr = {:?}", t.base_lr)?;
        writeln!(f, "train.freeze_epochs = {}", t.freeze_epochs)?;
        writeln!(f, "train.dropout = {:?}", t.dropout)?;
        writeln!(f, "train.batch_size = {}", t.batch_size)?;
        writeln!(f, "train.seed = {}", t.seed)?;
        writeln!(f, "variant = {}", t.variant)?;
        writeln!(f, "share_encoders = {}", t.share_encoders)?;
        writeln!(f, "pooling.merge = {}", t.pooling.merge)?;
        writeln!(
            f,
            "pooling.concat_sentence_vector = {}",
            t.pooling.concat_sentence_vector
        )?;
        path_line(f, "paths.train_corpus", &self.paths.train_corpus)?;
        path_line(f, "paths.train_gold", &self.paths.train_gold)?;
        path_line(f, "paths.val_corpus", &self.paths.val_corpus)?;
        path_line(f, "paths.val_gold", &self.paths.val_gold)?;
        path_line(f, "paths.test_corpus", &self.paths.test_corpus)?;
        path_line(f, "paths.test_gold", &self.paths.test_gold)?;
        path_line(f, "paths.inventory", &self.paths.inventory)?;
        path_line(f, "paths.vocab", &self.paths.vocab)
    }
}
