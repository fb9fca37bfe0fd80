//! Training loop: cross-entropy over the classifier output, Adam with a
//! 1/epoch learning-rate decay, encoder parameters frozen for the first
//! epochs, and per-epoch validation to pick the returned model. Also the
//! checkpoint container that round-trips every parameter losslessly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{AnnotatedCorpus, GoldKeys, Pos, SenseInventory};
use crate::encoder::{encode, EncoderConfig};
use crate::eval::{self, EvalError};
use crate::model::{
    init_model, is_encoder_param, parse_lemma_param_name, pool_span, sense_vectors, LemmaKey,
    ModelError, PoolingSpec, Variant, WsdModel,
};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError};

/// Probability floor applied before the log in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training corpus has no labeled instances")]
    EmptyTraining,
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, TrainError>;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    /// Encoder parameters receive no updates while epoch <= freeze_epochs.
    pub freeze_epochs: usize,
    /// Classifier dropout rate; the encoders use their own configured rate.
    pub dropout: f64,
    /// Sentences per batch; every instance in a batch sentence contributes
    /// to the loss, so one encoding serves them all.
    pub batch_size: usize,
    pub seed: u64,
    pub variant: Variant,
    pub pooling: PoolingSpec,
    pub share_encoders: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            base_lr: 0.001,
            freeze_epochs: 10,
            dropout: 0.5,
            batch_size: 8,
            seed: 0,
            variant: Variant::Bert,
            pooling: PoolingSpec::default(),
            share_encoders: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.freeze_epochs >= self.epochs {
            return Err(TrainError::Config(format!(
                "freeze_epochs ({}) must be smaller than epochs ({})",
                self.freeze_epochs, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(TrainError::Config(format!(
                "base_lr {} must be positive and finite",
                self.base_lr
            )));
        }
        Ok(())
    }
}

/// Negative log probability of the target sense, floored at [`PROB_FLOOR`]
/// so a zero probability cannot produce an infinite loss.
pub fn cross_entropy<S: Scalar>(
    graph: &mut Graph<S>,
    probs: &Tensor<S>,
    target: usize,
) -> std::result::Result<Tensor<S>, TensorError> {
    let picked = graph.pick(probs, target)?;
    if picked.item().as_f64() < PROB_FLOOR {
        log::warn!(
            "true-sense probability {} clamped at {PROB_FLOOR}",
            picked.item().as_f64()
        );
    }
    let clamped = graph.clamp_min(&picked, S::of_f64(PROB_FLOOR))?;
    let logp = graph.log(&clamped)?;
    graph.scale(&logp, S::of_f64(-1.0))
}

/// Learning rate for a 1-based epoch index: base_lr / epoch.
pub fn lr_schedule(base_lr: f64, epoch: usize) -> f64 {
    assert!(epoch >= 1, "epoch indices are 1-based, got {epoch}");
    base_lr / epoch as f64
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct AdamSlot<S> {
    m: Vec<S>,
    v: Vec<S>,
    step: u64,
}

/// Adam with bias correction. State slots are created lazily on the first
/// update of each parameter, so parameters that never step (for instance
/// encoders during the freeze) carry no stale moments.
pub struct Adam<S: Scalar> {
    slots: HashMap<String, AdamSlot<S>>,
}

impl<S: Scalar> Default for Adam<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Adam<S> {
    pub fn new() -> Self {
        Adam {
            slots: HashMap::new(),
        }
    }

    pub fn has_state(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    /// Apply one update from the parameter's accumulated gradient. Does
    /// nothing when no gradient is present.
    pub fn step(&mut self, name: &str, param: &Tensor<S>, lr: f64) {
        let Some(grad) = param.grad() else { return };
        let slot = self.slots.entry(name.to_owned()).or_insert_with(|| AdamSlot {
            m: vec![S::zero(); grad.len()],
            v: vec![S::zero(); grad.len()],
            step: 0,
        });
        slot.step += 1;
        let b1 = S::of_f64(ADAM_BETA1);
        let b2 = S::of_f64(ADAM_BETA2);
        let one = S::one();
        let m_corr = S::of_f64(1.0 - ADAM_BETA1.powi(slot.step as i32));
        let v_corr = S::of_f64(1.0 - ADAM_BETA2.powi(slot.step as i32));
        let eps = S::of_f64(ADAM_EPS);
        let lr = S::of_f64(lr);
        let mut data = param.data();
        for i in 0..grad.len() {
            let g = grad[i];
            slot.m[i] = b1 * slot.m[i] + (one - b1) * g;
            slot.v[i] = b2 * slot.v[i] + (one - b2) * g * g;
            let mhat = slot.m[i] / m_corr;
            let vhat = slot.v[i] / v_corr;
            data[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        param.set_data(data);
    }
}

/// Per-epoch record kept for the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub val_f1: f64,
}

/// A finished run: the model restored to its best-validation epoch, plus
/// the full trace that justified the choice.
pub struct TrainOutcome<S: Scalar> {
    pub model: WsdModel<S>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub trace: Vec<EpochStats>,
}

struct TargetRef {
    word: usize,
    lemma: String,
    pos: Pos,
    target: usize,
}

fn sentence_groups(
    corpus: &AnnotatedCorpus,
    gold: &GoldKeys,
    inventory: &SenseInventory,
) -> Result<Vec<(usize, Vec<TargetRef>)>> {
    let mut by_sentence: BTreeMap<usize, Vec<TargetRef>> = BTreeMap::new();
    for inst in corpus.instances() {
        let Some(keys) = gold.get(&inst.id) else { continue };
        let target = keys
            .iter()
            .find_map(|k| inventory.rank(&inst.lemma, inst.pos, k))
            .ok_or_else(|| {
                TrainError::Integrity(format!(
                    "no gold key of instance {} is in the inventory entry for {:?} ({})",
                    inst.id, inst.lemma, inst.pos
                ))
            })?;
        by_sentence.entry(inst.sentence).or_default().push(TargetRef {
            word: inst.word,
            lemma: inst.lemma.clone(),
            pos: inst.pos,
            target,
        });
    }
    Ok(by_sentence.into_iter().collect())
}

fn surfaces(corpus: &AnnotatedCorpus, sentence: usize) -> Vec<String> {
    corpus.sentences[sentence]
        .words
        .iter()
        .map(|w| w.surface.clone())
        .collect()
}

// splitmix64, to give each random consumer its own seed
fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9E3779B97F4A7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Train a fresh model and return it restored to the epoch with the best
/// validation F1 (earliest epoch on ties).
#[allow(clippy::too_many_arguments)]
pub fn train<S: Scalar>(
    train_corpus: &AnnotatedCorpus,
    train_gold: &GoldKeys,
    val_corpus: &AnnotatedCorpus,
    val_gold: &GoldKeys,
    inventory: &SenseInventory,
    vocab: &crate::tokenizer::Vocabulary,
    encoder_config: &EncoderConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    train_with_hook(
        train_corpus,
        train_gold,
        val_corpus,
        val_gold,
        inventory,
        vocab,
        encoder_config,
        config,
        |_, _| {},
    )
}

/// [`train`], invoking `hook` after each epoch's validation with the stats
/// and the live model.
#[allow(clippy::too_many_arguments)]
pub fn train_with_hook<S, F>(
    train_corpus: &AnnotatedCorpus,
    train_gold: &GoldKeys,
    val_corpus: &AnnotatedCorpus,
    val_gold: &GoldKeys,
    inventory: &SenseInventory,
    vocab: &crate::tokenizer::Vocabulary,
    encoder_config: &EncoderConfig,
    config: &TrainConfig,
    mut hook: F,
) -> Result<TrainOutcome<S>>
where
    S: Scalar,
    F: FnMut(&EpochStats, &WsdModel<S>),
{
    config.validate()?;
    let groups = sentence_groups(train_corpus, train_gold, inventory)?;
    if groups.is_empty() {
        return Err(TrainError::EmptyTraining);
    }
    let trained: BTreeSet<LemmaKey> = groups
        .iter()
        .flat_map(|(_, ts)| ts.iter().map(|t| (t.lemma.clone(), t.pos)))
        .collect();
    let model = init_model::<S>(
        encoder_config,
        config.pooling,
        config.variant,
        config.share_encoders,
        inventory,
        &trained,
        config.seed,
    )?;
    let named = model.named();
    let mut optimizer = Adam::new();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));

    let mut trace: Vec<EpochStats> = Vec::with_capacity(config.epochs);
    let mut best_epoch = 0usize;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_params: Vec<Vec<S>> = Vec::new();
    let mut skipped_total = 0usize;

    for epoch in 1..=config.epochs {
        let lr = lr_schedule(config.base_lr, epoch);
        let frozen = epoch <= config.freeze_epochs;
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;

        for chunk in order.chunks(config.batch_size) {
            let mut graph: Graph<S> = Graph::new();
            let mut bank: HashMap<LemmaKey, Tensor<S>> = HashMap::new();
            if model.variant == Variant::BertDef {
                let mut keys: BTreeSet<LemmaKey> = BTreeSet::new();
                for &gi in chunk {
                    for t in &groups[gi].1 {
                        keys.insert((t.lemma.clone(), t.pos));
                    }
                }
                for key in keys {
                    let entry = sense_vectors(
                        &mut graph,
                        &model,
                        vocab,
                        inventory,
                        &key.0,
                        key.1,
                        Some(&mut dropout_rng),
                    )?;
                    bank.insert(key, entry);
                }
            }
            let mut losses = Vec::new();
            for &gi in chunk {
                let (sentence, targets) = &groups[gi];
                let words = surfaces(train_corpus, *sentence);
                let tok = vocab.tokenize_sentence(&words, None, model.config.max_positions)?;
                let hidden = encode(
                    &mut graph,
                    &model.encoder,
                    &model.config,
                    &tok.piece_ids,
                    None,
                    Some(&mut dropout_rng),
                )?;
                for t in targets {
                    let Some(span) = tok.span_of(t.word) else {
                        skipped_total += 1;
                        continue;
                    };
                    let f = pool_span(&mut graph, &hidden, span, model.pooling)?;
                    let probs = model.classifier_probs(
                        &mut graph,
                        &f,
                        &t.lemma,
                        t.pos,
                        bank.get(&(t.lemma.clone(), t.pos)),
                        config.dropout,
                        Some(&mut dropout_rng),
                    )?;
                    losses.push(cross_entropy(&mut graph, &probs, t.target)?);
                }
            }
            if losses.is_empty() {
                continue;
            }
            let stacked = graph.concat_vecs(&losses)?;
            let loss = graph.mean_all(&stacked)?;
            loss_sum += loss.item().as_f64() * losses.len() as f64;
            loss_count += losses.len();
            graph.backward(&loss)?;
            for (name, t) in &named {
                if frozen && is_encoder_param(name) {
                    continue;
                }
                optimizer.step(name, t, lr);
            }
            for (_, t) in &named {
                t.zero_grad();
            }
        }

        let val_f1 = validation_f1(&model, vocab, inventory, val_corpus, val_gold)?;
        let stats = EpochStats {
            epoch,
            lr,
            mean_loss: if loss_count == 0 {
                0.0
            } else {
                loss_sum / loss_count as f64
            },
            val_f1,
        };
        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best_epoch = epoch;
            best_params = named.iter().map(|(_, t)| t.data()).collect();
        }
        hook(&stats, &model);
        trace.push(stats);
    }

    if skipped_total > 0 {
        log::debug!("{skipped_total} instances fell outside their sentence window");
    }
    for ((_, t), data) in named.iter().zip(best_params) {
        t.set_data(data);
    }
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val_f1: best_f1,
        trace,
    })
}

/// Micro F1 of the model on a labeled corpus, in evaluation mode.
pub fn validation_f1<S: Scalar>(
    model: &WsdModel<S>,
    vocab: &crate::tokenizer::Vocabulary,
    inventory: &SenseInventory,
    corpus: &AnnotatedCorpus,
    gold: &GoldKeys,
) -> Result<f64> {
    let predictions = eval::predict_all(model, vocab, inventory, corpus, gold)?;
    Ok(eval::score(corpus, &predictions, gold)?.overall.f1())
}

// checkpoint format: magic, version, best epoch, validation F1, canonical
// config text, named parameter records sorted by name, trailing crc32

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PSNS";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a trained model: both config blocks, every
/// named parameter at full 64-bit precision, and the selection metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder_config: EncoderConfig,
    pub train_config: TrainConfig,
    pub best_epoch: u32,
    pub val_f1: f64,
    /// (name, shape, row-major values), sorted by name.
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_model<S: Scalar>(
        model: &WsdModel<S>,
        train_config: &TrainConfig,
        best_epoch: u32,
        val_f1: f64,
    ) -> Self {
        let mut params: Vec<(String, Vec<usize>, Vec<f64>)> = model
            .named()
            .into_iter()
            .map(|(name, t)| {
                let shape = t.shape().to_vec();
                let data = t.data().into_iter().map(|x| x.as_f64()).collect();
                (name, shape, data)
            })
            .collect();
        params.sort_by(|a, b| a.0.cmp(&b.0));
        Checkpoint {
            encoder_config: model.config.clone(),
            train_config: train_config.clone(),
            best_epoch,
            val_f1,
            params,
        }
    }

    /// Rebuild the model. The inventory must be the one used in training:
    /// per-lemma layer shapes are checked against it.
    pub fn build_model<S: Scalar>(&self, inventory: &SenseInventory) -> Result<WsdModel<S>> {
        let trained: BTreeSet<LemmaKey> = self
            .params
            .iter()
            .filter_map(|(name, _, _)| parse_lemma_param_name(name))
            .map(|(lemma, pos, _)| (lemma, pos))
            .collect();
        let model = init_model::<S>(
            &self.encoder_config,
            self.train_config.pooling,
            self.train_config.variant,
            self.train_config.share_encoders,
            inventory,
            &trained,
            self.train_config.seed,
        )?;
        let named: BTreeMap<String, Tensor<S>> = model.named().into_iter().collect();
        if named.len() != self.params.len() {
            return Err(TrainError::Integrity(format!(
                "checkpoint has {} parameters, model wants {}",
                self.params.len(),
                named.len()
            )));
        }
        for (name, shape, data) in &self.params {
            let tensor = named.get(name).ok_or_else(|| {
                TrainError::Integrity(format!("checkpoint parameter {name:?} has no slot"))
            })?;
            if tensor.shape() != shape.as_slice() {
                return Err(TrainError::Integrity(format!(
                    "parameter {name:?} has shape {:?} in the checkpoint but {:?} in the model",
                    shape,
                    tensor.shape()
                )));
            }
            tensor.set_data(data.iter().map(|&v| S::of_f64(v)).collect());
        }
        Ok(model)
    }

    fn config_text(&self) -> String {
        let e = &self.encoder_config;
        let t = &self.train_config;
        let mut lines = vec![
            format!("encoder.dropout_rate={:?}", e.dropout_rate),
            format!("encoder.ffn={}", e.ffn),
            format!("encoder.hidden={}", e.hidden),
            format!("encoder.max_positions={}", e.max_positions),
            format!("encoder.num_heads={}", e.num_heads),
            format!("encoder.num_layers={}", e.num_layers),
            format!("encoder.vocab_size={}", e.vocab_size),
            format!("pooling.concat_sentence_vector={}", t.pooling.concat_sentence_vector),
            format!("pooling.merge={}", t.pooling.merge),
            format!("share_encoders={}", t.share_encoders),
            format!("train.base_lr={:?}", t.base_lr),
            format!("train.batch_size={}", t.batch_size),
            format!("train.dropout={:?}", t.dropout),
            format!("train.epochs={}", t.epochs),
            format!("train.freeze_epochs={}", t.freeze_epochs),
            format!("train.seed={}", t.seed),
            format!("variant={}", t.variant),
        ];
        lines.sort();
        lines.join("\n")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.best_epoch.to_le_bytes());
        buf.extend_from_slice(&self.val_f1.to_le_bytes());
        let config = self.config_text();
        buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
        buf.extend_from_slice(config.as_bytes());
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, shape, data) in &self.params {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &dim in shape {
                buf.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for &value in data {
                buf.extend_from_slice(&value.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 4 {
            return Err("file too short for a checksum".into());
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
        if crc32fast::hash(body) != stored {
            return Err("checksum mismatch; the file is corrupted or truncated".into());
        }
        let mut reader = ByteReader { body, at: 0 };
        if reader.take(4)? != CHECKPOINT_MAGIC {
            return Err("not a checkpoint file (bad magic)".into());
        }
        let version = reader.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!(
                "format version {version} is not the supported {CHECKPOINT_VERSION}"
            ));
        }
        let best_epoch = reader.u32()?;
        let val_f1 = f64::from_le_bytes(reader.take(8)?.try_into().expect("eight bytes"));
        let config_len = reader.u32()? as usize;
        let config_text = std::str::from_utf8(reader.take(config_len)?)
            .map_err(|_| "config text is not utf-8".to_owned())?;
        let (encoder_config, train_config) = parse_config_text(config_text)?;
        let param_count = reader.u32()? as usize;
        let mut params = Vec::with_capacity(param_count);
        for _ in 0..param_count {
            let name_len = reader.u32()? as usize;
            let name = std::str::from_utf8(reader.take(name_len)?)
                .map_err(|_| "parameter name is not utf-8".to_owned())?
                .to_owned();
            let rank = reader.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(
                    u64::from_le_bytes(reader.take(8)?.try_into().expect("eight bytes")) as usize,
                );
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f64::from_le_bytes(
                    reader.take(8)?.try_into().expect("eight bytes"),
                ));
            }
            params.push((name, shape, data));
        }
        if reader.at != body.len() {
            return Err(format!(
                "{} unexpected trailing bytes",
                body.len() - reader.at
            ));
        }
        params.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Checkpoint {
            encoder_config,
            train_config,
            best_epoch,
            val_f1,
            params,
        })
    }

    /// Write atomically: the bytes land under a temporary name and are
    /// renamed into place, so readers never see a partial file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_file_name(format!(
            "{}.tmp",
            path.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "checkpoint".to_owned())
        ));
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Checkpoint::from_bytes(&bytes).map_err(|msg| TrainError::Checkpoint {
            path: path.display().to_string(),
            msg,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    checkpoint.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

struct ByteReader<'a> {
    body: &'a [u8],
    at: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.at + n > self.body.len() {
            return Err("unexpected end of file".into());
        }
        let out = &self.body[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

fn parse_config_text(text: &str) -> std::result::Result<(EncoderConfig, TrainConfig), String> {
    let mut map: BTreeMap<&str, &str> = BTreeMap::new();
    for line in text.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {line:?} is not key=value"))?;
        if map.insert(key, value).is_some() {
            return Err(format!("duplicate config key {key:?}"));
        }
    }
    fn take<'a>(
        map: &mut BTreeMap<&str, &'a str>,
        key: &str,
    ) -> std::result::Result<&'a str, String> {
        map.remove(key).ok_or_else(|| format!("missing config key {key:?}"))
    }
    fn parsed<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
        value
            .parse()
            .map_err(|_| format!("config key {key:?} has unreadable value {value:?}"))
    }
    macro_rules! field {
        ($key:literal, $ty:ty) => {{
            let raw = take(&mut map, $key)?;
            parsed::<$ty>($key, raw)?
        }};
    }
    let encoder_config = EncoderConfig {
        dropout_rate: field!("encoder.dropout_rate", f64),
        ffn: field!("encoder.ffn", usize),
        hidden: field!("encoder.hidden", usize),
        max_positions: field!("encoder.max_positions", usize),
        num_heads: field!("encoder.num_heads", usize),
        num_layers: field!("encoder.num_layers", usize),
        vocab_size: field!("encoder.vocab_size", usize),
    };
    let pooling = PoolingSpec {
        concat_sentence_vector: field!("pooling.concat_sentence_vector", bool),
        merge: field!("pooling.merge", crate::model::Merge),
    };
    let train_config = TrainConfig {
        pooling,
        share_encoders: field!("share_encoders", bool),
        base_lr: field!("train.base_lr", f64),
        batch_size: field!("train.batch_size", usize),
        dropout: field!("train.dropout", f64),
        epochs: field!("train.epochs", usize),
        freeze_epochs: field!("train.freeze_epochs", usize),
        seed: field!("train.seed", u64),
        variant: field!("variant", Variant),
    };
    if let Some((key, _)) = map.into_iter().next() {
        return Err(format!("unknown config key {key:?}"));
    }
    Ok((encoder_config, train_config))
}
