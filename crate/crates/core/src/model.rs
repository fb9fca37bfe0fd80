//! Sense classification on top of the encoder: span pooling turns a word's
//! hidden states into one feature vector, then either a per-lemma softmax
//! head or a definition-conditioned head scores the candidate senses.
//!
//! The definition head replaces the per-lemma output matrix with sense
//! vectors: each candidate sense's gloss is encoded (by a second encoder
//! unless `share_encoders` is set) and its non-special hidden states are
//! averaged into one row. Because those rows exist for every inventory
//! entry, the definition variant can score lemmas never seen in training.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use thiserror::Error;

use crate::data::{Pos, SenseInventory};
use crate::encoder::{
    encode, gauss, init_params_from, maybe_dropout, EncoderConfig, EncoderParams,
};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError};
use crate::tokenizer::{Span, TokenizerError, Vocabulary};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no trained head for lemma {lemma:?} ({pos}); caller should back off")]
    UnseenLemma { lemma: String, pos: Pos },
    #[error("lemma {lemma:?} ({pos}) is not in the sense inventory")]
    UnknownLemma { lemma: String, pos: Pos },
    #[error("no sense vectors supplied for lemma {lemma:?} ({pos})")]
    MissingSenseVectors { lemma: String, pos: Pos },
    #[error("span [{start}, {start}+{len}) is outside the {rows} hidden rows")]
    SpanOutOfRange {
        start: usize,
        len: usize,
        rows: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

type Result<T> = std::result::Result<T, ModelError>;

/// How the hidden states of a multi-piece word collapse to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Merge {
    Mean,
    Max,
}

impl Merge {
    pub fn as_str(self) -> &'static str {
        match self {
            Merge::Mean => "mean",
            Merge::Max => "max",
        }
    }
}

impl fmt::Display for Merge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Merge {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(Merge::Mean),
            "max" => Ok(Merge::Max),
            other => Err(format!("unknown merge {other:?} (expected mean or max)")),
        }
    }
}

/// Feature assembly for the classifier: merge operation over the span,
/// optionally concatenated with the sentence vector (the final hidden
/// state at position 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolingSpec {
    pub merge: Merge,
    pub concat_sentence_vector: bool,
}

impl Default for PoolingSpec {
    fn default() -> Self {
        PoolingSpec {
            merge: Merge::Mean,
            concat_sentence_vector: false,
        }
    }
}

impl PoolingSpec {
    /// The four combinations, in report order.
    pub fn grid() -> [PoolingSpec; 4] {
        [
            PoolingSpec { merge: Merge::Mean, concat_sentence_vector: false },
            PoolingSpec { merge: Merge::Max, concat_sentence_vector: false },
            PoolingSpec { merge: Merge::Mean, concat_sentence_vector: true },
            PoolingSpec { merge: Merge::Max, concat_sentence_vector: true },
        ]
    }

    pub fn label(self) -> &'static str {
        match (self.merge, self.concat_sentence_vector) {
            (Merge::Mean, false) => "Mean",
            (Merge::Max, false) => "Max",
            (Merge::Mean, true) => "Mean_Concat",
            (Merge::Max, true) => "Max_Concat",
        }
    }

    /// Width of the pooled feature for a given encoder hidden size.
    pub fn feature_width(self, hidden: usize) -> usize {
        if self.concat_sentence_vector {
            2 * hidden
        } else {
            hidden
        }
    }
}

/// Which classifier sits on top of the pooled feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Per-lemma output layers; unseen lemmas need a backoff.
    Bert,
    /// Sense vectors built from glosses; covers every inventory entry.
    BertDef,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Bert => "bert",
            Variant::BertDef => "bert_def",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bert" => Ok(Variant::Bert),
            "bert_def" => Ok(Variant::BertDef),
            other => Err(format!(
                "unknown variant {other:?} (expected bert or bert_def)"
            )),
        }
    }
}

/// First classifier layer, shared across all lemmas: g = relu(W1 f + b1).
#[derive(Debug)]
pub struct SharedHead<S: Scalar> {
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
}

/// Per-lemma output layer: logits = W2 g + b2, one row per sense.
#[derive(Debug)]
pub struct LemmaHead<S: Scalar> {
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
}

pub type LemmaKey = (String, Pos);

/// Pool the hidden states of one word's span into a single feature vector.
/// Returns `[H]`, or `[2H]` when the sentence vector is concatenated.
pub fn pool_span<S: Scalar>(
    graph: &mut Graph<S>,
    hidden: &Tensor<S>,
    span: Span,
    spec: PoolingSpec,
) -> Result<Tensor<S>> {
    let (rows, _) = hidden.dims2("pool_span")?;
    if span.len == 0 || span.start + span.len > rows {
        return Err(ModelError::SpanOutOfRange {
            start: span.start,
            len: span.len,
            rows,
        });
    }
    let ids: Vec<usize> = (span.start..span.start + span.len).collect();
    let picked = graph.gather_rows(hidden, &ids)?;
    let merged = match spec.merge {
        Merge::Mean => graph.mean_rows(&picked)?,
        Merge::Max => graph.max_rows(&picked)?,
    };
    if spec.concat_sentence_vector {
        let sentence = graph.row(hidden, 0)?;
        Ok(graph.concat_vecs(&[merged, sentence])?)
    } else {
        Ok(merged)
    }
}

/// Two-layer softmax classifier with a per-lemma output layer. Dropout is
/// applied before each linear layer, only when an rng is passed.
pub fn mlp_head_forward<S: Scalar>(
    graph: &mut Graph<S>,
    f: &Tensor<S>,
    shared: &SharedHead<S>,
    head: &LemmaHead<S>,
    dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<S>> {
    let fd = maybe_dropout(graph, f, dropout, &mut rng)?;
    let a = graph.matvec(&shared.w1, &fd)?;
    let a = graph.add(&a, &shared.b1)?;
    let g = graph.relu(&a)?;
    let gd = maybe_dropout(graph, &g, dropout, &mut rng)?;
    let z = graph.matvec(&head.w2, &gd)?;
    let z = graph.add(&z, &head.b2)?;
    Ok(graph.softmax(&z)?)
}

/// Definition-conditioned classifier: the output layer is the sense-vector
/// matrix, so logits are dot products against gloss encodings, scaled by
/// 1/sqrt(H). No output bias.
pub fn def_head_forward<S: Scalar>(
    graph: &mut Graph<S>,
    f: &Tensor<S>,
    shared: &SharedHead<S>,
    sense_vectors: &Tensor<S>,
    dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<S>> {
    let fd = maybe_dropout(graph, f, dropout, &mut rng)?;
    let a = graph.matvec(&shared.w1, &fd)?;
    let a = graph.add(&a, &shared.b1)?;
    let g = graph.relu(&a)?;
    let gd = maybe_dropout(graph, &g, dropout, &mut rng)?;
    let z = graph.matvec(sense_vectors, &gd)?;
    let hidden = shared.b1.numel();
    let z = graph.scale(&z, S::of_f64(1.0 / (hidden as f64).sqrt()))?;
    Ok(graph.softmax(&z)?)
}

/// The complete disambiguation model: a context encoder, the classifier,
/// and (for the definition variant) a gloss encoder.
#[derive(Debug)]
pub struct WsdModel<S: Scalar> {
    pub config: EncoderConfig,
    pub pooling: PoolingSpec,
    pub variant: Variant,
    /// When set, glosses run through the context encoder instead of a
    /// separate parameter set.
    pub share_encoders: bool,
    pub encoder: EncoderParams<S>,
    pub def_encoder: Option<EncoderParams<S>>,
    pub shared: SharedHead<S>,
    pub lemma_heads: BTreeMap<LemmaKey, LemmaHead<S>>,
}

/// Fresh model parameters, deterministic in the seed. For the per-lemma
/// variant, `trained` lists the (lemma, pos) pairs that get output layers;
/// each must be present in the inventory (its sense count sets the layer
/// width). The definition variant ignores `trained`.
pub fn init_model<S: Scalar>(
    config: &EncoderConfig,
    pooling: PoolingSpec,
    variant: Variant,
    share_encoders: bool,
    inventory: &SenseInventory,
    trained: &BTreeSet<LemmaKey>,
    seed: u64,
) -> Result<WsdModel<S>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.02).expect("valid standard deviation");
    let encoder = init_params_from(config, &mut rng)?;
    let def_encoder = match (variant, share_encoders) {
        (Variant::BertDef, false) => Some(init_params_from(config, &mut rng)?),
        _ => None,
    };
    let h = config.hidden;
    let shared = SharedHead {
        w1: gauss(vec![h, pooling.feature_width(h)], &mut rng, &normal),
        b1: Tensor::zeros(vec![h], true),
    };
    let mut lemma_heads = BTreeMap::new();
    if variant == Variant::Bert {
        for key in trained {
            let senses =
                inventory
                    .senses(&key.0, key.1)
                    .ok_or_else(|| ModelError::UnknownLemma {
                        lemma: key.0.clone(),
                        pos: key.1,
                    })?;
            let head = LemmaHead {
                w2: gauss(vec![senses.len(), h], &mut rng, &normal),
                b2: Tensor::zeros(vec![senses.len()], true),
            };
            lemma_heads.insert(key.clone(), head);
        }
    }
    Ok(WsdModel {
        config: config.clone(),
        pooling,
        variant,
        share_encoders,
        encoder,
        def_encoder,
        shared,
        lemma_heads,
    })
}

/// Name for a lemma head parameter. Tab-separated because lemmas may
/// contain dots or spaces; tabs cannot survive the inventory format.
pub fn lemma_param_name(lemma: &str, pos: Pos, field: &str) -> String {
    format!("lemma_head\t{lemma}\t{pos}\t{field}")
}

/// Inverse of [`lemma_param_name`]; `None` for other parameter names.
pub fn parse_lemma_param_name(name: &str) -> Option<(String, Pos, String)> {
    let mut parts = name.split('\t');
    if parts.next()? != "lemma_head" {
        return None;
    }
    let lemma = parts.next()?.to_owned();
    let pos = parts.next()?.parse().ok()?;
    let field = parts.next()?.to_owned();
    if parts.next().is_some() {
        return None;
    }
    Some((lemma, pos, field))
}

/// Whether a named parameter belongs to an encoder (and so obeys the
/// training-time freeze) rather than to the classifier.
pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("encoder.") || name.starts_with("def_encoder.")
}

impl<S: Scalar> WsdModel<S> {
    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    /// Parameters used to encode glosses.
    pub fn def_params(&self) -> &EncoderParams<S> {
        self.def_encoder.as_ref().unwrap_or(&self.encoder)
    }

    /// Every parameter with a stable name. The returned tensors alias the
    /// model's storage, so writes through them update the model.
    pub fn named(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        for (name, t) in self.encoder.named() {
            out.push((format!("encoder.{name}"), t));
        }
        if let Some(def) = &self.def_encoder {
            for (name, t) in def.named() {
                out.push((format!("def_encoder.{name}"), t));
            }
        }
        out.push(("head.w1".to_owned(), self.shared.w1.clone()));
        out.push(("head.b1".to_owned(), self.shared.b1.clone()));
        for ((lemma, pos), head) in &self.lemma_heads {
            out.push((lemma_param_name(lemma, *pos, "w2"), head.w2.clone()));
            out.push((lemma_param_name(lemma, *pos, "b2"), head.b2.clone()));
        }
        out
    }

    /// Probability vector over the lemma's senses, dispatching on the
    /// variant. The definition variant needs the lemma's sense-vector
    /// matrix; the per-lemma variant errors on lemmas without a head.
    #[allow(clippy::too_many_arguments)]
    pub fn classifier_probs(
        &self,
        graph: &mut Graph<S>,
        f: &Tensor<S>,
        lemma: &str,
        pos: Pos,
        sense_vectors: Option<&Tensor<S>>,
        dropout: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor<S>> {
        match self.variant {
            Variant::Bert => {
                let head = self
                    .lemma_heads
                    .get(&(lemma.to_owned(), pos))
                    .ok_or_else(|| ModelError::UnseenLemma {
                        lemma: lemma.to_owned(),
                        pos,
                    })?;
                mlp_head_forward(graph, f, &self.shared, head, dropout, rng)
            }
            Variant::BertDef => {
                let bank = sense_vectors.ok_or_else(|| ModelError::MissingSenseVectors {
                    lemma: lemma.to_owned(),
                    pos,
                })?;
                def_head_forward(graph, f, &self.shared, bank, dropout, rng)
            }
        }
    }

    /// Disambiguate one word. Convenience wrapper that builds the needed
    /// sense vectors on the fly; batch callers should use [`Predictor`].
    pub fn predict(
        &self,
        vocab: &Vocabulary,
        inventory: &SenseInventory,
        words: &[String],
        focus: usize,
        lemma: &str,
        pos: Pos,
    ) -> Result<Prediction> {
        let entry = match self.variant {
            Variant::BertDef => {
                let mut graph = Graph::new();
                Some(sense_vectors(
                    &mut graph, self, vocab, inventory, lemma, pos, None,
                )?)
            }
            Variant::Bert => None,
        };
        predict_with_bank(self, vocab, inventory, entry.as_ref(), words, focus, lemma, pos)
    }
}

/// Sense-vector matrix for one inventory entry: each gloss is encoded and
/// its hidden states, special positions excluded, are averaged into one
/// row. Rows follow inventory order. Gradients flow back into the gloss
/// encoder when the result feeds a loss.
pub fn sense_vectors<S: Scalar>(
    graph: &mut Graph<S>,
    model: &WsdModel<S>,
    vocab: &Vocabulary,
    inventory: &SenseInventory,
    lemma: &str,
    pos: Pos,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<S>> {
    let senses = inventory
        .senses(lemma, pos)
        .ok_or_else(|| ModelError::UnknownLemma {
            lemma: lemma.to_owned(),
            pos,
        })?;
    let params = model.def_params();
    let mut rows = Vec::with_capacity(senses.len());
    for sense in senses {
        let words: Vec<String> = sense.gloss.split_whitespace().map(str::to_owned).collect();
        let tok = vocab.tokenize_sentence(&words, None, model.config.max_positions)?;
        let hidden = encode(
            graph,
            params,
            &model.config,
            &tok.piece_ids,
            None,
            rng.as_deref_mut(),
        )?;
        let inner: Vec<usize> = (1..tok.piece_ids.len() - 1).collect();
        let content = graph.gather_rows(&hidden, &inner)?;
        rows.push(graph.mean_rows(&content)?);
    }
    Ok(graph.stack_rows(&rows)?)
}

/// One resolved disambiguation: the chosen sense key, its inventory index,
/// the probability of each inventory sense, and whether the answer came
/// from first-sense backoff rather than the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub key: String,
    pub sense_index: usize,
    pub probs: Vec<f64>,
    pub backoff: bool,
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn predict_with_bank<S: Scalar>(
    model: &WsdModel<S>,
    vocab: &Vocabulary,
    inventory: &SenseInventory,
    bank_entry: Option<&Tensor<S>>,
    words: &[String],
    focus: usize,
    lemma: &str,
    pos: Pos,
) -> Result<Prediction> {
    let senses = inventory
        .senses(lemma, pos)
        .ok_or_else(|| ModelError::UnknownLemma {
            lemma: lemma.to_owned(),
            pos,
        })?;
    if model.variant == Variant::Bert
        && !model.lemma_heads.contains_key(&(lemma.to_owned(), pos))
    {
        // no trained head: first inventory sense, honest uniform distribution
        let n = senses.len();
        return Ok(Prediction {
            key: senses[0].key.clone(),
            sense_index: 0,
            probs: vec![1.0 / n as f64; n],
            backoff: true,
        });
    }
    let mut graph = Graph::new();
    let tok = vocab.tokenize_sentence(words, Some(focus), model.config.max_positions)?;
    let hidden = encode(
        &mut graph,
        &model.encoder,
        &model.config,
        &tok.piece_ids,
        None,
        None,
    )?;
    let span = tok
        .span_of(focus)
        .expect("focused word is inside the window");
    let f = pool_span(&mut graph, &hidden, span, model.pooling)?;
    let probs_t = model.classifier_probs(&mut graph, &f, lemma, pos, bank_entry, 0.0, None)?;
    let probs: Vec<f64> = probs_t.data().into_iter().map(|x| x.as_f64()).collect();
    let sense_index = argmax_lowest(&probs);
    Ok(Prediction {
        key: senses[sense_index].key.clone(),
        sense_index,
        probs,
        backoff: false,
    })
}

/// Inference helper that fixes the model in evaluation mode and, for the
/// definition variant, computes the sense vectors of every inventory entry
/// once up front. Build one per evaluation pass so the bank reflects the
/// current parameters.
pub struct Predictor<'a, S: Scalar> {
    model: &'a WsdModel<S>,
    vocab: &'a Vocabulary,
    inventory: &'a SenseInventory,
    bank: HashMap<LemmaKey, Tensor<S>>,
}

impl<'a, S: Scalar> Predictor<'a, S> {
    pub fn new(
        model: &'a WsdModel<S>,
        vocab: &'a Vocabulary,
        inventory: &'a SenseInventory,
    ) -> Result<Self> {
        let mut bank = HashMap::new();
        if model.variant == Variant::BertDef {
            for (lemma, pos, _) in inventory.entries() {
                let mut graph = Graph::new();
                let entry = sense_vectors(&mut graph, model, vocab, inventory, lemma, pos, None)?;
                bank.insert((lemma.to_owned(), pos), entry);
            }
        }
        Ok(Predictor {
            model,
            vocab,
            inventory,
            bank,
        })
    }

    pub fn predict(
        &self,
        words: &[String],
        focus: usize,
        lemma: &str,
        pos: Pos,
    ) -> Result<Prediction> {
        let entry = self.bank.get(&(lemma.to_owned(), pos));
        predict_with_bank(
            self.model,
            self.vocab,
            self.inventory,
            entry,
            words,
            focus,
            lemma,
            pos,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_inventory;
    use crate::gradcheck;

    fn char_vocab() -> Vocabulary {
        let mut lines = vec![
            "[PAD]".to_owned(),
            "[UNK]".to_owned(),
            "[CLS]".to_owned(),
            "[SEP]".to_owned(),
        ];
        for c in 'a'..='z' {
            lines.push(c.to_string());
            lines.push(format!("##{c}"));
        }
        Vocabulary::from_lines(lines).unwrap()
    }

    fn tiny_inventory() -> SenseInventory {
        parse_inventory(concat!(
            "bank\tNOUN\tbank%1\tmoney office desk\n",
            "bank\tNOUN\tbank%2\triver side mud\n",
            "bank\tNOUN\tbank%3\trow of machines\n",
            "rock\tNOUN\trock%1\thard stone\n",
        ))
        .unwrap()
    }

    fn tiny_config(vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            num_layers: 1,
            hidden: 8,
            num_heads: 2,
            ffn: 16,
            vocab_size,
            max_positions: 48,
            dropout_rate: 0.1,
        }
    }

    fn fixture(variant: Variant, pooling: PoolingSpec) -> (WsdModel<f64>, Vocabulary, SenseInventory) {
        let vocab = char_vocab();
        let inventory = tiny_inventory();
        let config = tiny_config(vocab.len());
        let trained: BTreeSet<LemmaKey> = [("bank".to_owned(), Pos::Noun)].into();
        let model = init_model(&config, pooling, variant, false, &inventory, &trained, 7).unwrap();
        (model, vocab, inventory)
    }

    fn sentence(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn every_pooling_spec_builds_and_normalizes() {
        for (variant, spec) in [Variant::Bert, Variant::BertDef]
            .into_iter()
            .flat_map(|v| PoolingSpec::grid().into_iter().map(move |s| (v, s)))
        {
            let (model, vocab, inventory) = fixture(variant, spec);
            let words = sentence(&["the", "bank", "is", "closed"]);
            let mut graph: Graph<f64> = Graph::new();
            let tok = vocab.tokenize_sentence(&words, Some(1), 48).unwrap();
            let hidden =
                encode(&mut graph, &model.encoder, &model.config, &tok.piece_ids, None, None)
                    .unwrap();
            let f = pool_span(&mut graph, &hidden, tok.span_of(1).unwrap(), spec).unwrap();
            assert_eq!(f.shape(), &[spec.feature_width(8)]);
            let bank = match variant {
                Variant::BertDef => Some(
                    sense_vectors(&mut graph, &model, &vocab, &inventory, "bank", Pos::Noun, None)
                        .unwrap(),
                ),
                Variant::Bert => None,
            };
            let probs = model
                .classifier_probs(&mut graph, &f, "bank", Pos::Noun, bank.as_ref(), 0.0, None)
                .unwrap();
            assert_eq!(probs.shape(), &[3], "{variant} {}", spec.label());
            let sum: f64 = probs.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_piece_span_pools_identically_under_mean_and_max() {
        let hidden =
            Tensor::<f64>::matrix_from_f64s(3, 2, &[1.0, -2.0, 0.5, 4.0, 0.25, -1.0], false)
                .unwrap();
        let span = Span { start: 1, len: 1 };
        let mut graph: Graph<f64> = Graph::new();
        let mean = pool_span(
            &mut graph,
            &hidden,
            span,
            PoolingSpec { merge: Merge::Mean, concat_sentence_vector: false },
        )
        .unwrap();
        let max = pool_span(
            &mut graph,
            &hidden,
            span,
            PoolingSpec { merge: Merge::Max, concat_sentence_vector: false },
        )
        .unwrap();
        assert_eq!(mean.data(), max.data());
        assert_eq!(mean.data(), vec![0.5, 4.0]);
    }

    #[test]
    fn pooling_ignores_span_order() {
        let forward = Tensor::<f64>::matrix_from_f64s(
            5,
            2,
            &[9.0, 9.0, 1.0, -2.0, 3.0, 0.5, -4.0, 6.0, 8.0, 8.0],
            false,
        )
        .unwrap();
        let reversed = Tensor::<f64>::matrix_from_f64s(
            5,
            2,
            &[9.0, 9.0, -4.0, 6.0, 3.0, 0.5, 1.0, -2.0, 8.0, 8.0],
            false,
        )
        .unwrap();
        let span = Span { start: 1, len: 3 };
        for merge in [Merge::Mean, Merge::Max] {
            let spec = PoolingSpec { merge, concat_sentence_vector: false };
            let mut graph: Graph<f64> = Graph::new();
            let a = pool_span(&mut graph, &forward, span, spec).unwrap().data();
            let b = pool_span(&mut graph, &reversed, span, spec).unwrap().data();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12, "{merge}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn span_outside_hidden_rows_is_rejected() {
        let hidden = Tensor::<f64>::matrix_from_f64s(3, 2, &[0.0; 6], false).unwrap();
        let mut graph: Graph<f64> = Graph::new();
        let res = pool_span(
            &mut graph,
            &hidden,
            Span { start: 2, len: 2 },
            PoolingSpec::default(),
        );
        assert!(matches!(res, Err(ModelError::SpanOutOfRange { .. })));
    }

    #[test]
    fn monosemous_lemma_gets_probability_one() {
        for variant in [Variant::Bert, Variant::BertDef] {
            let vocab = char_vocab();
            let inventory = tiny_inventory();
            let config = tiny_config(vocab.len());
            let trained: BTreeSet<LemmaKey> = [("rock".to_owned(), Pos::Noun)].into();
            let model: WsdModel<f64> = init_model(
                &config,
                PoolingSpec::default(),
                variant,
                false,
                &inventory,
                &trained,
                3,
            )
            .unwrap();
            let words = sentence(&["a", "rock", "fell"]);
            let p = model
                .predict(&vocab, &inventory, &words, 1, "rock", Pos::Noun)
                .unwrap();
            assert_eq!(p.key, "rock%1");
            assert_eq!(p.probs, vec![1.0]);
            assert!(!p.backoff);
        }
    }

    #[test]
    fn zero_classifier_weights_give_uniform_probabilities() {
        let (model, vocab, inventory) = fixture(Variant::Bert, PoolingSpec::default());
        let head = &model.lemma_heads[&("bank".to_owned(), Pos::Noun)];
        for t in [&model.shared.w1, &model.shared.b1, &head.w2, &head.b2] {
            t.set_data(vec![0.0; t.numel()]);
        }
        let words = sentence(&["the", "bank", "is", "closed"]);
        let p = model
            .predict(&vocab, &inventory, &words, 1, "bank", Pos::Noun)
            .unwrap();
        assert_eq!(p.probs[0], p.probs[1]);
        assert_eq!(p.probs[1], p.probs[2]);
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p.sense_index, 0, "uniform scores tie-break to the lowest index");
    }

    #[test]
    fn def_logits_match_hand_computation() {
        // small fixed numbers, oracle computed with plain loops
        let h = 3usize;
        let f_data = [0.4, -0.7, 1.2];
        let w1_data = [
            0.1, -0.2, 0.3, //
            0.0, 0.5, -0.1, //
            -0.3, 0.2, 0.6,
        ];
        let b1_data = [0.05, -0.02, 0.1];
        let bank_data = [
            1.0, 0.0, -1.0, //
            0.5, 0.5, 0.5,
        ];
        let shared = SharedHead {
            w1: Tensor::<f64>::matrix_from_f64s(h, h, &w1_data, true).unwrap(),
            b1: Tensor::<f64>::from_f64s(&b1_data, true),
        };
        let bank = Tensor::<f64>::matrix_from_f64s(2, h, &bank_data, true).unwrap();
        let f = Tensor::<f64>::from_f64s(&f_data, true);

        let mut g_oracle = [0.0f64; 3];
        for i in 0..h {
            let mut acc = b1_data[i];
            for j in 0..h {
                acc += w1_data[i * h + j] * f_data[j];
            }
            g_oracle[i] = acc.max(0.0);
        }
        let mut logits = [0.0f64; 2];
        for (k, logit) in logits.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..h {
                acc += bank_data[k * h + i] * g_oracle[i];
            }
            *logit = acc / (h as f64).sqrt();
        }
        let m = logits[0].max(logits[1]);
        let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
        let total: f64 = e.iter().sum();
        let expected: Vec<f64> = e.iter().map(|x| x / total).collect();

        let mut graph: Graph<f64> = Graph::new();
        let probs = def_head_forward(&mut graph, &f, &shared, &bank, 0.0, None)
            .unwrap()
            .data();
        for (a, b) in probs.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn scaling_sense_vectors_keeps_the_argmax() {
        let (model, vocab, inventory) = fixture(Variant::BertDef, PoolingSpec::default());
        let words = sentence(&["the", "bank", "is", "closed"]);
        let before = model
            .predict(&vocab, &inventory, &words, 1, "bank", Pos::Noun)
            .unwrap();
        let w1 = &model.shared.w1;
        w1.set_data(w1.data().into_iter().map(|x| x * 3.0).collect());
        let after = model
            .predict(&vocab, &inventory, &words, 1, "bank", Pos::Noun)
            .unwrap();
        assert_eq!(before.sense_index, after.sense_index);
    }

    #[test]
    fn equal_sense_vectors_tie_to_the_lowest_index() {
        let h = 4usize;
        let shared = SharedHead {
            w1: Tensor::<f64>::matrix_from_f64s(h, h, &vec![0.3; h * h], true).unwrap(),
            b1: Tensor::<f64>::from_f64s(&vec![0.1; h], true),
        };
        let row = [0.2, -0.4, 0.6, 0.8];
        let mut bank_data = Vec::new();
        bank_data.extend_from_slice(&row);
        bank_data.extend_from_slice(&row);
        bank_data.extend_from_slice(&[9.0, -9.0, 0.0, 0.0]);
        let bank = Tensor::<f64>::matrix_from_f64s(3, h, &bank_data, false).unwrap();
        let f = Tensor::<f64>::from_f64s(&[1.0, 2.0, 3.0, 4.0], false);
        let mut graph: Graph<f64> = Graph::new();
        let probs = def_head_forward(&mut graph, &f, &shared, &bank, 0.0, None)
            .unwrap()
            .data();
        assert_eq!(probs[0], probs[1]);
        if probs[0] >= probs[2] {
            assert_eq!(argmax_lowest(&probs), 0);
        }
    }

    #[test]
    fn missing_head_is_an_unseen_lemma_error() {
        let (model, vocab, _) = fixture(Variant::Bert, PoolingSpec::default());
        let words = sentence(&["rock", "on"]);
        let tok = vocab.tokenize_sentence(&words, Some(0), 48).unwrap();
        let mut graph: Graph<f64> = Graph::new();
        let hidden =
            encode(&mut graph, &model.encoder, &model.config, &tok.piece_ids, None, None).unwrap();
        let f = pool_span(&mut graph, &hidden, tok.span_of(0).unwrap(), model.pooling).unwrap();
        let res = model.classifier_probs(&mut graph, &f, "rock", Pos::Noun, None, 0.0, None);
        assert!(matches!(res, Err(ModelError::UnseenLemma { .. })));
    }

    #[test]
    fn predict_backs_off_to_the_first_inventory_sense() {
        let vocab = char_vocab();
        let inventory = tiny_inventory();
        let config = tiny_config(vocab.len());
        // trained on "rock" only, so "bank" has no head
        let trained: BTreeSet<LemmaKey> = [("rock".to_owned(), Pos::Noun)].into();
        let model: WsdModel<f64> = init_model(
            &config,
            PoolingSpec::default(),
            Variant::Bert,
            false,
            &inventory,
            &trained,
            3,
        )
        .unwrap();
        let words = sentence(&["the", "bank", "is", "closed"]);
        let p = model
            .predict(&vocab, &inventory, &words, 1, "bank", Pos::Noun)
            .unwrap();
        assert!(p.backoff);
        assert_eq!(p.key, "bank%1");
        assert_eq!(p.sense_index, 0);
        assert_eq!(p.probs, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn absent_lemma_is_an_unknown_lemma_error() {
        for variant in [Variant::Bert, Variant::BertDef] {
            let (model, vocab, inventory) = fixture(variant, PoolingSpec::default());
            let words = sentence(&["the", "fish", "swims"]);
            let res = model.predict(&vocab, &inventory, &words, 1, "fish", Pos::Noun);
            assert!(matches!(res, Err(ModelError::UnknownLemma { .. })), "{variant}");
        }
    }

    #[test]
    fn sense_vector_rows_average_gloss_states_in_inventory_order() {
        let (model, vocab, inventory) = fixture(Variant::BertDef, PoolingSpec::default());
        let mut graph: Graph<f64> = Graph::new();
        let bank = sense_vectors(&mut graph, &model, &vocab, &inventory, "bank", Pos::Noun, None)
            .unwrap();
        assert_eq!(bank.shape(), &[3, 8]);
        let bank_data = bank.data();
        let senses = inventory.senses("bank", Pos::Noun).unwrap();
        for (row, sense) in senses.iter().enumerate() {
            let words: Vec<String> =
                sense.gloss.split_whitespace().map(str::to_owned).collect();
            let tok = vocab.tokenize_sentence(&words, None, 48).unwrap();
            let hidden = encode(
                &mut graph,
                model.def_params(),
                &model.config,
                &tok.piece_ids,
                None,
                None,
            )
            .unwrap();
            let hd = hidden.data();
            let t = tok.piece_ids.len();
            for col in 0..8 {
                let mut acc = 0.0;
                for r in 1..t - 1 {
                    acc += hd[r * 8 + col];
                }
                let mean = acc / (t - 2) as f64;
                let got = bank_data[row * 8 + col];
                assert!((mean - got).abs() < 1e-12, "row {row} col {col}");
            }
        }
    }

    #[test]
    fn dropout_changes_training_probs_but_not_eval() {
        let (model, vocab, _inventory) = fixture(Variant::Bert, PoolingSpec::default());
        let words = sentence(&["the", "bank", "is", "closed"]);
        let tok = vocab.tokenize_sentence(&words, Some(1), 48).unwrap();
        let run = |rng: Option<u64>| {
            let mut graph: Graph<f64> = Graph::new();
            let mut r = rng.map(ChaCha8Rng::seed_from_u64);
            let hidden = encode(
                &mut graph,
                &model.encoder,
                &model.config,
                &tok.piece_ids,
                None,
                r.as_mut(),
            )
            .unwrap();
            let f =
                pool_span(&mut graph, &hidden, tok.span_of(1).unwrap(), model.pooling).unwrap();
            model
                .classifier_probs(&mut graph, &f, "bank", Pos::Noun, None, 0.5, r.as_mut())
                .unwrap()
                .data()
        };
        let eval_a = run(None);
        let eval_b = run(None);
        let train = run(Some(11));
        assert_eq!(eval_a, eval_b);
        assert_ne!(eval_a, train);
    }

    #[test]
    fn classifier_gradients_match_finite_differences() {
        let h = 4usize;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 0.5).unwrap();
        let shared = SharedHead {
            w1: gauss::<f64>(vec![h, h], &mut rng, &normal),
            b1: gauss::<f64>(vec![h], &mut rng, &normal),
        };
        let head = LemmaHead {
            w2: gauss::<f64>(vec![3, h], &mut rng, &normal),
            b2: gauss::<f64>(vec![3], &mut rng, &normal),
        };
        let f = gauss::<f64>(vec![h], &mut rng, &normal);
        let inputs = [
            f.clone(),
            shared.w1.clone(),
            shared.b1.clone(),
            head.w2.clone(),
            head.b2.clone(),
        ];
        let mismatches = gradcheck::check(&inputs, |g| {
            let probs = mlp_head_forward(g, &f, &shared, &head, 0.0, None)
                .map_err(|e| match e {
                    ModelError::Tensor(t) => t,
                    other => panic!("unexpected error {other}"),
                })?;
            let picked = g.pick(&probs, 1)?;
            let clamped = g.clamp_min(&picked, 1e-12)?;
            let logp = g.log(&clamped)?;
            g.scale(&logp, -1.0)
        })
        .unwrap();
        assert!(mismatches.is_empty(), "{mismatches:?}");
    }

    #[test]
    fn definition_path_gradients_match_finite_differences() {
        let vocab = char_vocab();
        let inventory = parse_inventory(concat!(
            "ab\tNOUN\tab%1\tcd ef\n",
            "ab\tNOUN\tab%2\tgh ij\n",
        ))
        .unwrap();
        let config = EncoderConfig {
            num_layers: 1,
            hidden: 6,
            num_heads: 2,
            ffn: 8,
            vocab_size: vocab.len(),
            max_positions: 16,
            dropout_rate: 0.0,
        };
        let model: WsdModel<f64> = init_model(
            &config,
            PoolingSpec { merge: Merge::Mean, concat_sentence_vector: true },
            Variant::BertDef,
            false,
            &inventory,
            &BTreeSet::new(),
            13,
        )
        .unwrap();
        let words = sentence(&["ab", "cd"]);
        let tok = vocab.tokenize_sentence(&words, Some(0), 16).unwrap();
        let span = tok.span_of(0).unwrap();
        let inputs = [
            model.encoder.token_emb.clone(),
            model.def_encoder.as_ref().unwrap().token_emb.clone(),
            model.shared.w1.clone(),
            model.shared.b1.clone(),
        ];
        let mismatches = gradcheck::check(&inputs, |g| {
            let to_tensor = |e: ModelError| match e {
                ModelError::Tensor(t) => t,
                other => panic!("unexpected error {other}"),
            };
            let bank = sense_vectors(g, &model, &vocab, &inventory, "ab", Pos::Noun, None)
                .map_err(to_tensor)?;
            let hidden = encode(g, &model.encoder, &model.config, &tok.piece_ids, None, None)?;
            let f = pool_span(g, &hidden, span, model.pooling).map_err(to_tensor)?;
            let probs = def_head_forward(g, &f, &model.shared, &bank, 0.0, None)
                .map_err(to_tensor)?;
            let picked = g.pick(&probs, 1)?;
            let clamped = g.clamp_min(&picked, 1e-12)?;
            let logp = g.log(&clamped)?;
            g.scale(&logp, -1.0)
        })
        .unwrap();
        assert!(mismatches.is_empty(), "{} disagreements", mismatches.len());
    }

    #[test]
    fn loss_gradient_reaches_both_encoders() {
        let (model, vocab, inventory) = fixture(Variant::BertDef, PoolingSpec::default());
        let words = sentence(&["the", "bank", "is", "closed"]);
        let tok = vocab.tokenize_sentence(&words, Some(1), 48).unwrap();
        let mut graph: Graph<f64> = Graph::new();
        let bank =
            sense_vectors(&mut graph, &model, &vocab, &inventory, "bank", Pos::Noun, None).unwrap();
        let hidden =
            encode(&mut graph, &model.encoder, &model.config, &tok.piece_ids, None, None).unwrap();
        let f =
            pool_span(&mut graph, &hidden, tok.span_of(1).unwrap(), model.pooling).unwrap();
        let probs = model
            .classifier_probs(&mut graph, &f, "bank", Pos::Noun, Some(&bank), 0.0, None)
            .unwrap();
        let picked = graph.pick(&probs, 0).unwrap();
        let clamped = graph.clamp_min(&picked, 1e-12).unwrap();
        let logp = graph.log(&clamped).unwrap();
        let loss = graph.scale(&logp, -1.0).unwrap();
        graph.backward(&loss).unwrap();
        let ctx_grad = model.encoder.token_emb.grad().unwrap();
        let def_grad = model.def_encoder.as_ref().unwrap().token_emb.grad().unwrap();
        assert!(ctx_grad.iter().any(|g| g.abs() > 0.0));
        assert!(def_grad.iter().any(|g| g.abs() > 0.0));
    }

    #[test]
    fn shared_encoder_mode_reuses_context_parameters() {
        let vocab = char_vocab();
        let inventory = tiny_inventory();
        let config = tiny_config(vocab.len());
        let model: WsdModel<f64> = init_model(
            &config,
            PoolingSpec::default(),
            Variant::BertDef,
            true,
            &inventory,
            &BTreeSet::new(),
            3,
        )
        .unwrap();
        assert!(model.def_encoder.is_none());
        assert!(Tensor::same_buffer(
            &model.def_params().token_emb,
            &model.encoder.token_emb
        ));
        assert!(model.named().iter().all(|(n, _)| !n.starts_with("def_encoder.")));
    }

    #[test]
    fn predictor_matches_single_shot_predictions() {
        let (model, vocab, inventory) = fixture(Variant::BertDef, PoolingSpec::default());
        let predictor = Predictor::new(&model, &vocab, &inventory).unwrap();
        for words in [
            sentence(&["the", "bank", "is", "closed"]),
            sentence(&["a", "bank", "of", "mud"]),
        ] {
            let one_shot = model
                .predict(&vocab, &inventory, &words, 1, "bank", Pos::Noun)
                .unwrap();
            let cached = predictor.predict(&words, 1, "bank", Pos::Noun).unwrap();
            assert_eq!(one_shot, cached);
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let (a, _, _) = fixture(Variant::BertDef, PoolingSpec::default());
        let (b, _, _) = fixture(Variant::BertDef, PoolingSpec::default());
        for ((na, ta), (nb, tb)) in a.named().into_iter().zip(b.named()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "{na}");
        }
        let vocab = char_vocab();
        let inventory = tiny_inventory();
        let config = tiny_config(vocab.len());
        let c: WsdModel<f64> = init_model(
            &config,
            PoolingSpec::default(),
            Variant::BertDef,
            false,
            &inventory,
            &BTreeSet::new(),
            8,
        )
        .unwrap();
        assert_ne!(a.encoder.token_emb.data(), c.encoder.token_emb.data());
    }

    #[test]
    fn lemma_param_names_round_trip() {
        let name = lemma_param_name("mother-in-law.x y", Pos::Adj, "w2");
        let (lemma, pos, field) = parse_lemma_param_name(&name).unwrap();
        assert_eq!(lemma, "mother-in-law.x y");
        assert_eq!(pos, Pos::Adj);
        assert_eq!(field, "w2");
        assert!(parse_lemma_param_name("encoder.token_emb").is_none());
        assert!(is_encoder_param("encoder.token_emb"));
        assert!(is_encoder_param("def_encoder.layer0.attn_wq"));
        assert!(!is_encoder_param(&name));
        assert!(!is_encoder_param("head.w1"));
    }
}
