//! Corpus, gold-key, and sense-inventory io, plus synthetic corpus
//! generation for desk-scale experiments.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub mod corpus;
pub mod gold;
pub mod inventory;
pub mod synth;

pub use corpus::{parse_corpus, serialize_corpus, AnnotatedCorpus, Instance, Sentence, TextBlock, Word};
pub use gold::{parse_gold, GoldKeys};
pub use inventory::{parse_inventory, Sense, SenseInventory};
pub use synth::{synth_corpus, LabeledSet, SynthData, SynthSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {msg}")]
    Corpus { line: usize, msg: String },
    #[error("gold line {line}: {msg}")]
    Gold { line: usize, msg: String },
    #[error("inventory line {line}: {msg}")]
    Inventory { line: usize, msg: String },
    #[error("integrity: {0}")]
    Integrity(String),
}

/// Coarse part-of-speech tags carried by annotated instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Adv,
}

impl Pos {
    pub const ALL: [Pos; 4] = [Pos::Noun, Pos::Verb, Pos::Adj, Pos::Adv];

    pub fn as_str(self) -> &'static str {
        match self {
            Pos::Noun => "NOUN",
            Pos::Verb => "VERB",
            Pos::Adj => "ADJ",
            Pos::Adv => "ADV",
        }
    }
}

impl FromStr for Pos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NOUN" => Ok(Pos::Noun),
            "VERB" => Ok(Pos::Verb),
            "ADJ" => Ok(Pos::Adj),
            "ADV" => Ok(Pos::Adv),
            other => Err(format!("unknown pos {other:?}")),
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cross-check a parsed bundle: every instance must have an inventory
/// entry, and any gold keys must belong to that entry.
pub fn validate(
    corpus: &AnnotatedCorpus,
    inventory: &SenseInventory,
    gold: &GoldKeys,
) -> Result<(), DataError> {
    for inst in corpus.instances() {
        let senses = inventory.senses(&inst.lemma, inst.pos).ok_or_else(|| {
            DataError::Integrity(format!(
                "instance {} has no inventory entry for ({}, {})",
                inst.id, inst.lemma, inst.pos
            ))
        })?;
        if let Some(keys) = gold.get(&inst.id) {
            for key in keys {
                if !senses.iter().any(|s| &s.key == key) {
                    return Err(DataError::Integrity(format!(
                        "gold key {key:?} for instance {} is not a sense of ({}, {})",
                        inst.id, inst.lemma, inst.pos
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Headline corpus numbers: sentence, token, and annotation counts plus
/// the average inventory ambiguity over annotated instances.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    pub annotations: usize,
    pub avg_ambiguity: f64,
}

pub fn stats(corpus: &AnnotatedCorpus, inventory: &SenseInventory) -> CorpusStats {
    let sentences = corpus.sentences.len();
    let tokens = corpus.sentences.iter().map(|s| s.words.len()).sum();
    let annotations = corpus.instances().len();
    let total_senses: usize = corpus
        .instances()
        .iter()
        .map(|i| inventory.senses(&i.lemma, i.pos).map_or(0, <[Sense]>::len))
        .sum();
    let avg_ambiguity = if annotations == 0 {
        0.0
    } else {
        total_senses as f64 / annotations as f64
    };
    CorpusStats {
        sentences,
        tokens,
        annotations,
        avg_ambiguity,
    }
}
