//! Deterministic synthetic corpora for desk-scale experiments.
//!
//! The construction makes definition-conditioned disambiguation learnable
//! and transferable: senses are grounded in shared *topics*, each topic
//! owns a pool of cue words, and lemma i's sense j draws its context cues
//! and its gloss from topic (i + j) mod (senses_per_lemma + 1). Because
//! topics recur across lemmas, a model that learns to match context cues
//! against gloss cues can classify lemmas it never saw in training.
//!
//! Lemma surface forms alternate between a single vocabulary piece (even
//! indices) and a three-syllable word absent from the vocabulary (odd
//! indices), so word-piece span pooling is exercised on both shapes.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::{AnnotatedCorpus, Sentence, TextBlock, Word};
use super::gold::GoldKeys;
use super::inventory::{Sense, SenseInventory};
use super::Pos;
use crate::tokenizer::{Vocabulary, CLS, PAD, SEP, UNK};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_lemmas: usize,
    pub senses_per_lemma: usize,
    pub sentences_per_sense: usize,
    /// Soft target for the number of distinct content words (cues plus
    /// fillers); small values are bumped to keep every pool usable.
    pub vocab_size: usize,
    /// This many lemmas (taken from the end) appear only in the test set.
    pub held_out_lemmas: usize,
    /// When set, sense ranks get Zipf-skewed sentence counts with this
    /// exponent instead of uniform counts.
    pub zipf: Option<f64>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_lemmas: 8,
            senses_per_lemma: 3,
            sentences_per_sense: 10,
            vocab_size: 60,
            held_out_lemmas: 0,
            zipf: None,
            seed: 0,
        }
    }
}

/// A corpus with the gold keys for its instances.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub corpus: AnnotatedCorpus,
    pub gold: GoldKeys,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub test: LabeledSet,
    pub inventory: SenseInventory,
    pub vocab: Vocabulary,
    /// Lemmas that never occur in train or val.
    pub held_out: Vec<String>,
}

const FUNCTION_WORDS: [&str; 8] = ["the", "a", "of", "to", "and", "is", "with", "relating"];

fn syllables() -> Vec<String> {
    let consonants = ['b', 'd', 'f', 'g', 'h', 'j', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'w', 'z'];
    let vowels = ['a', 'e', 'i', 'o', 'u'];
    let mut out = Vec::with_capacity(consonants.len() * vowels.len());
    for c in consonants {
        for v in vowels {
            out.push(format!("{c}{v}"));
        }
    }
    out
}

fn word2(pool: &[String], idx: usize) -> String {
    let n = pool.len();
    assert!(idx < n * n, "two-syllable word index {idx} exceeds pool capacity");
    format!("{}{}", pool[idx / n], pool[idx % n])
}

fn word3(pool: &[String], idx: usize) -> String {
    let n = pool.len();
    assert!(idx < n * n * n, "three-syllable word index {idx} exceeds pool capacity");
    format!("{}{}{}", pool[idx / (n * n)], pool[(idx / n) % n], pool[idx % n])
}

struct SplitAccum {
    name: &'static str,
    sentences: Vec<Sentence>,
    gold: GoldKeys,
}

impl SplitAccum {
    fn new(name: &'static str) -> Self {
        SplitAccum {
            name,
            sentences: Vec::new(),
            gold: GoldKeys::default(),
        }
    }

    fn finish(self) -> LabeledSet {
        let n = self.sentences.len();
        let corpus = AnnotatedCorpus::from_parts(
            vec![TextBlock {
                id: self.name.to_owned(),
                sentences: 0..n,
            }],
            self.sentences,
        );
        LabeledSet {
            corpus,
            gold: self.gold,
        }
    }
}

pub fn synth_corpus(spec: &SynthSpec) -> SynthData {
    assert!(spec.num_lemmas > 0, "num_lemmas must be positive");
    assert!(spec.senses_per_lemma > 0, "senses_per_lemma must be positive");
    assert!(spec.sentences_per_sense > 0, "sentences_per_sense must be positive");
    assert!(spec.vocab_size > 0, "vocab_size must be positive");
    assert!(
        spec.held_out_lemmas < spec.num_lemmas,
        "held_out_lemmas must leave at least one training lemma"
    );

    let syl = syllables();
    let lemma_even_syl = &syl[0..20];
    let lemma_odd_syl = &syl[20..40];
    let cue_syl = &syl[40..65];
    let filler_syl = &syl[65..85];

    let num_topics = spec.senses_per_lemma + 1;
    let pool_size = (spec.vocab_size / (2 * num_topics)).max(3);
    let num_fillers = spec.vocab_size.saturating_sub(num_topics * pool_size).max(4);

    let lemmas: Vec<String> = (0..spec.num_lemmas)
        .map(|i| {
            if i % 2 == 0 {
                word2(lemma_even_syl, i)
            } else {
                word3(lemma_odd_syl, i)
            }
        })
        .collect();
    let topic_pools: Vec<Vec<String>> = (0..num_topics)
        .map(|t| (0..pool_size).map(|c| word2(cue_syl, t * pool_size + c)).collect())
        .collect();
    let fillers: Vec<String> = (0..num_fillers).map(|f| word2(filler_syl, f)).collect();

    let topic_of = |lemma: usize, sense: usize| (lemma + sense) % num_topics;
    let key_of = |lemma: &str, sense: usize| format!("{lemma}%{}:00::", sense + 1);

    let mut inventory = SenseInventory::default();
    for (i, lemma) in lemmas.iter().enumerate() {
        let pos = Pos::ALL[i % 4];
        for j in 0..spec.senses_per_lemma {
            let pool = &topic_pools[topic_of(i, j)];
            let gloss_cues: Vec<&str> = (0..3).map(|r| pool[(i + j + r) % pool.len()].as_str()).collect();
            inventory
                .push(
                    lemma.clone(),
                    pos,
                    Sense {
                        key: key_of(lemma, j),
                        gloss: format!("relating to {}", gloss_cues.join(" ")),
                    },
                )
                .expect("synthetic keys are unique by construction");
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut splits = [
        SplitAccum::new("train"),
        SplitAccum::new("val"),
        SplitAccum::new("test"),
    ];
    let mut counter = 0usize;

    for (i, lemma) in lemmas.iter().enumerate() {
        let pos = Pos::ALL[i % 4];
        let held_out = i >= spec.num_lemmas - spec.held_out_lemmas;
        for j in 0..spec.senses_per_lemma {
            let pool = &topic_pools[topic_of(i, j)];
            let count = match spec.zipf {
                Some(s) => ((spec.sentences_per_sense as f64 / ((j + 1) as f64).powf(s)).round() as usize).max(1),
                None => spec.sentences_per_sense,
            };
            for k in 0..count {
                let n_cues = (3 + k % 2).min(pool.len());
                let n_fillers = 3 + (k + 1) % 3;

                let mut surfaces: Vec<(String, bool)> = vec![(lemma.clone(), true)];
                let mut cue_choice: Vec<&String> = pool.iter().collect();
                cue_choice.shuffle(&mut rng);
                for cue in cue_choice.into_iter().take(n_cues) {
                    surfaces.push((cue.clone(), false));
                }
                for _ in 0..n_fillers {
                    surfaces.push((fillers.choose(&mut rng).expect("filler pool non-empty").clone(), false));
                }
                for _ in 0..2 {
                    surfaces.push((FUNCTION_WORDS[rng.random_range(0..FUNCTION_WORDS.len())].to_owned(), false));
                }
                surfaces.shuffle(&mut rng);

                let split = if held_out {
                    &mut splits[2]
                } else {
                    match k % 5 {
                        3 => &mut splits[1],
                        4 => &mut splits[2],
                        _ => &mut splits[0],
                    }
                };
                let instance_id = format!("l{i:03}.s{j}.k{k:03}");
                let words: Vec<Word> = surfaces
                    .into_iter()
                    .map(|(surface, is_target)| Word {
                        lemma: surface.clone(),
                        pos: if is_target { pos } else { Pos::Noun },
                        instance: is_target.then(|| instance_id.clone()),
                        surface,
                    })
                    .collect();
                split.sentences.push(Sentence {
                    id: format!("{}.snt{counter:05}", split.name),
                    words,
                });
                split.gold.insert(instance_id, vec![key_of(lemma, j)]);
                counter += 1;
            }
        }
    }

    let mut vocab_lines: Vec<String> = vec![CLS.into(), SEP.into(), UNK.into(), PAD.into()];
    let mut seen: std::collections::HashSet<String> = vocab_lines.iter().cloned().collect();
    let push = |lines: &mut Vec<String>, seen: &mut std::collections::HashSet<String>, piece: String| {
        if seen.insert(piece.clone()) {
            lines.push(piece);
        }
    };
    for w in FUNCTION_WORDS {
        push(&mut vocab_lines, &mut seen, w.to_owned());
    }
    for c in 'a'..='z' {
        push(&mut vocab_lines, &mut seen, c.to_string());
        push(&mut vocab_lines, &mut seen, format!("##{c}"));
    }
    for (i, lemma) in lemmas.iter().enumerate() {
        if i % 2 == 0 {
            push(&mut vocab_lines, &mut seen, lemma.clone());
        }
    }
    for s in lemma_odd_syl {
        push(&mut vocab_lines, &mut seen, s.clone());
        push(&mut vocab_lines, &mut seen, format!("##{s}"));
    }
    for pool in &topic_pools {
        for cue in pool {
            push(&mut vocab_lines, &mut seen, cue.clone());
        }
    }
    for f in &fillers {
        push(&mut vocab_lines, &mut seen, f.clone());
    }
    let vocab = Vocabulary::from_lines(vocab_lines).expect("synthetic vocabulary is well-formed");

    let held_out = lemmas[spec.num_lemmas - spec.held_out_lemmas..].to_vec();
    let [train, val, test] = splits;
    SynthData {
        train: train.finish(),
        val: val.finish(),
        test: test.finish(),
        inventory,
        vocab,
        held_out,
    }
}
