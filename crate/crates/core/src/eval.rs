//! Scoring and analysis: micro precision/recall/F1 with per-POS and
//! per-dataset breakdowns, a most-frequent-sense baseline, training-set
//! frequency buckets, and the pooling ablation grid. Every report has
//! both a human table (Display) and a TSV form with a header row.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::data::{AnnotatedCorpus, GoldKeys, Pos, SenseInventory};
use crate::encoder::EncoderConfig;
use crate::model::{ModelError, PoolingSpec, Predictor, WsdModel};
use crate::scalar::Scalar;
use crate::tokenizer::Vocabulary;
use crate::train::{self, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction for unknown instance {0:?}")]
    UnknownInstance(String),
    #[error("({lemma}, {pos}) is not in the sense inventory")]
    LemmaNotInInventory { lemma: String, pos: Pos },
}

/// Raw tallies behind one precision/recall/F1 triple.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    /// Instances the system produced a prediction for.
    pub attempted: usize,
    /// Predictions matching at least one gold key.
    pub correct: usize,
    /// Gold-labeled instances, attempted or not.
    pub total: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.correct as f64 / self.attempted as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Micro scores overall plus per part of speech and per source text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreReport {
    pub overall: Counts,
    pub per_pos: BTreeMap<Pos, Counts>,
    pub per_dataset: BTreeMap<String, Counts>,
}

/// Index of which text block owns each sentence.
fn sentence_owners(corpus: &AnnotatedCorpus) -> Vec<usize> {
    let mut owner = vec![usize::MAX; corpus.sentences.len()];
    for (ti, text) in corpus.texts.iter().enumerate() {
        for s in text.sentences.clone() {
            owner[s] = ti;
        }
    }
    owner
}

/// Score predictions (instance id to sense key) against the gold keys. A
/// prediction is correct when it matches any gold key of its instance.
/// Instances without gold keys are ignored; a prediction for an id that
/// is not a gold-labeled instance of the corpus is an error.
pub fn score(
    corpus: &AnnotatedCorpus,
    predictions: &BTreeMap<String, String>,
    gold: &GoldKeys,
) -> Result<ScoreReport, EvalError> {
    let owner = sentence_owners(corpus);
    let mut report = ScoreReport::default();
    let mut seen = 0usize;
    for inst in corpus.instances() {
        let Some(keys) = gold.get(&inst.id) else { continue };
        let dataset = corpus.texts[owner[inst.sentence]].id.clone();
        let prediction = predictions.get(&inst.id);
        if prediction.is_some() {
            seen += 1;
        }
        let hit = prediction.is_some_and(|p| keys.contains(p));
        for c in [
            &mut report.overall,
            report.per_pos.entry(inst.pos).or_default(),
            report.per_dataset.entry(dataset).or_default(),
        ] {
            c.total += 1;
            if prediction.is_some() {
                c.attempted += 1;
            }
            if hit {
                c.correct += 1;
            }
        }
    }
    if seen != predictions.len() {
        let scoreable: std::collections::BTreeSet<&str> = corpus
            .instances()
            .iter()
            .filter(|i| gold.contains(&i.id))
            .map(|i| i.id.as_str())
            .collect();
        let stray = predictions
            .keys()
            .find(|id| !scoreable.contains(id.as_str()))
            .expect("count mismatch implies a stray prediction");
        return Err(EvalError::UnknownInstance(stray.clone()));
    }
    Ok(report)
}

/// Predict every gold-labeled instance of the corpus. Instances whose
/// lemma has no inventory entry are skipped, which the scorer then counts
/// against recall but not precision.
pub fn predict_all<S: Scalar>(
    model: &WsdModel<S>,
    vocab: &Vocabulary,
    inventory: &SenseInventory,
    corpus: &AnnotatedCorpus,
    gold: &GoldKeys,
) -> Result<BTreeMap<String, String>, ModelError> {
    let predictor = Predictor::new(model, vocab, inventory)?;
    let mut out = BTreeMap::new();
    for inst in corpus.instances() {
        if gold.get(&inst.id).is_none() {
            continue;
        }
        let words: Vec<String> = corpus.sentences[inst.sentence]
            .words
            .iter()
            .map(|w| w.surface.clone())
            .collect();
        match predictor.predict(&words, inst.word, &inst.lemma, inst.pos) {
            Ok(p) => {
                out.insert(inst.id.clone(), p.key);
            }
            Err(ModelError::UnknownLemma { lemma, pos }) => {
                log::debug!("({lemma}, {pos:?}) has no inventory entry; instance left unattempted");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Most-frequent-sense baseline: each test instance gets the sense of its
/// (lemma, pos) with the highest training count, every listed gold key of
/// a training instance counting once. Ties and unseen lemmas fall back to
/// the first-listed inventory sense.
pub fn mfs_baseline(
    train_corpus: &AnnotatedCorpus,
    train_gold: &GoldKeys,
    inventory: &SenseInventory,
    test_corpus: &AnnotatedCorpus,
    test_gold: &GoldKeys,
) -> Result<BTreeMap<String, String>, EvalError> {
    let mut counts: HashMap<(String, Pos), Vec<usize>> = HashMap::new();
    for inst in train_corpus.instances() {
        let Some(keys) = train_gold.get(&inst.id) else { continue };
        for key in keys {
            let Some(rank) = inventory.rank(&inst.lemma, inst.pos, key) else { continue };
            let slot = counts
                .entry((inst.lemma.clone(), inst.pos))
                .or_insert_with(|| {
                    let n = inventory
                        .senses(&inst.lemma, inst.pos)
                        .map_or(0, <[_]>::len);
                    vec![0; n]
                });
            slot[rank] += 1;
        }
    }
    let mut out = BTreeMap::new();
    for inst in test_corpus.instances() {
        if test_gold.get(&inst.id).is_none() {
            continue;
        }
        let senses = inventory.senses(&inst.lemma, inst.pos).ok_or_else(|| {
            EvalError::LemmaNotInInventory {
                lemma: inst.lemma.clone(),
                pos: inst.pos,
            }
        })?;
        let mut best = 0usize;
        if let Some(tallies) = counts.get(&(inst.lemma.clone(), inst.pos)) {
            for (rank, &n) in tallies.iter().enumerate() {
                if n > tallies[best] {
                    best = rank;
                }
            }
        }
        out.insert(inst.id.clone(), senses[best].key.clone());
    }
    Ok(out)
}

pub const BUCKET_LABELS: [&str; 5] = ["0", "1-10", "11-50", "51-200", ">200"];

fn bucket_of(freq: usize) -> usize {
    match freq {
        0 => 0,
        1..=10 => 1,
        11..=50 => 2,
        51..=200 => 3,
        _ => 4,
    }
}

/// One training-frequency band of the test set. Both the instance count
/// and the distinct (lemma, pos) count are reported, since the two ways
/// of sizing a band answer different questions.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketRow {
    pub label: &'static str,
    pub counts: Counts,
    pub distinct_words: usize,
    pub mean_ambiguity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyReport {
    pub buckets: Vec<BucketRow>,
}

/// Break test performance down by how often each (lemma, pos) was seen in
/// training. Bucket edges are inclusive and the buckets partition the test
/// instances.
pub fn frequency_report(
    train_corpus: &AnnotatedCorpus,
    train_gold: &GoldKeys,
    test_corpus: &AnnotatedCorpus,
    test_gold: &GoldKeys,
    predictions: &BTreeMap<String, String>,
    inventory: &SenseInventory,
) -> Result<FrequencyReport, EvalError> {
    let mut freq: HashMap<(String, Pos), usize> = HashMap::new();
    for inst in train_corpus.instances() {
        if train_gold.get(&inst.id).is_none() {
            continue;
        }
        *freq.entry((inst.lemma.clone(), inst.pos)).or_default() += 1;
    }
    let mut counts = [Counts::default(); 5];
    let mut words: Vec<std::collections::BTreeSet<(String, Pos)>> = vec![Default::default(); 5];
    let mut ambiguity_sum = [0usize; 5];
    for inst in test_corpus.instances() {
        let Some(keys) = test_gold.get(&inst.id) else { continue };
        let senses = inventory.senses(&inst.lemma, inst.pos).ok_or_else(|| {
            EvalError::LemmaNotInInventory {
                lemma: inst.lemma.clone(),
                pos: inst.pos,
            }
        })?;
        let key = (inst.lemma.clone(), inst.pos);
        let b = bucket_of(freq.get(&key).copied().unwrap_or(0));
        counts[b].total += 1;
        ambiguity_sum[b] += senses.len();
        words[b].insert(key);
        if let Some(p) = predictions.get(&inst.id) {
            counts[b].attempted += 1;
            if keys.contains(p) {
                counts[b].correct += 1;
            }
        }
    }
    let buckets = (0..5)
        .map(|b| BucketRow {
            label: BUCKET_LABELS[b],
            counts: counts[b],
            distinct_words: words[b].len(),
            mean_ambiguity: if counts[b].total == 0 {
                0.0
            } else {
                ambiguity_sum[b] as f64 / counts[b].total as f64
            },
        })
        .collect();
    Ok(FrequencyReport { buckets })
}

/// Borrowed handles to everything one experiment needs.
#[derive(Clone, Copy)]
pub struct DataBundle<'a> {
    pub train_corpus: &'a AnnotatedCorpus,
    pub train_gold: &'a GoldKeys,
    pub val_corpus: &'a AnnotatedCorpus,
    pub val_gold: &'a GoldKeys,
    pub test_corpus: &'a AnnotatedCorpus,
    pub test_gold: &'a GoldKeys,
    pub inventory: &'a SenseInventory,
    pub vocab: &'a Vocabulary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: &'static str,
    /// (dataset id, F1), sorted by dataset id.
    pub dataset_f1: Vec<(String, f64)>,
    pub overall_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

/// Train and score one run per pooling spec, everything else held fixed.
/// Runs are seeded identically and fully deterministic, so the four legs
/// execute in parallel without affecting the results.
pub fn ablation_grid<S: Scalar>(
    bundle: &DataBundle<'_>,
    encoder_config: &EncoderConfig,
    base: &TrainConfig,
) -> Result<AblationReport, TrainError> {
    let results: Vec<Result<AblationRow, TrainError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = PoolingSpec::grid()
            .into_iter()
            .map(|pooling| {
                scope.spawn(move || {
                    let config = TrainConfig {
                        pooling,
                        ..base.clone()
                    };
                    let outcome = train::train::<S>(
                        bundle.train_corpus,
                        bundle.train_gold,
                        bundle.val_corpus,
                        bundle.val_gold,
                        bundle.inventory,
                        bundle.vocab,
                        encoder_config,
                        &config,
                    )?;
                    let predictions = predict_all(
                        &outcome.model,
                        bundle.vocab,
                        bundle.inventory,
                        bundle.test_corpus,
                        bundle.test_gold,
                    )?;
                    let report = score(bundle.test_corpus, &predictions, bundle.test_gold)?;
                    Ok(AblationRow {
                        label: pooling.label(),
                        dataset_f1: report
                            .per_dataset
                            .iter()
                            .map(|(k, c)| (k.clone(), c.f1()))
                            .collect(),
                        overall_f1: report.overall.f1(),
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ablation run panicked"))
            .collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(r?);
    }
    Ok(AblationReport { rows })
}

fn counts_row(f: &mut fmt::Formatter<'_>, label: &str, c: &Counts) -> fmt::Result {
    writeln!(
        f,
        "{label:<14} {:>9} {:>9} {:>9} {:>8.4} {:>8.4} {:>8.4}",
        c.attempted,
        c.correct,
        c.total,
        c.precision(),
        c.recall(),
        c.f1()
    )
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<14} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8}",
            "split", "attempted", "correct", "total", "P", "R", "F1"
        )?;
        for (dataset, c) in &self.per_dataset {
            counts_row(f, dataset, c)?;
        }
        for (pos, c) in &self.per_pos {
            counts_row(f, pos.as_str(), c)?;
        }
        counts_row(f, "ALL", &self.overall)
    }
}

impl ScoreReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "section\tlabel\tattempted\tcorrect\ttotal\tprecision\trecall\tf1\n",
        );
        let mut push = |section: &str, label: &str, c: &Counts| {
            out.push_str(&format!(
                "{section}\t{label}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
                c.attempted,
                c.correct,
                c.total,
                c.precision(),
                c.recall(),
                c.f1()
            ));
        };
        for (dataset, c) in &self.per_dataset {
            push("dataset", dataset, c);
        }
        for (pos, c) in &self.per_pos {
            push("pos", pos.as_str(), c);
        }
        push("all", "all", &self.overall);
        out
    }
}

impl fmt::Display for FrequencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:>9} {:>9} {:>9} {:>9} {:>9} {:>8}",
            "train-freq", "instances", "words", "ambig", "attempted", "correct", "F1"
        )?;
        for row in &self.buckets {
            writeln!(
                f,
                "{:<10} {:>9} {:>9} {:>9.2} {:>9} {:>9} {:>8.4}",
                row.label,
                row.counts.total,
                row.distinct_words,
                row.mean_ambiguity,
                row.counts.attempted,
                row.counts.correct,
                row.counts.f1()
            )?;
        }
        Ok(())
    }
}

impl FrequencyReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "bucket\tinstances\tdistinct_words\tmean_ambiguity\tattempted\tcorrect\tf1\n",
        );
        for row in &self.buckets {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{}\t{}\t{:.6}\n",
                row.label,
                row.counts.total,
                row.distinct_words,
                row.mean_ambiguity,
                row.counts.attempted,
                row.counts.correct,
                row.counts.f1()
            ));
        }
        out
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<14}", "pooling")?;
        if let Some(first) = self.rows.first() {
            for (dataset, _) in &first.dataset_f1 {
                write!(f, " {dataset:>12}")?;
            }
        }
        writeln!(f, " {:>12}", "All")?;
        for row in &self.rows {
            write!(f, "{:<14}", row.label)?;
            for (_, f1) in &row.dataset_f1 {
                write!(f, " {f1:>12.4}")?;
            }
            writeln!(f, " {:>12.4}", row.overall_f1)?;
        }
        Ok(())
    }
}

impl AblationReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("pooling");
        if let Some(first) = self.rows.first() {
            for (dataset, _) in &first.dataset_f1 {
                out.push('\t');
                out.push_str(dataset);
            }
        }
        out.push_str("\tall\n");
        for row in &self.rows {
            out.push_str(row.label);
            for (_, f1) in &row.dataset_f1 {
                out.push_str(&format!("\t{f1:.6}"));
            }
            out.push_str(&format!("\t{:.6}\n", row.overall_f1));
        }
        out
    }
}
