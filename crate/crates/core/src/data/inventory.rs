//! Sense inventories: each (lemma, pos) maps to its ranked senses, each
//! sense carrying a key and a dictionary gloss.
//!
//! Format is a 4-column TSV (lemma, pos, key, gloss); file order defines
//! sense rank within an entry, with rank 0 the most frequent sense.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DataError, Pos};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sense {
    pub key: String,
    pub gloss: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SenseInventory {
    entries: HashMap<(String, Pos), Vec<Sense>>,
    order: Vec<(String, Pos)>, // first-encounter order, for serialization
}

impl SenseInventory {
    pub fn senses(&self, lemma: &str, pos: Pos) -> Option<&[Sense]> {
        self.entries.get(&(lemma.to_owned(), pos)).map(Vec::as_slice)
    }

    /// Rank of a sense key within its entry; 0 is the first-listed sense.
    pub fn rank(&self, lemma: &str, pos: Pos, key: &str) -> Option<usize> {
        self.senses(lemma, pos)?.iter().position(|s| s.key == key)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, Pos, &[Sense])> {
        self.order
            .iter()
            .map(|k| (k.0.as_str(), k.1, self.entries[k].as_slice()))
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn push(&mut self, lemma: String, pos: Pos, sense: Sense) -> Result<(), DataError> {
        let key = (lemma, pos);
        match self.entries.get_mut(&key) {
            Some(senses) => {
                if senses.iter().any(|s| s.key == sense.key) {
                    return Err(DataError::Integrity(format!(
                        "duplicate sense key {:?} for ({}, {})",
                        sense.key, key.0, key.1
                    )));
                }
                senses.push(sense);
            }
            None => {
                self.order.push(key.clone());
                self.entries.insert(key, vec![sense]);
            }
        }
        Ok(())
    }
}

pub fn parse_inventory(text: &str) -> Result<SenseInventory, DataError> {
    let mut inv = SenseInventory::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut cols = raw.splitn(4, '\t');
        let (lemma, pos, key, gloss) = match (cols.next(), cols.next(), cols.next(), cols.next()) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => {
                return Err(DataError::Inventory {
                    line,
                    msg: "expected 4 tab-separated columns".into(),
                })
            }
        };
        if lemma.is_empty() || key.is_empty() {
            return Err(DataError::Inventory {
                line,
                msg: "empty lemma or sense key".into(),
            });
        }
        if gloss.trim().is_empty() {
            return Err(DataError::Inventory {
                line,
                msg: format!("sense {key:?} has an empty gloss"),
            });
        }
        let pos: Pos = pos.parse().map_err(|m: String| DataError::Inventory { line, msg: m })?;
        inv.push(
            lemma.to_owned(),
            pos,
            Sense {
                key: key.to_owned(),
                gloss: gloss.to_owned(),
            },
        )
        .map_err(|e| DataError::Inventory {
            line,
            msg: e.to_string(),
        })?;
    }
    Ok(inv)
}

pub fn load_inventory(path: impl AsRef<Path>) -> Result<SenseInventory, DataError> {
    parse_inventory(&fs::read_to_string(path)?)
}

pub fn serialize_inventory(inv: &SenseInventory) -> String {
    let mut out = String::new();
    for (lemma, pos, senses) in inv.entries() {
        for s in senses {
            writeln!(out, "{lemma}\t{pos}\t{}\t{}", s.key, s.gloss).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_follow_file_order() {
        let inv = parse_inventory("bank\tNOUN\tbank%1\tmoney place\nbank\tNOUN\tbank%2\triver edge\n").unwrap();
        let senses = inv.senses("bank", Pos::Noun).unwrap();
        assert_eq!(senses.len(), 2);
        assert_eq!(senses[0].key, "bank%1");
        assert_eq!(inv.rank("bank", Pos::Noun, "bank%2"), Some(1));
        assert_eq!(inv.rank("bank", Pos::Noun, "bank%9"), None);
    }

    #[test]
    fn interleaved_lemmas_group_by_entry() {
        let inv = parse_inventory(
            "bank\tNOUN\tbank%1\ta\nrun\tVERB\trun%1\tb\nbank\tNOUN\tbank%2\tc\nbank\tVERB\tbank%v1\td\n",
        )
        .unwrap();
        assert_eq!(inv.senses("bank", Pos::Noun).unwrap().len(), 2);
        assert_eq!(inv.senses("bank", Pos::Verb).unwrap().len(), 1);
        assert_eq!(inv.senses("run", Pos::Verb).unwrap().len(), 1);
        assert_eq!(inv.rank("bank", Pos::Noun, "bank%2"), Some(1));
    }

    #[test]
    fn duplicate_key_within_entry_is_rejected() {
        let err = parse_inventory("a\tNOUN\tk%1\tx\na\tNOUN\tk%1\ty\n").unwrap_err();
        assert!(matches!(err, DataError::Inventory { line: 2, .. }));
    }

    #[test]
    fn empty_gloss_is_rejected() {
        let err = parse_inventory("a\tNOUN\tk%1\t \n").unwrap_err();
        assert!(matches!(err, DataError::Inventory { line: 1, .. }));
    }

    #[test]
    fn bad_column_count_is_rejected() {
        let err = parse_inventory("a\tNOUN\tk%1\n").unwrap_err();
        assert!(matches!(err, DataError::Inventory { line: 1, .. }));
    }

    #[test]
    fn gloss_may_contain_tabs() {
        let inv = parse_inventory("a\tNOUN\tk%1\tgloss\twith\ttabs\n").unwrap();
        assert_eq!(inv.senses("a", Pos::Noun).unwrap()[0].gloss, "gloss\twith\ttabs");
    }

    #[test]
    fn serialization_round_trips() {
        let text = "bank\tNOUN\tbank%1\tmoney place\nbank\tNOUN\tbank%2\triver edge\nrun\tVERB\trun%1\tmove fast\n";
        let inv = parse_inventory(text).unwrap();
        assert_eq!(serialize_inventory(&inv), text);
    }
}
