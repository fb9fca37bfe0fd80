//! Gold sense annotations: lines of `INSTANCE_ID KEY [KEY...]`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::DataError;

/// Acceptable sense keys per instance id. Several keys on one line mean
/// any of them scores as correct.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldKeys {
    map: HashMap<String, Vec<String>>,
}

impl GoldKeys {
    pub fn get(&self, instance_id: &str) -> Option<&[String]> {
        self.map.get(instance_id).map(Vec::as_slice)
    }

    pub fn contains(&self, instance_id: &str) -> bool {
        self.map.contains_key(instance_id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn insert(&mut self, instance_id: String, keys: Vec<String>) {
        self.map.insert(instance_id, keys);
    }

    /// Keep only the ids selected by the predicate.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> GoldKeys {
        GoldKeys {
            map: self
                .map
                .iter()
                .filter(|(id, _)| keep(id))
                .map(|(id, keys)| (id.clone(), keys.clone()))
                .collect(),
        }
    }
}

pub fn parse_gold(text: &str) -> Result<GoldKeys, DataError> {
    let mut map = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let id = fields.next().expect("trimmed non-empty line has a field");
        let mut keys: Vec<String> = Vec::new();
        for key in fields {
            if !keys.iter().any(|k| k == key) {
                keys.push(key.to_owned());
            }
        }
        if keys.is_empty() {
            return Err(DataError::Gold {
                line,
                msg: format!("instance {id:?} has no sense keys"),
            });
        }
        if map.insert(id.to_owned(), keys).is_some() {
            return Err(DataError::Gold {
                line,
                msg: format!("duplicate line for instance {id:?}"),
            });
        }
    }
    Ok(GoldKeys { map })
}

pub fn load_gold(path: impl AsRef<Path>) -> Result<GoldKeys, DataError> {
    parse_gold(&fs::read_to_string(path)?)
}

/// Render sorted by instance id so output is reproducible.
pub fn serialize_gold(gold: &GoldKeys) -> String {
    let mut ids: Vec<&str> = gold.map.keys().map(String::as_str).collect();
    ids.sort_unstable();
    let mut out = String::new();
    for id in ids {
        write!(out, "{id}").unwrap();
        for key in &gold.map[id] {
            write!(out, " {key}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_key_line() {
        let g = parse_gold("d0.s0.t0 key%1:00:00::\n").unwrap();
        assert_eq!(g.get("d0.s0.t0").unwrap(), ["key%1:00:00::"]);
    }

    #[test]
    fn multiple_keys_and_comments() {
        let g = parse_gold("# header\n\ni1 a%1 b%2\n   # indented comment\ni2 c%1\n").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.get("i1").unwrap(), ["a%1", "b%2"]);
    }

    #[test]
    fn repeated_key_on_one_line_collapses() {
        let g = parse_gold("i1 a%1 a%1\n").unwrap();
        assert_eq!(g.get("i1").unwrap(), ["a%1"]);
    }

    #[test]
    fn empty_key_set_is_rejected() {
        let err = parse_gold("i1\n").unwrap_err();
        assert!(matches!(err, DataError::Gold { line: 1, .. }));
    }

    #[test]
    fn duplicate_instance_line_is_rejected() {
        let err = parse_gold("i1 a%1\ni1 b%1\n").unwrap_err();
        assert!(matches!(err, DataError::Gold { line: 2, .. }));
    }

    #[test]
    fn serialization_round_trips() {
        let g = parse_gold("b a%1 a%2\na c%1\n").unwrap();
        let text = serialize_gold(&g);
        assert_eq!(text, "a c%1\nb a%1 a%2\n");
        assert_eq!(parse_gold(&text).unwrap(), g);
    }
}
