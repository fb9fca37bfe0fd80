//! WordPiece segmentation with exact word-to-piece alignment.
//!
//! Disambiguation needs to find the hidden states of one particular word,
//! so every tokenized sentence carries a span per word telling where its
//! pieces landed.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const UNK: &str = "[UNK]";
pub const PAD: &str = "[PAD]";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("failed to read vocabulary: {0}")]
    Io(#[from] std::io::Error),
    #[error("duplicate piece {piece:?} at line {line}")]
    DuplicatePiece { piece: String, line: usize },
    #[error("vocabulary is missing the special piece {0:?}")]
    MissingSpecial(&'static str),
    #[error("cannot tokenize an empty sentence")]
    EmptySentence,
    #[error("max_len {0} leaves no room for [CLS] and [SEP]")]
    WindowTooSmall(usize),
    #[error("focus index {focus} out of range for {words} words")]
    FocusOutOfRange { focus: usize, words: usize },
    #[error("word {word:?} needs {pieces} pieces but the window budget is {budget}")]
    WordExceedsWindow { word: String, pieces: usize, budget: usize },
}

/// Fixed word-piece inventory. Ids are dense line numbers from the
/// vocabulary file; continuation pieces carry a literal "##" prefix.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
    cls: usize,
    sep: usize,
    unk: usize,
    pad: usize,
}

impl Vocabulary {
    pub fn from_lines<I, T>(lines: I) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let mut pieces = Vec::new();
        let mut index = HashMap::new();
        for (line, piece) in lines.into_iter().enumerate() {
            let piece = piece.into();
            if index.insert(piece.clone(), pieces.len()).is_some() {
                return Err(TokenizerError::DuplicatePiece { piece, line: line + 1 });
            }
            pieces.push(piece);
        }
        let special = |name: &'static str| {
            index
                .get(name)
                .copied()
                .ok_or(TokenizerError::MissingSpecial(name))
        };
        Ok(Vocabulary {
            cls: special(CLS)?,
            sep: special(SEP)?,
            unk: special(UNK)?,
            pad: special(PAD)?,
            pieces,
            index,
        })
    }

    /// Load from a UTF-8 file, one piece per line, line number = id.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let text = fs::read_to_string(path)?;
        Self::from_lines(text.lines().map(str::to_owned))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        let mut out = String::new();
        for p in &self.pieces {
            out.push_str(p);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: usize) -> &str {
        &self.pieces[id]
    }

    pub fn cls_id(&self) -> usize {
        self.cls
    }

    pub fn sep_id(&self) -> usize {
        self.sep
    }

    pub fn unk_id(&self) -> usize {
        self.unk
    }

    pub fn pad_id(&self) -> usize {
        self.pad
    }

    /// Greedy longest-match-first segmentation. Fragments after the first
    /// must match with their "##" prefix; if any fragment has no match the
    /// whole word collapses to [UNK]. Total and deterministic.
    ///
    /// Callers pass words already lowercased; matching is literal.
    pub fn tokenize_word(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut matched = None;
            for end in (start + 1..=chars.len()).rev() {
                let fragment: String = chars[start..end].iter().collect();
                let candidate = if start == 0 { fragment } else { format!("##{fragment}") };
                if self.index.contains_key(&candidate) {
                    matched = Some((candidate, end));
                    break;
                }
            }
            match matched {
                Some((piece, end)) => {
                    out.push(piece);
                    start = end;
                }
                None => return vec![UNK.to_owned()],
            }
        }
        out
    }

    /// Tokenize a whole sentence into `[CLS] pieces... [SEP]`, windowing
    /// around `focus` (a word index) when the pieces exceed `max_len`.
    /// Words are lowercased here, per corpus normalization.
    pub fn tokenize_sentence(
        &self,
        words: &[String],
        focus: Option<usize>,
        max_len: usize,
    ) -> Result<TokenizedSentence, TokenizerError> {
        if words.is_empty() {
            return Err(TokenizerError::EmptySentence);
        }
        if max_len < 3 {
            return Err(TokenizerError::WindowTooSmall(max_len));
        }
        if let Some(f) = focus {
            if f >= words.len() {
                return Err(TokenizerError::FocusOutOfRange {
                    focus: f,
                    words: words.len(),
                });
            }
        }
        let lowered: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
        let piece_lists: Vec<Vec<usize>> = lowered
            .iter()
            .map(|w| {
                self.tokenize_word(w)
                    .iter()
                    .map(|p| self.index[p])
                    .collect()
            })
            .collect();
        let total: usize = piece_lists.iter().map(Vec::len).sum();
        let budget = max_len - 2;

        let (first, last) = if total <= budget {
            (0, words.len() - 1)
        } else {
            let f = focus.unwrap_or(0);
            if piece_lists[f].len() > budget {
                return Err(TokenizerError::WordExceedsWindow {
                    word: lowered[f].clone(),
                    pieces: piece_lists[f].len(),
                    budget,
                });
            }
            // Grow word by word from the focus, keeping the window balanced.
            // Ties extend rightward, toward following context.
            let (mut first, mut last) = (f, f);
            let mut used = piece_lists[f].len();
            loop {
                let can_left = first > 0 && used + piece_lists[first - 1].len() <= budget;
                let can_right = last + 1 < words.len() && used + piece_lists[last + 1].len() <= budget;
                if can_right && (last - f <= f - first || !can_left) {
                    last += 1;
                    used += piece_lists[last].len();
                } else if can_left {
                    first -= 1;
                    used += piece_lists[first].len();
                } else {
                    break;
                }
            }
            (first, last)
        };

        let mut piece_ids = vec![self.cls];
        let mut spans = Vec::with_capacity(last - first + 1);
        for list in &piece_lists[first..=last] {
            spans.push(Span {
                start: piece_ids.len(),
                len: list.len(),
            });
            piece_ids.extend_from_slice(list);
        }
        piece_ids.push(self.sep);
        Ok(TokenizedSentence {
            words: lowered,
            piece_ids,
            window_start: first,
            spans,
        })
    }
}

/// Position of one word's pieces inside `piece_ids`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

/// A sentence rendered to piece ids, `[CLS]` first and `[SEP]` last, with
/// one span per window word. When no truncation happened the window covers
/// every word.
#[derive(Debug, Clone)]
pub struct TokenizedSentence {
    pub words: Vec<String>,
    pub piece_ids: Vec<usize>,
    window_start: usize,
    spans: Vec<Span>,
}

impl TokenizedSentence {
    /// Piece span of the given original word index, if it survived
    /// truncation.
    pub fn span_of(&self, word: usize) -> Option<Span> {
        word.checked_sub(self.window_start)
            .and_then(|i| self.spans.get(i))
            .copied()
    }

    /// Spans of the window words, in order.
    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    /// Index of the first word included in the window.
    pub fn window_start(&self) -> usize {
        self.window_start
    }

    pub fn len(&self) -> usize {
        self.piece_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.piece_ids.is_empty()
    }
}
