//! The annotated-corpus XML format.
//!
//! Grammar: `<corpus>` holds `<text id>`, which holds `<sentence id>`,
//! whose children are `<wf lemma pos>surface</wf>` or
//! `<instance id lemma pos>surface</instance>`.

use std::collections::HashSet;
use std::ops::Range;

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{DataError, Pos};

/// One surface token. `instance` carries the annotation id when the token
/// is a disambiguation target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub surface: String,
    pub lemma: String,
    pub pos: Pos,
    pub instance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub words: Vec<Word>,
}

/// A `<text>` block, addressing its sentences by range into the flat list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextBlock {
    pub id: String,
    pub sentences: Range<usize>,
}

/// A disambiguation target, locating the annotated word in the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: String,
    pub lemma: String,
    pub pos: Pos,
    pub sentence: usize,
    pub word: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnnotatedCorpus {
    pub texts: Vec<TextBlock>,
    pub sentences: Vec<Sentence>,
    instances: Vec<Instance>,
}

impl AnnotatedCorpus {
    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    /// Rebuild the instance list from the sentences. Used after assembling
    /// a corpus programmatically; `parse_corpus` maintains it itself.
    pub fn from_parts(texts: Vec<TextBlock>, sentences: Vec<Sentence>) -> Self {
        let mut instances = Vec::new();
        for (si, sent) in sentences.iter().enumerate() {
            for (wi, word) in sent.words.iter().enumerate() {
                if let Some(id) = &word.instance {
                    instances.push(Instance {
                        id: id.clone(),
                        lemma: word.lemma.clone(),
                        pos: word.pos,
                        sentence: si,
                        word: wi,
                    });
                }
            }
        }
        AnnotatedCorpus {
            texts,
            sentences,
            instances,
        }
    }
}

fn line_of(xml: &str, byte_offset: usize) -> usize {
    let end = byte_offset.min(xml.len());
    xml[..end].bytes().filter(|&b| b == b'\n').count() + 1
}

fn fail(xml: &str, offset: usize, msg: impl Into<String>) -> DataError {
    DataError::Corpus {
        line: line_of(xml, offset),
        msg: msg.into(),
    }
}

fn attr_of(e: &BytesStart, name: &[u8]) -> Result<Option<String>, String> {
    for a in e.attributes() {
        let a = a.map_err(|e| e.to_string())?;
        if a.key.as_ref() == name {
            let v = a.unescape_value().map_err(|e| e.to_string())?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

fn required_attr(e: &BytesStart, name: &'static str) -> Result<String, String> {
    attr_of(e, name.as_bytes())?.ok_or_else(|| {
        format!(
            "<{}> is missing the {name} attribute",
            String::from_utf8_lossy(e.name().as_ref())
        )
    })
}

#[derive(PartialEq)]
enum State {
    Top,
    InCorpus,
    InText,
    InSentence,
    InToken,
    Done,
}

struct PendingToken {
    tag: &'static str,
    id: Option<String>,
    lemma: String,
    pos: Pos,
    surface: String,
}

pub fn parse_corpus(xml: &str) -> Result<AnnotatedCorpus, DataError> {
    let mut reader = Reader::from_str(xml);
    reader.config_mut().trim_text(true);

    let mut state = State::Top;
    let mut texts: Vec<TextBlock> = Vec::new();
    let mut sentences: Vec<Sentence> = Vec::new();
    let mut instances: Vec<Instance> = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut text_id: Option<String> = None;
    let mut text_start = 0usize;
    let mut sentence: Option<Sentence> = None;
    let mut token: Option<PendingToken> = None;

    loop {
        let event = reader
            .read_event()
            .map_err(|e| fail(xml, reader.buffer_position() as usize, e.to_string()))?;
        // position just past the event, which lands on the event's own line
        let pos = reader.buffer_position() as usize;
        match event {
            Event::Start(e) => {
                let name = e.name();
                match (name.as_ref(), &state) {
                    (b"corpus", State::Top) => state = State::InCorpus,
                    (b"text", State::InCorpus) => {
                        let id = required_attr(&e, "id").map_err(|m| fail(xml, pos, m))?;
                        text_id = Some(id);
                        text_start = sentences.len();
                        state = State::InText;
                    }
                    (b"sentence", State::InText) => {
                        let id = required_attr(&e, "id").map_err(|m| fail(xml, pos, m))?;
                        sentence = Some(Sentence { id, words: Vec::new() });
                        state = State::InSentence;
                    }
                    (b"wf", State::InSentence) | (b"instance", State::InSentence) => {
                        let is_instance = name.as_ref() == b"instance";
                        let id = if is_instance {
                            let id = required_attr(&e, "id").map_err(|m| fail(xml, pos, m))?;
                            if !seen_ids.insert(id.clone()) {
                                return Err(fail(xml, pos, format!("duplicate instance id {id:?}")));
                            }
                            Some(id)
                        } else {
                            None
                        };
                        let lemma = required_attr(&e, "lemma").map_err(|m| fail(xml, pos, m))?;
                        let pos_attr = required_attr(&e, "pos").map_err(|m| fail(xml, pos, m))?;
                        let pos_tag: Pos = pos_attr.parse().map_err(|m: String| fail(xml, pos, m))?;
                        token = Some(PendingToken {
                            tag: if is_instance { "instance" } else { "wf" },
                            id,
                            lemma,
                            pos: pos_tag,
                            surface: String::new(),
                        });
                        state = State::InToken;
                    }
                    (other, _) => {
                        return Err(fail(
                            xml,
                            pos,
                            format!("unexpected <{}>", String::from_utf8_lossy(other)),
                        ));
                    }
                }
            }
            Event::Text(t) => {
                let text = t.unescape().map_err(|e| fail(xml, pos, e.to_string()))?;
                match &mut token {
                    Some(tok) => tok.surface.push_str(&text),
                    None => return Err(fail(xml, pos, format!("stray text {:?}", text.as_ref()))),
                }
            }
            Event::End(e) => {
                let name = e.name();
                match (name.as_ref(), &state) {
                    (b"wf", State::InToken) | (b"instance", State::InToken) => {
                        let tok = token.take().expect("token open in InToken state");
                        if tok.tag.as_bytes() != name.as_ref() {
                            return Err(fail(xml, pos, format!("mismatched </{}>", tok.tag)));
                        }
                        if tok.surface.is_empty() {
                            return Err(fail(xml, pos, format!("<{}> has empty surface text", tok.tag)));
                        }
                        let sent = sentence.as_mut().expect("sentence open in InToken state");
                        if let Some(id) = &tok.id {
                            instances.push(Instance {
                                id: id.clone(),
                                lemma: tok.lemma.clone(),
                                pos: tok.pos,
                                sentence: sentences.len(),
                                word: sent.words.len(),
                            });
                        }
                        sent.words.push(Word {
                            surface: tok.surface,
                            lemma: tok.lemma,
                            pos: tok.pos,
                            instance: tok.id,
                        });
                        state = State::InSentence;
                    }
                    (b"sentence", State::InSentence) => {
                        sentences.push(sentence.take().expect("sentence open"));
                        state = State::InText;
                    }
                    (b"text", State::InText) => {
                        texts.push(TextBlock {
                            id: text_id.take().expect("text open"),
                            sentences: text_start..sentences.len(),
                        });
                        state = State::InCorpus;
                    }
                    (b"corpus", State::InCorpus) => state = State::Done,
                    (other, _) => {
                        return Err(fail(
                            xml,
                            pos,
                            format!("unexpected </{}>", String::from_utf8_lossy(other)),
                        ));
                    }
                }
            }
            Event::Empty(e) => {
                return Err(fail(
                    xml,
                    pos,
                    format!(
                        "self-closing <{}/> carries no surface text",
                        String::from_utf8_lossy(e.name().as_ref())
                    ),
                ));
            }
            Event::Eof => {
                if state != State::Done {
                    return Err(fail(xml, pos, "unexpected end of document"));
                }
                break;
            }
            Event::Decl(_) | Event::Comment(_) => {}
            Event::CData(_) | Event::PI(_) | Event::DocType(_) => {
                return Err(fail(xml, pos, "unsupported markup"));
            }
        }
    }
    Ok(AnnotatedCorpus {
        texts,
        sentences,
        instances,
    })
}

pub fn serialize_corpus(corpus: &AnnotatedCorpus) -> String {
    let mut out = String::from("<corpus>\n");
    for text in &corpus.texts {
        out.push_str(&format!("<text id=\"{}\">\n", escape(&text.id)));
        for sent in &corpus.sentences[text.sentences.clone()] {
            out.push_str(&format!("<sentence id=\"{}\">\n", escape(&sent.id)));
            for w in &sent.words {
                match &w.instance {
                    Some(id) => out.push_str(&format!(
                        "<instance id=\"{}\" lemma=\"{}\" pos=\"{}\">{}</instance>\n",
                        escape(id),
                        escape(&w.lemma),
                        w.pos,
                        escape(&w.surface)
                    )),
                    None => out.push_str(&format!(
                        "<wf lemma=\"{}\" pos=\"{}\">{}</wf>\n",
                        escape(&w.lemma),
                        w.pos,
                        escape(&w.surface)
                    )),
                }
            }
            out.push_str("</sentence>\n");
        }
        out.push_str("</text>\n");
    }
    out.push_str("</corpus>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_document_parses() {
        let xml = r#"<corpus><text id="d0"><sentence id="s0">
            <wf lemma="the" pos="ADV">The</wf>
            <instance id="d0.s0.t1" lemma="bank" pos="NOUN">banks</instance>
        </sentence></text></corpus>"#;
        let c = parse_corpus(xml).unwrap();
        assert_eq!(c.sentences.len(), 1);
        assert_eq!(c.instances().len(), 1);
        let inst = &c.instances()[0];
        assert_eq!(inst.id, "d0.s0.t1");
        assert_eq!(inst.lemma, "bank");
        assert_eq!(inst.pos, Pos::Noun);
        assert_eq!(inst.sentence, 0);
        assert_eq!(inst.word, 1);
        // the index points at the instance's own surface token
        assert_eq!(c.sentences[0].words[inst.word].surface, "banks");
    }

    #[test]
    fn duplicate_instance_id_is_rejected_with_line() {
        let xml = "<corpus><text id=\"d0\"><sentence id=\"s0\">\n<instance id=\"x\" lemma=\"a\" pos=\"NOUN\">a</instance>\n<instance id=\"x\" lemma=\"b\" pos=\"NOUN\">b</instance>\n</sentence></text></corpus>";
        match parse_corpus(xml) {
            Err(DataError::Corpus { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("duplicate"));
            }
            other => panic!("expected corpus error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_pos_is_rejected() {
        let xml = r#"<corpus><text id="d0"><sentence id="s0">
            <wf lemma="the" pos="DET">the</wf>
        </sentence></text></corpus>"#;
        let err = parse_corpus(xml).unwrap_err();
        assert!(err.to_string().contains("unknown pos"));
    }

    #[test]
    fn truncated_document_is_rejected() {
        let xml = r#"<corpus><text id="d0"><sentence id="s0">"#;
        assert!(parse_corpus(xml).is_err());
    }

    #[test]
    fn unexpected_tag_is_rejected() {
        let xml = r#"<corpus><paragraph></paragraph></corpus>"#;
        let err = parse_corpus(xml).unwrap_err();
        assert!(err.to_string().contains("unexpected <paragraph>"));
    }

    #[test]
    fn escaped_content_round_trips() {
        let xml = r#"<corpus><text id="d&amp;0"><sentence id="s0">
            <wf lemma="at&amp;t" pos="NOUN">AT&amp;T</wf>
            <instance id="i0" lemma="&lt;odd&gt;" pos="VERB">&lt;odd&gt;</instance>
        </sentence></text></corpus>"#;
        let c = parse_corpus(xml).unwrap();
        assert_eq!(c.sentences[0].words[0].surface, "AT&T");
        assert_eq!(c.sentences[0].words[1].lemma, "<odd>");
        let again = parse_corpus(&serialize_corpus(&c)).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn multiple_texts_keep_sentence_ranges() {
        let xml = r#"<corpus>
            <text id="d0"><sentence id="s0"><wf lemma="a" pos="NOUN">a</wf></sentence></text>
            <text id="d1">
                <sentence id="s1"><wf lemma="b" pos="NOUN">b</wf></sentence>
                <sentence id="s2"><wf lemma="c" pos="NOUN">c</wf></sentence>
            </text>
        </corpus>"#;
        let c = parse_corpus(xml).unwrap();
        assert_eq!(c.texts.len(), 2);
        assert_eq!(c.texts[0].sentences, 0..1);
        assert_eq!(c.texts[1].sentences, 1..3);
    }

    proptest! {
        /// parse ∘ serialize ∘ parse is the identity on parsed corpora.
        #[test]
        fn round_trip_is_identity(
            lemmas in proptest::collection::vec("[a-z]{1,8}", 1..6),
            mark in proptest::collection::vec(any::<bool>(), 6),
        ) {
            let mut words = String::new();
            let mut n = 0;
            for (i, lemma) in lemmas.iter().enumerate() {
                let pos = Pos::ALL[i % 4];
                if mark[i % mark.len()] {
                    words += &format!("<instance id=\"i{n}\" lemma=\"{lemma}\" pos=\"{pos}\">{lemma}s</instance>");
                    n += 1;
                } else {
                    words += &format!("<wf lemma=\"{lemma}\" pos=\"{pos}\">{lemma}</wf>");
                }
            }
            let xml = format!(
                "<corpus><text id=\"d0\"><sentence id=\"s0\">{words}</sentence></text></corpus>"
            );
            let once = parse_corpus(&xml).unwrap();
            let twice = parse_corpus(&serialize_corpus(&once)).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
