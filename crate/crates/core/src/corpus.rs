//! Corpus ingestion and rule-based sentence segmentation.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

const DEFAULT_ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

/// Longest sentence, in characters, that [`segment`] will emit.
pub const MAX_SENTENCE_CHARS: usize = 2_000;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o error")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed JSON record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("document `{0}` has no text")]
    EmptyDocument(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub sentences: Vec<Sentence>,
}

impl Passage {
    /// Builds a passage from already-segmented sentence texts.
    pub fn from_sentences<S: Into<String>>(
        id: impl Into<String>,
        texts: impl IntoIterator<Item = S>,
    ) -> Self {
        let sentences = texts
            .into_iter()
            .enumerate()
            .map(|(index, t)| Sentence {
                index,
                text: t.into(),
            })
            .collect();
        Passage {
            id: id.into(),
            sentences,
        }
    }

    pub fn joined(&self) -> String {
        self.sentences
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Plaintext,
}

impl CorpusFormat {
    /// `.jsonl`/`.json` files are JSONL; everything else is plaintext.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Plaintext,
        }
    }
}

/// Streams documents from `path`. The file is read lazily, one record at a
/// time.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
) -> Result<CorpusReader<BufReader<File>>, CorpusError> {
    let file = File::open(path)?;
    Ok(CorpusReader::new(BufReader::new(file), format))
}

/// Iterator over the documents of a JSONL or plaintext corpus.
pub struct CorpusReader<R> {
    reader: R,
    format: CorpusFormat,
    line_no: usize,
    ordinal: usize,
    seen: HashSet<String>,
    done: bool,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R, format: CorpusFormat) -> Self {
        CorpusReader {
            reader,
            format,
            line_no: 0,
            ordinal: 0,
            seen: HashSet::new(),
            done: false,
        }
    }

    fn next_line(&mut self) -> Result<Option<String>, CorpusError> {
        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            return Ok(None);
        }
        self.line_no += 1;
        while buf.ends_with('\n') || buf.ends_with('\r') {
            buf.pop();
        }
        Ok(Some(buf))
    }

    fn next_jsonl(&mut self) -> Result<Option<RawDocument>, CorpusError> {
        #[derive(Deserialize)]
        struct Record {
            id: String,
            text: String,
        }
        loop {
            let Some(line) = self.next_line()? else {
                return Ok(None);
            };
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: self.line_no,
                message: e.to_string(),
            })?;
            if rec.id.is_empty() {
                return Err(CorpusError::Invalid {
                    line: self.line_no,
                    message: "empty document id".into(),
                });
            }
            if rec.text.trim().is_empty() {
                return Err(CorpusError::EmptyDocument(rec.id));
            }
            return Ok(Some(RawDocument {
                id: rec.id,
                text: rec.text,
            }));
        }
    }

    fn next_paragraph(&mut self) -> Result<Option<RawDocument>, CorpusError> {
        let mut lines: Vec<String> = Vec::new();
        loop {
            match self.next_line()? {
                None => break,
                Some(line) if line.trim().is_empty() => {
                    if !lines.is_empty() {
                        break;
                    }
                }
                Some(line) => lines.push(line),
            }
        }
        if lines.is_empty() {
            return Ok(None);
        }
        let id = format!("doc-{}", self.ordinal);
        Ok(Some(RawDocument {
            id,
            text: lines.join(" "),
        }))
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<RawDocument, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let doc = match self.format {
            CorpusFormat::Jsonl => self.next_jsonl(),
            CorpusFormat::Plaintext => self.next_paragraph(),
        };
        match doc {
            Ok(Some(doc)) => {
                if !self.seen.insert(doc.id.clone()) {
                    self.done = true;
                    return Some(Err(CorpusError::DuplicateId(doc.id)));
                }
                self.ordinal += 1;
                Some(Ok(doc))
            }
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Segmentation rules.
#[derive(Debug, Clone)]
pub struct SegmenterConfig {
    /// Lowercased abbreviations, each including its trailing period.
    abbreviations: HashSet<String>,
    pub max_sentence_chars: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig::with_abbreviations(parse_abbreviations(DEFAULT_ABBREVIATIONS))
    }
}

impl SegmenterConfig {
    pub fn with_abbreviations<I, S>(abbreviations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        SegmenterConfig {
            abbreviations: abbreviations
                .into_iter()
                .map(|a| a.as_ref().to_lowercase())
                .collect(),
            max_sentence_chars: MAX_SENTENCE_CHARS,
        }
    }

    /// Loads an abbreviation list file (one entry per line, `#` comments).
    pub fn from_file(path: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(SegmenterConfig::with_abbreviations(parse_abbreviations(
            &text,
        )))
    }

    pub fn is_abbreviation(&self, word: &str) -> bool {
        self.abbreviations.contains(&word.to_lowercase())
    }
}

fn parse_abbreviations(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Collapses every whitespace run to one space and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits a document into sentences at `.`, `!` or `?` followed by a space
/// and an uppercase letter, quote or digit, unless the word ending at the
/// punctuation is a listed abbreviation.
pub fn segment(document: &RawDocument, config: &SegmenterConfig) -> Passage {
    let text = normalize_whitespace(&document.text);
    let chars: Vec<char> = text.chars().collect();
    let mut pieces: Vec<String> = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?')
            && i + 2 < chars.len()
            && chars[i + 1] == ' '
            && starts_sentence(chars[i + 2])
        {
            let word_start = chars[start..=i]
                .iter()
                .rposition(|&ch| ch == ' ')
                .map(|p| start + p + 1)
                .unwrap_or(start);
            let word: String = chars[word_start..=i].iter().collect();
            if !config.is_abbreviation(&word) {
                pieces.push(chars[start..=i].iter().collect());
                start = i + 2;
                i = start;
                continue;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        pieces.push(chars[start..].iter().collect());
    }

    let mut sentences = Vec::new();
    for piece in pieces {
        for part in enforce_max_len(&piece, config.max_sentence_chars, &document.id) {
            sentences.push(Sentence {
                index: sentences.len(),
                text: part,
            });
        }
    }
    Passage {
        id: document.id.clone(),
        sentences,
    }
}

fn starts_sentence(c: char) -> bool {
    c.is_uppercase() || c.is_ascii_digit() || matches!(c, '"' | '\'' | '\u{201c}' | '\u{2018}')
}

/// Breaks an over-long sentence at the last space inside the limit, or
/// exactly at the limit when the run has no space.
fn enforce_max_len(sentence: &str, max: usize, doc_id: &str) -> Vec<String> {
    let chars: Vec<char> = sentence.chars().collect();
    if chars.len() <= max || max == 0 {
        return vec![sentence.to_string()];
    }
    log::warn!(
        "document `{doc_id}`: sentence of {} chars exceeds the {max}-char limit; splitting",
        chars.len()
    );
    let mut out = Vec::new();
    let mut rest = &chars[..];
    while rest.len() > max {
        let cut = rest[..=max]
            .iter()
            .rposition(|&c| c == ' ')
            .filter(|&p| p > 0);
        match cut {
            Some(p) => {
                out.push(rest[..p].iter().collect());
                rest = &rest[p + 1..];
            }
            None => {
                out.push(rest[..max].iter().collect());
                rest = &rest[max..];
            }
        }
    }
    if !rest.is_empty() {
        out.push(rest.iter().collect());
    }
    out
}

/// Loads and segments a whole corpus file.
pub fn load_passages(
    path: &Path,
    format: CorpusFormat,
    config: &SegmenterConfig,
) -> Result<Vec<Passage>, CorpusError> {
    load_corpus(path, format)?
        .map(|doc| doc.map(|d| segment(&d, config)))
        .collect()
}
