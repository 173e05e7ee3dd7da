//! Annotated-text formats, word/character-level conversion and vocabulary
//! construction.
//!
//! The on-disk corpus format is UTF-8 text, one sentence per line, words as
//! `surface/tag` tokens separated by spaces. A token splits at its *last*
//! slash, so surfaces may contain slashes (`1/2/m`). Characters are Unicode
//! scalar values throughout; no grapheme clustering.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tagset::{LabelSpace, Position};

/// One analyzed word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Word {
    pub surface: String,
    pub tag: String,
}

/// A sentence as a list of tagged words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordSentence {
    pub words: Vec<Word>,
}

impl WordSentence {
    pub fn new(words: Vec<(&str, &str)>) -> Self {
        WordSentence {
            words: words
                .into_iter()
                .map(|(surface, tag)| Word { surface: surface.into(), tag: tag.into() })
                .collect(),
        }
    }

    /// All characters of the sentence in order.
    pub fn chars(&self) -> Vec<char> {
        self.words.iter().flat_map(|w| w.surface.chars()).collect()
    }

    pub fn char_len(&self) -> usize {
        self.words.iter().map(|w| w.surface.chars().count()).sum()
    }
}

/// A sentence as characters with one label id per character.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharSentence {
    pub chars: Vec<char>,
    pub labels: Vec<usize>,
}

/// Where a corpus's annotations came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceKind {
    Machine,
    Human,
}

impl SourceKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "machine" => Ok(SourceKind::Machine),
            "human" => Ok(SourceKind::Human),
            other => Err(Error::Corpus(format!("unknown source kind `{other}`"))),
        }
    }
}

/// One named corpus.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub name: String,
    pub kind: SourceKind,
    pub sentences: Vec<WordSentence>,
}

/// The multi-corpus training set.
#[derive(Clone, Debug)]
pub struct CorpusSet {
    pub corpora: Vec<Corpus>,
}

impl CorpusSet {
    pub fn new(corpora: Vec<Corpus>) -> Result<Self> {
        if corpora.is_empty() {
            return Err(Error::Corpus("training set contains no corpora".into()));
        }
        Ok(CorpusSet { corpora })
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.corpora.iter().map(|c| c.sentences.len()).collect()
    }

    /// Sentences of all human-annotated corpora.
    pub fn human_sentences(&self) -> Vec<&WordSentence> {
        self.corpora
            .iter()
            .filter(|c| c.kind == SourceKind::Human)
            .flat_map(|c| c.sentences.iter())
            .collect()
    }
}

/// Character-to-id map with the reserved UNK (0) and PAD (1) entries.
/// Real characters get dense ids starting at 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    map: HashMap<char, usize>,
    chars: Vec<char>,
}

pub const UNK_ID: usize = crate::network::UNK_ID;
pub const PAD_ID: usize = crate::network::PAD_ID;

impl Vocabulary {
    /// Rebuilds a vocabulary from its characters in id order (id 2 first).
    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        let mut map = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if map.insert(c, i + 2).is_some() {
                return Err(Error::Corpus(format!("duplicate vocabulary character `{c}`")));
            }
        }
        Ok(Vocabulary { map, chars })
    }

    /// Total id count including the two reserved ids.
    pub fn size(&self) -> usize {
        self.chars.len() + 2
    }

    /// Characters in id order, starting at id 2.
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Id of a character; unknown characters map to UNK.
    pub fn id(&self, c: char) -> usize {
        self.map.get(&c).copied().unwrap_or(UNK_ID)
    }

    pub fn encode(&self, chars: &[char]) -> Vec<usize> {
        chars.iter().map(|&c| self.id(c)).collect()
    }
}

/// Builds the vocabulary from every surface character in the training set.
/// Characters occurring at least `min_count` times get ids ordered by
/// frequency (descending), ties by code point, so the result is independent
/// of corpus order.
pub fn build_vocabulary(corpora: &CorpusSet, min_count: usize) -> Vocabulary {
    assert!(min_count >= 1, "min_count must be at least 1");
    let mut counts: HashMap<char, usize> = HashMap::new();
    for corpus in &corpora.corpora {
        for sentence in &corpus.sentences {
            for word in &sentence.words {
                for c in word.surface.chars() {
                    *counts.entry(c).or_insert(0) += 1;
                }
            }
        }
    }
    let mut kept: Vec<(char, usize)> =
        counts.into_iter().filter(|&(_, n)| n >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Vocabulary::from_chars(kept.into_iter().map(|(c, _)| c).collect())
        .expect("counted characters are unique")
}

/// Parses one `surface/tag` line. `line_number` is 1-based and only used
/// for error messages; the column is the 1-based character offset of the
/// offending token.
pub fn parse_tagged_line(line: &str, line_number: usize, space: &LabelSpace) -> Result<WordSentence> {
    let mut words = Vec::new();
    let mut token = String::new();
    let mut token_start = 0usize;
    let handle = |token: &str, start: usize, words: &mut Vec<Word>| -> Result<()> {
        let column = start + 1;
        let (surface, tag) = token.rsplit_once('/').ok_or(Error::Parse {
            line: line_number,
            column,
            message: format!("token `{token}` has no `/tag` separator"),
        })?;
        if surface.is_empty() {
            return Err(Error::Parse {
                line: line_number,
                column,
                message: format!("token `{token}` has an empty surface"),
            });
        }
        if space.tag_id(tag).is_none() {
            return Err(Error::Scheme(format!(
                "line {line_number}, column {column}: unknown tag `{tag}`"
            )));
        }
        words.push(Word { surface: surface.to_string(), tag: tag.to_string() });
        Ok(())
    };
    for (idx, ch) in line.chars().enumerate() {
        if ch.is_whitespace() {
            if !token.is_empty() {
                handle(&token, token_start, &mut words)?;
                token.clear();
            }
        } else {
            if token.is_empty() {
                token_start = idx;
            }
            token.push(ch);
        }
    }
    if !token.is_empty() {
        handle(&token, token_start, &mut words)?;
    }
    if words.is_empty() {
        return Err(Error::Parse {
            line: line_number,
            column: 1,
            message: "empty sentence".into(),
        });
    }
    Ok(WordSentence { words })
}

/// Serializes a sentence as `surface/tag` tokens joined by single spaces.
pub fn format_tagged_line(sentence: &WordSentence) -> String {
    sentence
        .words
        .iter()
        .map(|w| format!("{}/{}", w.surface, w.tag))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Word-level to character-level conversion: the first character of each
/// word gets the tag's B-label, the rest its I-label.
pub fn to_iob2(sentence: &WordSentence, space: &LabelSpace) -> Result<CharSentence> {
    let mut chars = Vec::with_capacity(sentence.char_len());
    let mut labels = Vec::with_capacity(chars.capacity());
    for word in &sentence.words {
        let b = space
            .label_id(&word.tag, Position::B)
            .ok_or_else(|| Error::Scheme(format!("unknown tag `{}`", word.tag)))?;
        for (k, c) in word.surface.chars().enumerate() {
            chars.push(c);
            labels.push(if k == 0 { b } else { b + 1 });
        }
    }
    Ok(CharSentence { chars, labels })
}

/// Character-level back to word-level, applying the orphan-I repair rule.
pub fn from_iob2(sentence: &CharSentence, space: &LabelSpace) -> Result<WordSentence> {
    let words = space.labels_to_words(&sentence.chars, &sentence.labels)?;
    Ok(WordSentence {
        words: words.into_iter().map(|(surface, tag)| Word { surface, tag }).collect(),
    })
}

/// Loads a corpus file: one tagged sentence per line, blank lines skipped.
pub fn load_corpus_file(path: &Path, space: &LabelSpace) -> Result<Vec<WordSentence>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Corpus(format!("cannot read {}: {e}", path.display())))?;
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        sentences.push(parse_tagged_line(line, i + 1, space)?);
    }
    Ok(sentences)
}

/// Loads a corpus manifest: one corpus per line,
/// `name<TAB>path<TAB>source(machine|human)`, `#` comments. Relative paths
/// resolve against the manifest's directory.
pub fn load_manifest(path: &Path, space: &LabelSpace) -> Result<CorpusSet> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Corpus(format!("cannot read manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut corpora = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Corpus(format!(
                "manifest line {}: expected `name<TAB>path<TAB>source`",
                i + 1
            )));
        }
        let kind = SourceKind::parse(fields[2].trim())?;
        let corpus_path = resolve_path(base, fields[1].trim());
        let sentences = load_corpus_file(&corpus_path, space)?;
        corpora.push(Corpus { name: fields[0].trim().to_string(), kind, sentences });
    }
    CorpusSet::new(corpora)
}

fn resolve_path(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}
