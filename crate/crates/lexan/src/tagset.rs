//! Tag inventory and the IOB2 label space.
//!
//! A tag is a word-level category (POS or named-entity type). Every tag `t`
//! expands to two character-level labels, `t-B` and `t-I`; there is no "O"
//! label because every character belongs to some word. The label space also
//! carries the legality masks used by constrained decoding:
//!
//! * a sequence may only start with a B-label;
//! * an I-label may only follow a B- or I-label of the same tag.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// Tag codes that mark low-confidence named-entity variants in the default
/// scheme. They are ordinary POS tags for evaluation purposes unless the
/// caller opts in to counting them as entity mentions.
pub const LOW_CONFIDENCE_NE_CODES: [&str; 4] = ["nr", "ns", "nt", "t"];

/// One word-level tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tag {
    pub code: String,
    pub is_named_entity: bool,
    pub description: String,
}

impl Tag {
    pub fn new(code: &str, is_named_entity: bool, description: &str) -> Self {
        Tag {
            code: code.to_string(),
            is_named_entity,
            description: description.to_string(),
        }
    }
}

/// Position of a character within its word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Position {
    B,
    I,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Position::B => write!(f, "B"),
            Position::I => write!(f, "I"),
        }
    }
}

/// A character-level label: a tag paired with a position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Label {
    pub tag_index: usize,
    pub position: Position,
}

/// The full label space for one tag scheme, with start and transition
/// legality masks. Immutable after construction.
///
/// Labels are ordered canonically: tags in scheme order, B before I, so
/// label `2k` is tag `k`'s B-label and `2k + 1` its I-label. Serialized
/// models rely on this ordering.
#[derive(Clone, Debug)]
pub struct LabelSpace {
    tags: Vec<Tag>,
    labels: Vec<Label>,
    tag_index: HashMap<String, usize>,
    start_mask: Vec<bool>,
    transition_mask: Vec<bool>, // L*L, row-major [from][to]
}

/// The 28-tag default scheme.
pub fn default_tags() -> Vec<Tag> {
    vec![
        Tag::new("n", false, "Noun"),
        Tag::new("PER", true, "Person"),
        Tag::new("nr", false, "Person (low confidence)"),
        Tag::new("LOC", true, "Location"),
        Tag::new("ns", false, "Location (low confidence)"),
        Tag::new("ORG", true, "Organization"),
        Tag::new("nt", false, "Organization (low confidence)"),
        Tag::new("nw", false, "Artwork"),
        Tag::new("nz", false, "Other proper noun"),
        Tag::new("TIME", true, "Time"),
        Tag::new("t", false, "Time (low confidence)"),
        Tag::new("f", false, "Orientation word"),
        Tag::new("s", false, "Locative word"),
        Tag::new("v", false, "Verb"),
        Tag::new("vd", false, "Verb used as an adverb"),
        Tag::new("vn", false, "Verb used as a noun"),
        Tag::new("a", false, "Adjective"),
        Tag::new("ad", false, "Adjective used as an adverb"),
        Tag::new("an", false, "Adjective used as a noun"),
        Tag::new("d", false, "Adverb"),
        Tag::new("m", false, "Numeral / numeral-measure compound"),
        Tag::new("q", false, "Measure word"),
        Tag::new("p", false, "Preposition"),
        Tag::new("c", false, "Conjunction"),
        Tag::new("r", false, "Pronoun"),
        Tag::new("u", false, "Auxiliary"),
        Tag::new("xc", false, "Other function word"),
        Tag::new("w", false, "Punctuation"),
    ]
}

/// Builds the label space for a tag list. Fails on empty input or a
/// duplicate tag code.
pub fn build_label_space(tags: Vec<Tag>) -> Result<LabelSpace> {
    if tags.is_empty() {
        return Err(Error::Scheme("tag list is empty".into()));
    }
    let mut tag_index = HashMap::new();
    for (i, tag) in tags.iter().enumerate() {
        if tag.code.is_empty() {
            return Err(Error::Scheme("empty tag code".into()));
        }
        if tag_index.insert(tag.code.clone(), i).is_some() {
            return Err(Error::Scheme(format!("duplicate tag code `{}`", tag.code)));
        }
    }

    let n = tags.len();
    let len = 2 * n;
    let mut labels = Vec::with_capacity(len);
    for t in 0..n {
        labels.push(Label { tag_index: t, position: Position::B });
        labels.push(Label { tag_index: t, position: Position::I });
    }

    let start_mask: Vec<bool> = labels.iter().map(|l| l.position == Position::B).collect();
    let mut transition_mask = vec![false; len * len];
    for from in 0..len {
        for to in 0..len {
            let legal = labels[to].position == Position::B
                || labels[from].tag_index == labels[to].tag_index;
            transition_mask[from * len + to] = legal;
        }
    }

    Ok(LabelSpace { tags, labels, tag_index, start_mask, transition_mask })
}

impl LabelSpace {
    /// Label space over the default 28-tag scheme (56 labels).
    pub fn default_scheme() -> Self {
        build_label_space(default_tags()).expect("builtin scheme is valid")
    }

    /// Number of labels (twice the tag count).
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn tag(&self, index: usize) -> &Tag {
        &self.tags[index]
    }

    pub fn tag_id(&self, code: &str) -> Option<usize> {
        self.tag_index.get(code).copied()
    }

    /// Label id for a tag code and position.
    pub fn label_id(&self, code: &str, position: Position) -> Option<usize> {
        self.tag_id(code).map(|t| 2 * t + (position == Position::I) as usize)
    }

    pub fn label(&self, id: usize) -> Result<&Label> {
        self.labels.get(id).ok_or(Error::LabelOutOfRange { id, count: self.labels.len() })
    }

    /// `"LOC-B"`-style display name of a label.
    pub fn label_name(&self, id: usize) -> String {
        let l = &self.labels[id];
        format!("{}-{}", self.tags[l.tag_index].code, l.position)
    }

    pub fn start_mask(&self) -> &[bool] {
        &self.start_mask
    }

    /// Row-major `[from][to]` transition legality, length `L*L`.
    pub fn transition_mask(&self) -> &[bool] {
        &self.transition_mask
    }

    /// True iff a sequence may begin with label `id`.
    pub fn is_start_allowed(&self, id: usize) -> Result<bool> {
        self.label(id)?;
        Ok(self.start_mask[id])
    }

    /// True iff label `to` may directly follow label `from`.
    pub fn is_transition_allowed(&self, from: usize, to: usize) -> Result<bool> {
        self.label(from)?;
        self.label(to)?;
        Ok(self.transition_mask[from * self.labels.len() + to])
    }

    /// Converts a character-level labeling into word-level `(surface, tag)`
    /// pairs. An I-label at the start of the sentence, or one whose
    /// predecessor run carries a different tag, is repaired by treating it
    /// as B; this makes the conversion total over arbitrary (foreign)
    /// labelings. The constrained decoder never emits such sequences.
    pub fn labels_to_words(&self, chars: &[char], labels: &[usize]) -> Result<Vec<(String, String)>> {
        if chars.len() != labels.len() {
            return Err(Error::LengthMismatch(format!(
                "{} characters vs {} labels",
                chars.len(),
                labels.len()
            )));
        }
        let mut words = Vec::new();
        let mut surface = String::new();
        let mut current_tag = usize::MAX;
        for (&ch, &id) in chars.iter().zip(labels) {
            let label = self.label(id)?;
            let starts_word = label.position == Position::B || label.tag_index != current_tag;
            if starts_word && !surface.is_empty() {
                words.push((std::mem::take(&mut surface), self.tags[current_tag].code.clone()));
            }
            surface.push(ch);
            current_tag = label.tag_index;
        }
        if !surface.is_empty() {
            words.push((surface, self.tags[current_tag].code.clone()));
        }
        Ok(words)
    }
}

/// Parses a scheme file: one tag per line, `code<TAB>ne_flag<TAB>description`,
/// `#` for comments, blank lines ignored.
pub fn parse_scheme(text: &str) -> Result<Vec<Tag>> {
    let mut tags = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let code = fields.next().unwrap_or("").trim();
        let flag = fields.next().ok_or_else(|| Error::Scheme(format!(
            "line {}: expected `code<TAB>ne_flag<TAB>description`",
            lineno + 1
        )))?;
        let description = fields.next().unwrap_or("").trim();
        let is_ne = match flag.trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Scheme(format!(
                    "line {}: ne_flag must be 0 or 1, got `{}`",
                    lineno + 1,
                    other
                )))
            }
        };
        tags.push(Tag::new(code, is_ne, description));
    }
    if tags.is_empty() {
        return Err(Error::Scheme("scheme file contains no tags".into()));
    }
    Ok(tags)
}

/// Serializes a tag list in the scheme file format.
pub fn format_scheme(tags: &[Tag]) -> String {
    let mut out = String::new();
    for t in tags {
        out.push_str(&t.code);
        out.push('\t');
        out.push(if t.is_named_entity { '1' } else { '0' });
        out.push('\t');
        out.push_str(&t.description);
        out.push('\n');
    }
    out
}
