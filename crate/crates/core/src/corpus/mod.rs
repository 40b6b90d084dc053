//! Sentences, the 13-tag BIO scheme, and everything that produces or rewrites
//! tagged data: CoNLL I/O, validation/repair, augmentation and synthesis.

mod augment;
mod conll;
mod synth;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GainError, Result};
use crate::gazetteer::FeatureMatrix;

pub use augment::augment_replace;
pub use conll::{parse_conll, serialize_conll, BioMode};
pub use synth::{
    low_context_templates, rich_context_templates, synth_corpus, ContextMode, SynthOutput,
    SynthSpec, Template, TemplatePart,
};

/// Number of BIO tags: `O` plus a B/I pair for each of the six entity types.
pub const NUM_TAGS: usize = 13;
/// Number of entity types.
pub const NUM_TYPES: usize = 6;

/// The six coarse entity types, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityType {
    #[serde(rename = "PER")]
    Per,
    #[serde(rename = "LOC")]
    Loc,
    #[serde(rename = "GRP")]
    Grp,
    #[serde(rename = "CORP")]
    Corp,
    #[serde(rename = "PROD")]
    Prod,
    #[serde(rename = "CW")]
    Cw,
}

impl EntityType {
    pub const ALL: [EntityType; NUM_TYPES] = [
        EntityType::Per,
        EntityType::Loc,
        EntityType::Grp,
        EntityType::Corp,
        EntityType::Prod,
        EntityType::Cw,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<EntityType> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        TagScheme::ENTITY_TYPES[self.index()]
    }

    pub fn parse(name: &str) -> Option<EntityType> {
        TagScheme::ENTITY_TYPES
            .iter()
            .position(|n| *n == name)
            .map(|i| Self::ALL[i])
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The fixed tag inventory. Index 0 is `O`; `1 + 2k` is `B-type_k` and
/// `2 + 2k` is `I-type_k`.
pub struct TagScheme;

impl TagScheme {
    pub const TAGS: [&'static str; NUM_TAGS] = [
        "O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-GRP", "I-GRP", "B-CORP", "I-CORP", "B-PROD",
        "I-PROD", "B-CW", "I-CW",
    ];
    pub const ENTITY_TYPES: [&'static str; NUM_TYPES] = ["PER", "LOC", "GRP", "CORP", "PROD", "CW"];
}

/// A tag index in `0..13`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Tag(u8);

impl Tag {
    pub const O: Tag = Tag(0);

    pub fn new(index: usize) -> Result<Tag> {
        if index < NUM_TAGS {
            Ok(Tag(index as u8))
        } else {
            Err(GainError::Data(format!("tag index {index} outside 0..{NUM_TAGS}")))
        }
    }

    pub fn begin(t: EntityType) -> Tag {
        Tag(1 + 2 * t.index() as u8)
    }

    pub fn inside(t: EntityType) -> Tag {
        Tag(2 + 2 * t.index() as u8)
    }

    pub fn parse(name: &str) -> Option<Tag> {
        TagScheme::TAGS.iter().position(|n| *n == name).map(|i| Tag(i as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        TagScheme::TAGS[self.index()]
    }

    pub fn is_outside(self) -> bool {
        self.0 == 0
    }

    pub fn is_begin(self) -> bool {
        self.0 % 2 == 1
    }

    pub fn is_inside(self) -> bool {
        self.0 != 0 && self.0 % 2 == 0
    }

    pub fn entity_type(self) -> Option<EntityType> {
        if self.0 == 0 {
            None
        } else {
            EntityType::from_index((self.index() - 1) / 2)
        }
    }
}

impl TryFrom<usize> for Tag {
    type Error = GainError;
    fn try_from(i: usize) -> Result<Tag> {
        Tag::new(i)
    }
}

impl From<Tag> for usize {
    fn from(t: Tag) -> usize {
        t.index()
    }
}

impl TryFrom<String> for Tag {
    type Error = GainError;
    fn try_from(name: String) -> Result<Tag> {
        Tag::parse(&name).ok_or_else(|| GainError::Data(format!("unknown tag {name:?}")))
    }
}

impl From<Tag> for String {
    fn from(t: Tag) -> String {
        t.name().to_string()
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses a whitespace-separated list of tag names, e.g. `"O B-PER I-PER"`.
pub fn parse_tags(names: &str) -> Result<Vec<Tag>> {
    names
        .split_whitespace()
        .map(|n| Tag::parse(n).ok_or_else(|| GainError::Data(format!("unknown tag {n:?}"))))
        .collect()
}

/// One tokenised, tagged sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, tags: Vec<Tag>) -> Result<Sentence> {
        if tokens.len() != tags.len() {
            return Err(GainError::Data(format!(
                "{} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        Ok(Sentence { tokens, tags })
    }

    /// Sentence with every token tagged `O`.
    pub fn untagged(tokens: Vec<String>) -> Sentence {
        let tags = vec![Tag::O; tokens.len()];
        Sentence { tokens, tags }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn spans(&self) -> Vec<Span> {
        entity_spans(&self.tags)
    }

    /// Surface tokens of a span.
    pub fn surface(&self, span: &Span) -> &[String] {
        &self.tokens[span.start..span.end]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub sentences: Vec<Sentence>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, sentences: Vec<Sentence>) -> Dataset {
        Dataset { name: name.into(), sentences }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Checks the per-sentence invariants, reporting the first offending sentence.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.sentences.iter().enumerate() {
            if s.tokens.len() != s.tags.len() {
                return Err(GainError::Data(format!("sentence {i}: token/tag length mismatch")));
            }
            if let Some(v) = validate_bio(&s.tags).first() {
                return Err(GainError::Data(format!("sentence {i}: {v}")));
            }
        }
        Ok(())
    }

    /// Dataset with the given sentence indices, in order.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Dataset {
        Dataset {
            name: name.into(),
            sentences: indices.iter().map(|&i| self.sentences[i].clone()).collect(),
        }
    }

    /// Concatenation of `self` followed by `other`.
    pub fn concat(&self, name: impl Into<String>, other: &Dataset) -> Dataset {
        let mut sentences = self.sentences.clone();
        sentences.extend(other.sentences.iter().cloned());
        Dataset { name: name.into(), sentences }
    }
}

/// Entity span over token positions `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub etype: EntityType,
}

impl Span {
    pub fn new(start: usize, end: usize, etype: EntityType) -> Span {
        Span { start, end, etype }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// One BIO violation: an `I-X` with no `B-X`/`I-X` right before it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BioViolation {
    pub position: usize,
    pub expected: String,
    pub found: String,
}

impl fmt::Display for BioViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "position {}: expected {} before, found {}",
            self.position, self.expected, self.found
        )
    }
}

/// Lists every BIO violation in `tags`; empty iff the sequence is valid.
pub fn validate_bio(tags: &[Tag]) -> Vec<BioViolation> {
    let mut out = Vec::new();
    for (i, &tag) in tags.iter().enumerate() {
        if !tag.is_inside() {
            continue;
        }
        let ty = tag.entity_type().expect("inside tag has a type");
        let ok = i > 0 && tags[i - 1].entity_type() == Some(ty);
        if !ok {
            let prev = if i == 0 { "sentence start" } else { tags[i - 1].name() };
            out.push(BioViolation {
                position: i,
                expected: format!("B-{ty}/I-{ty}"),
                found: format!("{prev} precedes {}", tag.name()),
            });
        }
    }
    out
}

/// Lenient repair: every orphan `I-X` becomes `B-X`.
pub fn repair_bio(tags: &mut [Tag]) {
    for i in 0..tags.len() {
        let tag = tags[i];
        if let (true, Some(ty)) = (tag.is_inside(), tag.entity_type()) {
            if i == 0 || tags[i - 1].entity_type() != Some(ty) {
                tags[i] = Tag::begin(ty);
            }
        }
    }
}

/// Maximal entity spans. `B-X` opens a span, a following `I-X` extends it.
/// An orphan `I-X` is read as if repaired to `B-X`.
pub fn entity_spans(tags: &[Tag]) -> Vec<Span> {
    let mut spans: Vec<Span> = Vec::new();
    let mut open: Option<Span> = None;
    for (i, &tag) in tags.iter().enumerate() {
        let ty = tag.entity_type();
        let extends = tag.is_inside() && open.map(|s| Some(s.etype) == ty).unwrap_or(false);
        if extends {
            if let Some(s) = open.as_mut() {
                s.end = i + 1;
            }
            continue;
        }
        if let Some(s) = open.take() {
            spans.push(s);
        }
        if let Some(ty) = ty {
            open = Some(Span::new(i, i + 1, ty));
        }
    }
    spans.extend(open);
    spans
}

/// Inverse of [`entity_spans`] for non-overlapping spans inside `0..n`.
pub fn spans_to_tags(spans: &[Span], n: usize) -> Vec<Tag> {
    let mut tags = vec![Tag::O; n];
    for s in spans {
        if s.is_empty() || s.end > n {
            continue;
        }
        tags[s.start] = Tag::begin(s.etype);
        for t in &mut tags[s.start + 1..s.end] {
            *t = Tag::inside(s.etype);
        }
    }
    tags
}

/// Gold one-hot rows: row `i` has a single 1 at column `tags[i]`.
pub fn tags_to_onehot(tags: &[Tag]) -> FeatureMatrix {
    let mut m = FeatureMatrix::zeros(tags.len());
    for (i, t) in tags.iter().enumerate() {
        m.set(i, t.index());
    }
    m
}
