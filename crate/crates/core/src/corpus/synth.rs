//! Template-based synthetic corpora.
//!
//! Rich-context templates carry type-revealing context words and are padded
//! with filler words to 10–25 tokens. Low-context templates are short query
//! frames crossed with every entity type, so the context alone says nothing
//! about the type of the slot. With `fresh_entities`, every slot is filled
//! with a never-seen random token string that is recorded in the companion
//! gazetteer: a model can only recover the type of such an entity through the
//! gazetteer.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, EntityType, Sentence, Tag};
use crate::error::{GainError, Result};
use crate::gazetteer::{Gazetteer, Surface};
use crate::seed::rng_from;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplatePart {
    Word(String),
    Slot(EntityType),
}

/// A token template such as `"{PER} was born in {LOC}"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Template {
    parts: Vec<TemplatePart>,
}

impl Template {
    pub fn parse(text: &str) -> Result<Template> {
        let mut parts = Vec::new();
        for tok in text.split_whitespace() {
            if let Some(inner) = tok.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
                let ty = EntityType::parse(inner).ok_or_else(|| {
                    GainError::Config(format!("template {text:?}: unknown slot type {inner:?}"))
                })?;
                parts.push(TemplatePart::Slot(ty));
            } else {
                parts.push(TemplatePart::Word(tok.to_string()));
            }
        }
        let t = Template { parts };
        if t.slots().next().is_none() {
            return Err(GainError::Config(format!("template {text:?} has no slot")));
        }
        Ok(t)
    }

    pub fn parts(&self) -> &[TemplatePart] {
        &self.parts
    }

    pub fn slots(&self) -> impl Iterator<Item = EntityType> + '_ {
        self.parts.iter().filter_map(|p| match p {
            TemplatePart::Slot(t) => Some(*t),
            TemplatePart::Word(_) => None,
        })
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let words: Vec<String> = self
            .parts
            .iter()
            .map(|p| match p {
                TemplatePart::Word(w) => w.clone(),
                TemplatePart::Slot(t) => format!("{{{t}}}"),
            })
            .collect();
        f.write_str(&words.join(" "))
    }
}

impl TryFrom<String> for Template {
    type Error = GainError;
    fn try_from(s: String) -> Result<Template> {
        Template::parse(&s)
    }
}

impl From<Template> for String {
    fn from(t: Template) -> String {
        t.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// 10–25 tokens.
    Rich,
    /// 3–8 tokens.
    Low,
}

impl ContextMode {
    fn length_range(self) -> (usize, usize) {
        match self {
            ContextMode::Rich => (10, 25),
            ContextMode::Low => (3, 8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_sentences: usize,
    pub template_pool: Vec<Template>,
    pub context_mode: ContextMode,
    /// Number of distinct filler words used for padding.
    pub vocab_size: usize,
    pub seed: u64,
    /// Fill slots with fresh random strings instead of sampling the gazetteer.
    #[serde(default)]
    pub fresh_entities: bool,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// Every entity surface placed into the corpus, under its label.
    pub companion: Gazetteer,
}

const FILLER_WORDS: &[&str] = &[
    "the", "a", "of", "and", "in", "to", "was", "is", "for", "on", "with", "as", "by", "at", "from",
    "that", "this", "it", "also", "after", "before", "during", "its", "their", "which", "later",
    "early", "first", "second", "several", "many", "some", "other", "new", "old", "large", "small",
    "year", "years", "time", "part", "while", "then", "when", "where", "there", "here", "very",
    "quite", "still", "again", "often", "once", "since", "about", "around", "over", "under",
    "between", "among", "into", "through", "because", "although",
];

const SYLLABLES: &[&str] = &[
    "ka", "zo", "vi", "mur", "tel", "qua", "xen", "dro", "pli", "sor", "ba", "nek", "fu", "gri",
    "lam", "ost", "yev", "jun", "hax", "rim", "cle", "tov", "wes", "ulm",
];

fn filler(i: usize) -> String {
    FILLER_WORDS
        .get(i)
        .map(|w| w.to_string())
        .unwrap_or_else(|| format!("w{i}"))
}

fn fresh_token<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(2..=3);
    (0..n)
        .map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())])
        .collect()
}

fn fresh_surface<R: Rng>(rng: &mut R, used: &HashSet<Surface>) -> Surface {
    loop {
        let len = if rng.gen_bool(0.6) { 1 } else { 2 };
        let s: Surface = (0..len).map(|_| fresh_token(rng)).collect();
        if !used.contains(&s) {
            return s;
        }
    }
}

/// Generates a corpus from templates. Deterministic in `spec.seed`.
pub fn synth_corpus(spec: &SynthSpec, gaz: &Gazetteer) -> Result<SynthOutput> {
    if spec.template_pool.is_empty() {
        return Err(GainError::Config("empty template pool".into()));
    }
    if !spec.fresh_entities {
        for t in &spec.template_pool {
            if let Some(ty) = t.slots().find(|ty| gaz.surfaces(*ty).is_empty()) {
                return Err(GainError::Config(format!(
                    "template {t} needs {ty} entries but the gazetteer has none"
                )));
            }
        }
    }
    let (lo, hi) = spec.context_mode.length_range();
    let n_fillers = spec.vocab_size.max(1);
    let mut rng = rng_from(spec.seed);
    let mut used: HashSet<Surface> = HashSet::new();
    let mut companion = Gazetteer::new();
    let mut sentences = Vec::with_capacity(spec.n_sentences);

    for _ in 0..spec.n_sentences {
        let mut built = None;
        for _attempt in 0..50 {
            let template = &spec.template_pool[rng.gen_range(0..spec.template_pool.len())];
            let mut tokens: Vec<String> = Vec::new();
            let mut tags: Vec<Tag> = Vec::new();
            let mut placed: Vec<(Surface, EntityType)> = Vec::new();
            for part in template.parts() {
                match part {
                    TemplatePart::Word(w) => {
                        tokens.push(w.clone());
                        tags.push(Tag::O);
                    }
                    TemplatePart::Slot(ty) => {
                        let surface = if spec.fresh_entities {
                            fresh_surface(&mut rng, &used)
                        } else {
                            let pool = gaz.surfaces(*ty);
                            pool[rng.gen_range(0..pool.len())].clone()
                        };
                        tags.push(Tag::begin(*ty));
                        tags.extend(std::iter::repeat(Tag::inside(*ty)).take(surface.len() - 1));
                        tokens.extend(surface.iter().cloned());
                        placed.push((surface, *ty));
                    }
                }
            }
            if tokens.len() > hi {
                continue;
            }
            let target = rng.gen_range(lo..=hi).max(tokens.len());
            let pad = target - tokens.len();
            let before = rng.gen_range(0..=pad);
            let mut padded_tokens: Vec<String> =
                (0..before).map(|_| filler(rng.gen_range(0..n_fillers))).collect();
            let mut padded_tags = vec![Tag::O; before];
            padded_tokens.extend(tokens);
            padded_tags.extend(tags);
            for _ in before..pad {
                padded_tokens.push(filler(rng.gen_range(0..n_fillers)));
                padded_tags.push(Tag::O);
            }
            built = Some((Sentence { tokens: padded_tokens, tags: padded_tags }, placed));
            break;
        }
        let (sentence, placed) = built.ok_or_else(|| {
            GainError::Config(format!("no template fits the {lo}..={hi} token range"))
        })?;
        for (surface, ty) in placed {
            if spec.fresh_entities {
                used.insert(surface.clone());
            }
            companion.insert(surface, ty)?;
        }
        sentences.push(sentence);
    }
    let name = match spec.context_mode {
        ContextMode::Rich => "synth-rich",
        ContextMode::Low => "synth-low",
    };
    Ok(SynthOutput { dataset: Dataset::new(name, sentences), companion })
}

const RICH_TEMPLATES: &[&str] = &[
    "{PER} was born in {LOC} and studied music",
    "the painter {PER} moved to {LOC} with her family",
    "{PER} joined {CORP} as chief engineer",
    "{CORP} announced the new {PROD} at its annual event",
    "the {PROD} made by {CORP} sold out quickly",
    "{GRP} performed their album {CW} in {LOC}",
    "the band {GRP} released the single {CW}",
    "{PER} wrote the novel {CW} while living in {LOC}",
    "critics praised the film {CW} directed by {PER}",
    "the city of {LOC} lies on the river",
    "{CORP} opened a factory near {LOC}",
    "fans of {GRP} gathered outside the stadium",
    "the senator {PER} criticised {CORP} for its prices",
    "she bought a {PROD} for her brother",
    "the museum in {LOC} shows paintings by {PER}",
    "members of {GRP} met with {PER} in {LOC}",
    "engineers at {CORP} designed the {PROD}",
    "the opera {CW} premiered in {LOC}",
    "{PER} starred in the series {CW}",
    "the club {GRP} signed a deal with {CORP}",
];

const LOW_FRAMES: &[&str] = &[
    "search for {}",
    "what is {}",
    "tell me about {}",
    "{} reviews online",
    "pictures of {}",
    "news about {} today",
    "where is {} now",
    "{} and {} compared",
];

/// Built-in rich-context templates; context words reveal slot types.
pub fn rich_context_templates() -> Vec<Template> {
    RICH_TEMPLATES
        .iter()
        .map(|t| Template::parse(t).expect("built-in template"))
        .collect()
}

/// Built-in low-context templates: each query frame crossed with every
/// assignment of entity types to its slots.
pub fn low_context_templates() -> Vec<Template> {
    let mut out = Vec::new();
    for frame in LOW_FRAMES {
        let n_slots = frame.matches("{}").count();
        let combos = EntityType::ALL.len().pow(n_slots as u32);
        for mut code in 0..combos {
            let mut text = String::new();
            let mut rest = *frame;
            while let Some(pos) = rest.find("{}") {
                let ty = EntityType::ALL[code % EntityType::ALL.len()];
                code /= EntityType::ALL.len();
                text.push_str(&rest[..pos]);
                text.push_str(&format!("{{{ty}}}"));
                rest = &rest[pos + 2..];
            }
            text.push_str(rest);
            out.push(Template::parse(&text).expect("built-in template"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_bio;

    fn spec(n: usize, mode: ContextMode, seed: u64) -> SynthSpec {
        SynthSpec {
            n_sentences: n,
            template_pool: match mode {
                ContextMode::Rich => rich_context_templates(),
                ContextMode::Low => low_context_templates(),
            },
            context_mode: mode,
            vocab_size: 40,
            seed,
            fresh_entities: true,
        }
    }

    #[test]
    fn template_parse_and_display() {
        let t = Template::parse("{PER} was born in {LOC}").unwrap();
        assert_eq!(t.slots().collect::<Vec<_>>(), vec![EntityType::Per, EntityType::Loc]);
        assert_eq!(t.to_string(), "{PER} was born in {LOC}");
        assert!(Template::parse("no slots here").is_err());
        assert!(Template::parse("{ORG} here").is_err());
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = synth_corpus(&spec(200, ContextMode::Low, 7), &Gazetteer::new()).unwrap();
        let b = synth_corpus(&spec(200, ContextMode::Low, 7), &Gazetteer::new()).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.companion, b.companion);
        let c = synth_corpus(&spec(200, ContextMode::Low, 8), &Gazetteer::new()).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn zero_sentences() {
        let out = synth_corpus(&spec(0, ContextMode::Rich, 1), &Gazetteer::new()).unwrap();
        assert!(out.dataset.is_empty());
    }

    #[test]
    fn empty_pool_is_config_error() {
        let mut s = spec(3, ContextMode::Low, 1);
        s.template_pool.clear();
        assert!(matches!(
            synth_corpus(&s, &Gazetteer::new()),
            Err(GainError::Config(_))
        ));
    }

    #[test]
    fn lengths_validity_and_companion() {
        for (mode, lo, hi) in [(ContextMode::Low, 3, 8), (ContextMode::Rich, 10, 25)] {
            let out = synth_corpus(&spec(10_000, mode, 3), &Gazetteer::new()).unwrap();
            for s in &out.dataset.sentences {
                assert!((lo..=hi).contains(&s.len()), "{mode:?}: {}", s.len());
                assert!(validate_bio(&s.tags).is_empty());
                for sp in s.spans() {
                    assert!(out.companion.contains(s.surface(&sp), sp.etype));
                }
            }
        }
    }

    #[test]
    fn gazetteer_sampling_mode() {
        let mut g = Gazetteer::new();
        for ty in EntityType::ALL {
            g.insert_str(&format!("{} one", ty.name().to_lowercase()), ty).unwrap();
        }
        let mut s = spec(50, ContextMode::Rich, 2);
        s.fresh_entities = false;
        let out = synth_corpus(&s, &g).unwrap();
        for sent in &out.dataset.sentences {
            for sp in sent.spans() {
                assert!(g.contains(sent.surface(&sp), sp.etype));
            }
        }
        let mut partial = Gazetteer::new();
        partial.insert_str("x", EntityType::Per).unwrap();
        assert!(synth_corpus(&s, &partial).is_err());
    }

    #[test]
    fn low_templates_cover_every_type_pairing() {
        let t = low_context_templates();
        assert_eq!(t.len(), 7 * 6 + 36);
    }
}
