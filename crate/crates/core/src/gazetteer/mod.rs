//! Gazetteer store, token-level trie matcher and the one-hot match features
//! that feed the gazetteer network.

mod coverage;
mod features;
mod trie;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::EntityType;
use crate::error::{GainError, Result};

pub use coverage::{coverage_rate, subsample_coverage, CoverageReport};
pub use features::FeatureMatrix;
pub use trie::{match_features, match_tokens, naive_matches, Match, MatchPolicy, MatchTrie};

/// A surface form: one or more whitespace-free tokens.
pub type Surface = Vec<String>;

/// Label-partitioned set of entity surfaces. The same surface may be stored
/// under several labels ("apple" as both PROD and CORP).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    // Sorted and deduplicated per label; sorted storage gives O(1) uniform sampling.
    entries: BTreeMap<EntityType, Vec<Surface>>,
}

impl Gazetteer {
    pub fn new() -> Gazetteer {
        Gazetteer::default()
    }

    /// Inserts a surface; returns `false` if it was already present under `label`.
    pub fn insert(&mut self, surface: Surface, label: EntityType) -> Result<bool> {
        if surface.is_empty() || surface.iter().any(|t| t.is_empty()) {
            return Err(GainError::Data(format!("empty surface for {label}")));
        }
        let list = self.entries.entry(label).or_default();
        match list.binary_search(&surface) {
            Ok(_) => Ok(false),
            Err(pos) => {
                list.insert(pos, surface);
                Ok(true)
            }
        }
    }

    /// Convenience insert from a space-separated string.
    pub fn insert_str(&mut self, surface: &str, label: EntityType) -> Result<bool> {
        self.insert(surface.split_whitespace().map(str::to_string).collect(), label)
    }

    pub fn contains(&self, surface: &[String], label: EntityType) -> bool {
        self.entries
            .get(&label)
            .is_some_and(|l| l.binary_search_by(|s| s.as_slice().cmp(surface)).is_ok())
    }

    /// Stored surfaces of `label`, sorted.
    pub fn surfaces(&self, label: EntityType) -> &[Surface] {
        self.entries.get(&label).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Labels with at least one entry.
    pub fn labels(&self) -> impl Iterator<Item = EntityType> + '_ {
        self.entries.iter().filter(|(_, v)| !v.is_empty()).map(|(k, _)| *k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Surface, EntityType)> {
        self.entries
            .iter()
            .flat_map(|(label, list)| list.iter().map(move |s| (s, *label)))
    }

    /// Total entries across labels (a surface under two labels counts twice).
    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts_by_label(&self) -> BTreeMap<EntityType, usize> {
        EntityType::ALL
            .iter()
            .map(|t| (*t, self.surfaces(*t).len()))
            .collect()
    }

    pub fn merge(&mut self, other: &Gazetteer) {
        for (s, label) in other.iter() {
            // Surfaces in `other` are already validated.
            let _ = self.insert(s.clone(), label);
        }
    }

    /// Parses `surface<TAB>label` lines. Blank lines are skipped.
    pub fn from_tsv(text: &str) -> Result<Gazetteer> {
        let mut gaz = Gazetteer::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() {
                continue;
            }
            let (surface, label) = line.split_once('\t').ok_or_else(|| {
                GainError::Data(format!("gazetteer line {lineno}: expected surface<TAB>label"))
            })?;
            let label = EntityType::parse(label.trim()).ok_or_else(|| {
                GainError::Data(format!("gazetteer line {lineno}: unknown label {label:?}"))
            })?;
            let tokens: Surface = surface.split_whitespace().map(str::to_string).collect();
            if tokens.is_empty() {
                return Err(GainError::Data(format!("gazetteer line {lineno}: empty surface")));
            }
            gaz.insert(tokens, label)?;
        }
        Ok(gaz)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Gazetteer> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Gazetteer::from_tsv(&text)
    }

    /// Canonical TSV: labels in canonical order, surfaces sorted.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (s, label) in self.iter() {
            let _ = writeln!(out, "{}\t{}", s.join(" "), label);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}
