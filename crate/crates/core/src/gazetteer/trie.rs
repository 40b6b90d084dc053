use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, Gazetteer};
use crate::corpus::{EntityType, Tag};

/// Which matches to report at a start position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchPolicy {
    /// For every (start, label), only the longest matching surface.
    #[default]
    Longest,
    /// Every matching (start, surface, label).
    All,
}

/// A gazetteer hit over `tokens[start..start + length]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Match {
    pub start: usize,
    pub length: usize,
    pub label: EntityType,
}

impl Match {
    pub fn new(start: usize, length: usize, label: EntityType) -> Match {
        Match { start, length, label }
    }
}

#[derive(Debug, Clone, Default)]
struct Node {
    children: HashMap<String, u32>,
    terminal: Vec<EntityType>,
}

/// Token-keyed prefix tree over a gazetteer. Immutable after [`MatchTrie::build`].
#[derive(Debug, Clone)]
pub struct MatchTrie {
    nodes: Vec<Node>,
    fold_case: bool,
}

impl MatchTrie {
    /// Builds the trie. With `fold_case`, gazetteer and query tokens are lowercased.
    pub fn build(gaz: &Gazetteer, fold_case: bool) -> MatchTrie {
        let mut trie = MatchTrie { nodes: vec![Node::default()], fold_case };
        for (surface, label) in gaz.iter() {
            let mut cur = 0usize;
            for tok in surface {
                let key = trie.key(tok);
                cur = match trie.nodes[cur].children.get(&key) {
                    Some(&next) => next as usize,
                    None => {
                        let id = trie.nodes.len();
                        trie.nodes.push(Node::default());
                        trie.nodes[cur].children.insert(key, id as u32);
                        id
                    }
                };
            }
            let term = &mut trie.nodes[cur].terminal;
            if let Err(pos) = term.binary_search(&label) {
                term.insert(pos, label);
            }
        }
        trie
    }

    fn key(&self, tok: &str) -> String {
        if self.fold_case {
            tok.to_lowercase()
        } else {
            tok.to_string()
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn fold_case(&self) -> bool {
        self.fold_case
    }

    fn child(&self, node: usize, tok: &str) -> Option<usize> {
        let children = &self.nodes[node].children;
        if self.fold_case {
            children.get(&tok.to_lowercase())
        } else {
            children.get(tok)
        }
        .map(|&n| n as usize)
    }

    /// Labels stored for exactly this surface.
    pub fn lookup(&self, surface: &[String]) -> &[EntityType] {
        let mut cur = 0;
        for tok in surface {
            match self.child(cur, tok) {
                Some(n) => cur = n,
                None => return &[],
            }
        }
        if surface.is_empty() {
            return &[];
        }
        &self.nodes[cur].terminal
    }
}

fn sort_matches(matches: &mut [Match]) {
    matches.sort_by(|a, b| {
        (a.start, a.label)
            .cmp(&(b.start, b.label))
            .then(b.length.cmp(&a.length))
    });
}

/// Matches every start position against the trie. Output is sorted by
/// `(start, label, length desc)`.
pub fn match_tokens(trie: &MatchTrie, tokens: &[String], policy: MatchPolicy) -> Vec<Match> {
    let mut out = Vec::new();
    for start in 0..tokens.len() {
        let first = out.len();
        let mut cur = 0;
        for (offset, tok) in tokens[start..].iter().enumerate() {
            let Some(next) = trie.child(cur, tok) else { break };
            cur = next;
            for &label in &trie.nodes[cur].terminal {
                out.push(Match::new(start, offset + 1, label));
            }
        }
        if policy == MatchPolicy::Longest {
            // Deeper nodes are visited later, so the last hit per label is the longest.
            let mut keep: Vec<Match> = Vec::new();
            for m in out.drain(first..).rev() {
                if !keep.iter().any(|k| k.label == m.label) {
                    keep.push(m);
                }
            }
            out.extend(keep);
        }
    }
    sort_matches(&mut out);
    out
}

/// Reference matcher: checks every stored surface at every start position.
/// Quadratic; kept as an oracle for tests and debugging.
pub fn naive_matches(
    gaz: &Gazetteer,
    tokens: &[String],
    policy: MatchPolicy,
    fold_case: bool,
) -> Vec<Match> {
    let norm = |s: &str| if fold_case { s.to_lowercase() } else { s.to_string() };
    let mut out: Vec<Match> = Vec::new();
    for start in 0..tokens.len() {
        for (surface, label) in gaz.iter() {
            let end = start + surface.len();
            if end <= tokens.len()
                && surface.iter().zip(&tokens[start..end]).all(|(a, b)| norm(a) == norm(b))
            {
                out.push(Match::new(start, surface.len(), label));
            }
        }
    }
    out.sort_by_key(|m| (m.start, m.label, m.length));
    out.dedup();
    if policy == MatchPolicy::Longest {
        let all = out.clone();
        out.retain(|m| {
            !all.iter()
                .any(|o| o.start == m.start && o.label == m.label && o.length > m.length)
        });
    }
    sort_matches(&mut out);
    out
}

/// One-hot match features: `B-label` at the match start, `I-label` on the
/// remaining tokens, OR-ed over all matches; untouched rows get `O`.
pub fn match_features(trie: &MatchTrie, tokens: &[String], policy: MatchPolicy) -> FeatureMatrix {
    features_from_matches(&match_tokens(trie, tokens, policy), tokens.len())
}

pub(crate) fn features_from_matches(matches: &[Match], n: usize) -> FeatureMatrix {
    let mut m = FeatureMatrix::zeros(n);
    for hit in matches {
        m.set(hit.start, Tag::begin(hit.label).index());
        for row in hit.start + 1..hit.start + hit.length {
            m.set(row, Tag::inside(hit.label).index());
        }
    }
    m.fill_outside();
    m
}
