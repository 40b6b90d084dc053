//! Entity-level evaluation: exact-match precision, recall and F1 per type,
//! their macro averages, and type-agnostic mention detection.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{entity_spans, Dataset, EntityType};
use crate::error::{GainError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold_count: usize,
    pub pred_count: usize,
    pub matched_count: usize,
}

impl LabelScores {
    pub fn from_counts(gold: usize, pred: usize, matched: usize) -> LabelScores {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, pred);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        LabelScores { precision, recall, f1, gold_count: gold, pred_count: pred, matched_count: matched }
    }

    /// Whether the label occurs in gold or predictions.
    pub fn is_present(&self) -> bool {
        self.gold_count + self.pred_count > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// All six types; types absent on both sides have zero counts.
    pub per_label: BTreeMap<EntityType, LabelScores>,
    pub macro_f1: f64,
    pub macro_p: f64,
    pub macro_r: f64,
    /// Span-only scores (type ignored).
    pub mention: LabelScores,
    pub md_f1: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Aligned text table with rows `macro@F1`, `macro@P`, `macro@R`,
    /// `MD@F1` and `F1@<label>`.
    pub fn render(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("macro@F1".into(), format!("{:.4}", self.macro_f1)),
            ("macro@P".into(), format!("{:.4}", self.macro_p)),
            ("macro@R".into(), format!("{:.4}", self.macro_r)),
            ("MD@F1".into(), format!("{:.4}", self.md_f1)),
        ];
        for (label, s) in &self.per_label {
            let value = if s.is_present() { format!("{:.4}", s.f1) } else { "-".into() };
            rows.push((format!("F1@{}", label.name()), value));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v:>6}");
        }
        out
    }
}

/// Scores `pred` against `gold`. Sentences must align one-to-one with equal
/// tokens. Labels absent from both sides are left out of the macro means.
pub fn evaluate(pred: &Dataset, gold: &Dataset) -> Result<EvalReport> {
    if pred.len() != gold.len() {
        return Err(GainError::Data(format!(
            "prediction has {} sentences, gold has {}",
            pred.len(),
            gold.len()
        )));
    }
    let mut counts: BTreeMap<EntityType, [usize; 3]> =
        EntityType::ALL.iter().map(|&t| (t, [0; 3])).collect();
    let mut mention = [0usize; 3];
    for (i, (p, g)) in pred.sentences.iter().zip(&gold.sentences).enumerate() {
        if p.tokens != g.tokens || p.tags.len() != g.tags.len() {
            return Err(GainError::Data(format!("sentence {i} differs between prediction and gold")));
        }
        let gs = entity_spans(&g.tags);
        let ps = entity_spans(&p.tags);
        let gold_set: HashSet<_> = gs.iter().copied().collect();
        let gold_untyped: HashSet<_> = gs.iter().map(|s| (s.start, s.end)).collect();
        for s in &gs {
            counts.get_mut(&s.etype).expect("all types")[0] += 1;
        }
        for s in &ps {
            let c = counts.get_mut(&s.etype).expect("all types");
            c[1] += 1;
            if gold_set.contains(s) {
                c[2] += 1;
            }
        }
        let pred_untyped: HashSet<_> = ps.iter().map(|s| (s.start, s.end)).collect();
        mention[0] += gold_untyped.len();
        mention[1] += pred_untyped.len();
        mention[2] += pred_untyped.intersection(&gold_untyped).count();
    }
    let per_label: BTreeMap<EntityType, LabelScores> = counts
        .into_iter()
        .map(|(t, [g, p, m])| (t, LabelScores::from_counts(g, p, m)))
        .collect();
    let present: Vec<&LabelScores> = per_label.values().filter(|s| s.is_present()).collect();
    let mean = |f: fn(&LabelScores) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|s| f(s)).sum::<f64>() / present.len() as f64
        }
    };
    let mention = LabelScores::from_counts(mention[0], mention[1], mention[2]);
    Ok(EvalReport {
        macro_f1: mean(|s| s.f1),
        macro_p: mean(|s| s.precision),
        macro_r: mean(|s| s.recall),
        md_f1: mention.f1,
        mention,
        per_label,
    })
}
