//! Aggregating several models: logit averaging (softmax and span models),
//! weighted token voting (any model, CRF in particular) and k-fold plans.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{repair_bio, Dataset, Tag, NUM_TAGS};
use crate::error::{contract, GainError, Result};
use crate::model::{softmax_decode, span_decode, SPAN_CLASSES};
use crate::numcore::Tensor;
use crate::seed::rng_from;

/// Elementwise mean of the members' logits.
pub fn avg_logits(members: &[Tensor]) -> Result<Tensor> {
    contract!(!members.is_empty(), "averaging needs at least one member");
    let mut acc = members[0].clone();
    for m in &members[1..] {
        contract!(m.same_shape(&acc), "member logits differ in shape");
        acc.add_assign(m);
    }
    acc.scale_assign(1.0 / members.len() as f64);
    Ok(acc)
}

/// Mean logits, then `decode`.
pub fn avg_logits_decode<F>(members: &[Tensor], decode: F) -> Result<Vec<Tag>>
where
    F: Fn(&Tensor) -> Result<Vec<Tag>>,
{
    decode(&avg_logits(members)?)
}

/// Decoder for averaged logits chosen by width: 13 columns are tag logits,
/// 14 are span start/end logits.
pub fn decode_by_width(logits: &Tensor, span_max_width: usize) -> Result<Vec<Tag>> {
    match logits.cols() {
        NUM_TAGS => Ok(softmax_decode(logits)),
        c if c == 2 * SPAN_CLASSES => Ok(span_decode(logits, span_max_width)),
        c => Err(GainError::Contract(format!("cannot decode logits with {c} columns"))),
    }
}

/// Per token, the tag with the largest total member weight wins (lowest tag
/// index on ties); the result is BIO-repaired.
pub fn weighted_token_vote(members: &[Vec<Tag>], weights: &[f64]) -> Result<Vec<Tag>> {
    contract!(!members.is_empty(), "voting needs at least one member");
    contract!(members.len() == weights.len(), "{} members but {} weights", members.len(), weights.len());
    contract!(
        weights.iter().all(|w| w.is_finite() && *w >= 0.0) && weights.iter().any(|w| *w > 0.0),
        "weights must be non-negative and not all zero"
    );
    let n = members[0].len();
    contract!(members.iter().all(|m| m.len() == n), "member tag sequences differ in length");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut totals = [0.0f64; NUM_TAGS];
        for (m, w) in members.iter().zip(weights) {
            totals[m[i].index()] += w;
        }
        let mut best = 0;
        for (t, &v) in totals.iter().enumerate() {
            if v > totals[best] {
                best = t;
            }
        }
        out.push(Tag::new(best)?);
    }
    repair_bio(&mut out);
    Ok(out)
}

/// A seeded partition of sentence indices into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// `(train, validation)` for fold `i`: validation is fold `i`, training is
    /// every other fold in fold order.
    pub fn split(&self, data: &Dataset, i: usize) -> Result<(Dataset, Dataset)> {
        contract!(i < self.k(), "fold {i} out of {}", self.k());
        let train: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        Ok((
            data.subset(format!("{}.fold{i}.train", data.name), &train),
            data.subset(format!("{}.fold{i}.val", data.name), &self.folds[i]),
        ))
    }
}

/// Seeded shuffle of `0..n`, then `k` contiguous folds whose sizes differ by
/// at most one (earlier folds take the remainder).
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(GainError::Config(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(GainError::Config(format!("k = {k} exceeds the {n} sentences")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        folds.push(order[at..at + size].to_vec());
        at += size;
    }
    Ok(FoldPlan { seed, folds })
}

/// One line of the prediction interchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub model_id: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<Tag>>,
    /// Row-major logits, one row per token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<Vec<f64>>>,
}

impl PredictionRecord {
    pub fn logits_tensor(&self) -> Result<Option<Tensor>> {
        self.logits
            .as_ref()
            .map(|rows| {
                contract!(rows.len() == self.tokens.len(), "logit rows vs token count");
                Tensor::from_rows(rows)
            })
            .transpose()
    }
}

pub fn write_predictions(records: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialises"));
        out.push('\n');
    }
    out
}

pub fn read_predictions(text: &str) -> Result<Vec<PredictionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| GainError::Data(format!("prediction line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleMode {
    AvgLogits,
    Vote,
}

/// Combines per-model prediction files (one `Vec` per member, aligned by
/// sentence) into one tag sequence per sentence.
pub fn combine(
    members: &[Vec<PredictionRecord>],
    mode: EnsembleMode,
    weights: &[f64],
    span_max_width: usize,
) -> Result<Vec<PredictionRecord>> {
    contract!(!members.is_empty(), "no ensemble members");
    let n = members[0].len();
    if members.iter().any(|m| m.len() != n) {
        return Err(GainError::Data("members cover different numbers of sentences".into()));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let tokens = &members[0][i].tokens;
        if members.iter().any(|m| &m[i].tokens != tokens) {
            return Err(GainError::Data(format!("sentence {i} differs between members")));
        }
        let tags = match mode {
            EnsembleMode::AvgLogits => {
                let logits = members
                    .iter()
                    .map(|m| {
                        m[i].logits_tensor()?.ok_or_else(|| {
                            GainError::Data(format!("model {} has no logits for sentence {i}", m[i].model_id))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                avg_logits_decode(&logits, |l| decode_by_width(l, span_max_width))?
            }
            EnsembleMode::Vote => {
                let seqs = members
                    .iter()
                    .map(|m| {
                        m[i].tags.clone().ok_or_else(|| {
                            GainError::Data(format!("model {} has no tags for sentence {i}", m[i].model_id))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                weighted_token_vote(&seqs, weights)?
            }
        };
        out.push(PredictionRecord { model_id: "ensemble".into(), tokens: tokens.clone(), tags: Some(tags), logits: None });
    }
    Ok(out)
}
