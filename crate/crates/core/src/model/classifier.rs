//! The three backend classifiers: per-token softmax, linear-chain CRF and
//! start/end span prediction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::crf::{crf_nll, CrfScores};
use crate::corpus::{entity_spans, repair_bio, spans_to_tags, EntityType, Span, Tag, NUM_TAGS, NUM_TYPES};
use crate::error::{contract, Result};
use crate::numcore::{Linear, ParamGroup, ParamId, ParamSet, Tape, Tensor, Var};

/// Span classes per token: 0 = none, `1 + type index` otherwise.
pub const SPAN_CLASSES: usize = NUM_TYPES + 1;
pub const DEFAULT_SPAN_WIDTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Softmax,
    Crf,
    Span,
}

impl ClassifierKind {
    /// Default L1 weight in the stage-2 objective for this classifier.
    pub fn default_alpha(self) -> f64 {
        match self {
            ClassifierKind::Crf => 100.0,
            ClassifierKind::Softmax | ClassifierKind::Span => 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierHead {
    Softmax {
        proj: Linear,
    },
    Crf {
        proj: Linear,
        transitions: ParamId,
        start: ParamId,
        end: ParamId,
    },
    Span {
        start: Linear,
        end: Linear,
        max_width: usize,
    },
}

impl ClassifierHead {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        kind: ClassifierKind,
        input: usize,
        max_width: usize,
        rng: &mut R,
    ) -> Result<ClassifierHead> {
        Ok(match kind {
            ClassifierKind::Softmax => ClassifierHead::Softmax {
                proj: Linear::new(params, "classifier.proj", ParamGroup::Other, input, NUM_TAGS, rng)?,
            },
            ClassifierKind::Crf => ClassifierHead::Crf {
                proj: Linear::new(params, "classifier.proj", ParamGroup::Other, input, NUM_TAGS, rng)?,
                transitions: params.add(
                    "classifier.crf.transitions",
                    ParamGroup::Crf,
                    Tensor::zeros(NUM_TAGS, NUM_TAGS),
                )?,
                start: params.add("classifier.crf.start", ParamGroup::Crf, Tensor::zeros(1, NUM_TAGS))?,
                end: params.add("classifier.crf.end", ParamGroup::Crf, Tensor::zeros(1, NUM_TAGS))?,
            },
            ClassifierKind::Span => ClassifierHead::Span {
                start: Linear::new(params, "classifier.span_start", ParamGroup::Other, input, SPAN_CLASSES, rng)?,
                end: Linear::new(params, "classifier.span_end", ParamGroup::Other, input, SPAN_CLASSES, rng)?,
                max_width,
            },
        })
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierHead::Softmax { .. } => ClassifierKind::Softmax,
            ClassifierHead::Crf { .. } => ClassifierKind::Crf,
            ClassifierHead::Span { .. } => ClassifierKind::Span,
        }
    }

    /// Per-token scores: tag logits (softmax), emissions (CRF), or start and
    /// end class logits side by side (span, N×14).
    pub fn logits(&self, tape: &mut Tape, fused: Var) -> Result<Var> {
        match self {
            ClassifierHead::Softmax { proj } | ClassifierHead::Crf { proj, .. } => proj.forward(tape, fused),
            ClassifierHead::Span { start, end, .. } => {
                let s = start.forward(tape, fused)?;
                let e = end.forward(tape, fused)?;
                tape.concat_cols(&[s, e])
            }
        }
    }

    /// Training loss against gold tags.
    pub fn loss(&self, tape: &mut Tape, fused: Var, gold: &[Tag]) -> Result<Var> {
        contract!(tape.value(fused).rows() == gold.len(), "fused rows vs gold length");
        let logits = self.logits(tape, fused)?;
        self.loss_from_logits(tape, logits, gold)
    }

    pub fn loss_from_logits(&self, tape: &mut Tape, logits: Var, gold: &[Tag]) -> Result<Var> {
        match self {
            ClassifierHead::Softmax { .. } => {
                let targets: Vec<usize> = gold.iter().map(|t| t.index()).collect();
                tape.cross_entropy(logits, &targets)
            }
            ClassifierHead::Crf { transitions, start, end, .. } => {
                let targets: Vec<usize> = gold.iter().map(|t| t.index()).collect();
                let (tr, st, en) = (tape.param(*transitions), tape.param(*start), tape.param(*end));
                crf_nll(tape, logits, tr, st, en, &targets)
            }
            ClassifierHead::Span { .. } => {
                let (starts, ends) = span_targets(&entity_spans(gold), gold.len());
                let s = tape.slice_cols(logits, 0, SPAN_CLASSES)?;
                let e = tape.slice_cols(logits, SPAN_CLASSES, 2 * SPAN_CLASSES)?;
                let ls = tape.cross_entropy(s, &starts)?;
                let le = tape.cross_entropy(e, &ends)?;
                tape.add(ls, le)
            }
        }
    }

    /// Decodes logits as produced by [`ClassifierHead::logits`] (possibly
    /// averaged across models) into BIO-valid tags.
    pub fn decode(&self, params: &ParamSet, logits: &Tensor) -> Result<Vec<Tag>> {
        match self {
            ClassifierHead::Softmax { .. } => Ok(softmax_decode(logits)),
            ClassifierHead::Crf { transitions, start, end, .. } => {
                let scores = CrfScores::new(
                    logits,
                    params.value(*transitions),
                    params.value(*start),
                    params.value(*end),
                )?;
                let mut tags: Vec<Tag> = scores
                    .viterbi()
                    .0
                    .into_iter()
                    .map(|i| Tag::new(i).expect("viterbi over 13 tags"))
                    .collect();
                repair_bio(&mut tags);
                Ok(tags)
            }
            ClassifierHead::Span { max_width, .. } => {
                contract!(logits.cols() == 2 * SPAN_CLASSES, "span logits need 14 columns");
                Ok(span_decode(logits, *max_width))
            }
        }
    }
}

/// Argmax per token, then orphan `I-X` → `B-X`.
pub fn softmax_decode(logits: &Tensor) -> Vec<Tag> {
    let mut tags: Vec<Tag> = logits
        .argmax_rows()
        .into_iter()
        .map(|i| Tag::new(i).expect("13 tag columns"))
        .collect();
    repair_bio(&mut tags);
    tags
}

/// Per-token start/end class targets for the span head.
pub fn span_targets(spans: &[Span], n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut starts = vec![0; n];
    let mut ends = vec![0; n];
    for s in spans {
        starts[s.start] = s.etype.index() + 1;
        ends[s.end - 1] = s.etype.index() + 1;
    }
    (starts, ends)
}

/// Pairs predicted starts and ends into spans: scanning left to right, each
/// start of type `t` (not inside an already emitted span) takes the nearest
/// unconsumed end of type `t` at or after it, within `max_width` tokens.
/// Unpaired predictions are dropped.
pub fn pair_spans(start_classes: &[usize], end_classes: &[usize], max_width: usize) -> Vec<Span> {
    let n = start_classes.len();
    let mut consumed = vec![false; n];
    let mut spans = Vec::new();
    let mut covered_until = 0;
    for i in 0..n {
        let class = start_classes[i];
        if class == 0 || i < covered_until {
            continue;
        }
        let limit = (i + max_width.max(1)).min(n);
        if let Some(j) = (i..limit).find(|&j| !consumed[j] && end_classes[j] == class) {
            consumed[j] = true;
            let etype = EntityType::from_index(class - 1).expect("span class in 1..=6");
            spans.push(Span::new(i, j + 1, etype));
            covered_until = j + 1;
        }
    }
    spans
}

/// Per-token argmax of start and end classes, then [`pair_spans`].
pub fn span_decode(logits: &Tensor, max_width: usize) -> Vec<Tag> {
    let n = logits.rows();
    let mut starts = Vec::with_capacity(n);
    let mut ends = Vec::with_capacity(n);
    for r in 0..n {
        let row = logits.row(r);
        starts.push(argmax(&row[..SPAN_CLASSES]));
        ends.push(argmax(&row[SPAN_CLASSES..]));
    }
    spans_to_tags(&pair_spans(&starts, &ends, max_width), n)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
