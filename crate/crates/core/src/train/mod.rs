//! Encoder pre-training, the two GAIN stages and checkpoints.
//!
//! Every stage runs mini-batch AdamW. Within a batch, each sentence gets its
//! own tape (in parallel with the `parallel` feature); gradients are summed in
//! sentence order and divided by the batch size, so results do not depend on
//! thread scheduling.

mod checkpoint;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use crate::corpus::{Dataset, Sentence};
use crate::error::{contract, GainError, Result};
use crate::gazetteer::{FeatureMatrix, MatchTrie};
use crate::metrics::evaluate;
use crate::model::{
    AdaptationLoss, Encoder, IntegrationMode, L1Source, ModelBundle, Stage, Stage2Options,
};
use crate::numcore::{adamw_step, dropout, Linear, OptimizerConfig, ParamGrads, ParamGroup, ParamSet, Tape, Var};
use crate::seed::{derive_seed, derived_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// L1 weight in `L3 = α·L1 + L2`; the classifier's default when absent.
    pub alpha: Option<f64>,
    pub pretrain_epochs: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub optimizer: OptimizerConfig,
    /// Rates used for encoder pre-training (encoder and temporary head).
    pub pretrain_lr: f64,
    pub adaptation_loss: AdaptationLoss,
    pub stage2_l1_source: L1Source,
    /// Allows stage 2 directly after pre-training.
    pub skip_stage1: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            alpha: None,
            pretrain_epochs: 10,
            stage1_epochs: 5,
            stage2_epochs: 20,
            batch_size: 16,
            dropout: 0.1,
            optimizer: OptimizerConfig::default(),
            pretrain_lr: 5e-3,
            adaptation_loss: AdaptationLoss::Kl,
            stage2_l1_source: L1Source::Gold,
            skip_stage1: false,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GainError::Config(m.to_string()));
        if let Some(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return bad("alpha must be a finite value ≥ 0");
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.pretrain_lr > 0.0) {
            return bad("pretrain_lr must be > 0");
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sentence training loss over the epoch.
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    pub epochs: Vec<EpochRecord>,
    /// Stage objective over the training data with the final parameters
    /// (no dropout).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    /// Pre-training only: token accuracy of encoder + temporary head on the
    /// pre-training data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_val_macro_f1: Option<f64>,
}

impl TrainReport {
    fn new(stage: Stage) -> TrainReport {
        TrainReport {
            stage,
            epochs: Vec::new(),
            final_loss: None,
            token_accuracy: None,
            best_epoch: None,
            best_val_macro_f1: None,
        }
    }
}

/// Anything owning a parameter set the loop can update.
trait Trainable: Sync {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
}

impl Trainable for ModelBundle {
    fn params(&self) -> &ParamSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

struct Schedule<'a> {
    label: &'a str,
    seed: u64,
    epochs: usize,
    batch_size: usize,
    optimizer: &'a OptimizerConfig,
}

fn sentence_rng(seed: u64, label: &str, epoch: usize, index: usize) -> ChaCha8Rng {
    derived_rng(seed, &format!("{label}/epoch{epoch}/sentence{index}"))
}

fn per_item<T, F>(n: &[usize], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        n.par_iter().map(|&i| f(i)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        n.iter().map(|&i| f(i)).collect()
    }
}

/// Runs `epochs` of shuffled mini-batch AdamW over items `0..n`. `loss`
/// builds one item's loss on a fresh tape; `after_epoch` runs once per epoch
/// with the updated model and may return a validation score.
fn run_epochs<M, F, V>(
    model: &mut M,
    n: usize,
    sched: &Schedule<'_>,
    loss: F,
    mut after_epoch: V,
) -> Result<Vec<EpochRecord>>
where
    M: Trainable,
    F: Fn(&M, &mut Tape, usize, &mut ChaCha8Rng) -> Result<Var> + Sync + Send,
    V: FnMut(&mut M, usize) -> Result<Option<f64>>,
{
    let mut records = Vec::with_capacity(sched.epochs);
    for epoch in 1..=sched.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derived_rng(sched.seed, &format!("{}/shuffle{epoch}", sched.label)));
        let mut total = 0.0;
        for (b, batch) in order.chunks(sched.batch_size).enumerate() {
            let results = {
                let m: &M = model;
                per_item(batch, |i| -> Result<(f64, ParamGrads)> {
                    let mut rng = sentence_rng(sched.seed, sched.label, epoch, i);
                    let mut tape = Tape::new(m.params());
                    let l = loss(m, &mut tape, i, &mut rng)?;
                    let v = tape.value(l).item();
                    if let Some(op) = tape.non_finite_op() {
                        return Err(GainError::Numeric(format!(
                            "{}: non-finite value from {op} at epoch {epoch}, batch {b}, sentence {i}",
                            sched.label
                        )));
                    }
                    if !v.is_finite() {
                        return Err(GainError::Numeric(format!(
                            "{}: non-finite loss at epoch {epoch}, batch {b}, sentence {i}",
                            sched.label
                        )));
                    }
                    Ok((v, tape.backward(l).into_params()))
                })
            };
            let mut merged = ParamGrads::default();
            for r in results {
                let (v, g) = r?;
                total += v;
                merged = merged.merge(g);
            }
            let params = model.params_mut();
            params.zero_grad();
            params.accumulate(&merged, 1.0 / batch.len() as f64)?;
            adamw_step(params, sched.optimizer)?;
        }
        let mean_loss = if n == 0 { 0.0 } else { total / n as f64 };
        let val_macro_f1 = after_epoch(model, epoch)?;
        log::info!("{} epoch {epoch}: loss {mean_loss:.6}", sched.label);
        records.push(EpochRecord { epoch, mean_loss, val_macro_f1 });
    }
    Ok(records)
}

/// Mean of `loss` over items `0..n` with fixed parameters.
fn mean_loss<M, F>(model: &M, n: usize, loss: F) -> Result<f64>
where
    M: Trainable,
    F: Fn(&M, &mut Tape, usize) -> Result<Var> + Sync + Send,
{
    if n == 0 {
        return Ok(0.0);
    }
    let items: Vec<usize> = (0..n).collect();
    let values = per_item(&items, |i| -> Result<f64> {
        let mut tape = Tape::new(model.params());
        let l = loss(model, &mut tape, i)?;
        tape.check_finite()?;
        Ok(tape.value(l).item())
    });
    let mut total = 0.0;
    for v in values {
        total += v?;
    }
    Ok(total / n as f64)
}

struct Pretrainer {
    params: ParamSet,
    encoder: Encoder,
    head: Linear,
}

impl Trainable for Pretrainer {
    fn params(&self) -> &ParamSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

impl Pretrainer {
    fn logits(&self, tape: &mut Tape, s: &Sentence, drop: Option<(f64, &mut ChaCha8Rng)>) -> Result<Var> {
        let e = self.encoder.forward(tape, &s.tokens)?;
        let e = match drop {
            Some((p, rng)) => dropout(tape, e, p, rng)?,
            None => e,
        };
        self.head.forward(tape, e)
    }
}

/// Trains the encoder with a temporary softmax tagging head on `data`, then
/// discards the head. Only encoder parameters of `bundle` change.
pub fn pretrain_encoder(bundle: &mut ModelBundle, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    data.validate()?;
    let mut scratch = bundle.params.clone();
    let mut rng = derived_rng(cfg.seed, "pretrain/head");
    let head = Linear::new(
        &mut scratch,
        "pretrain.head",
        ParamGroup::Other,
        bundle.encoder.output_dim(),
        crate::corpus::NUM_TAGS,
        &mut rng,
    )?;
    scratch.set_trainable(|p| p.name.starts_with("encoder.") || p.name.starts_with("pretrain."));
    let mut model = Pretrainer { params: scratch, encoder: bundle.encoder.clone(), head };
    let optimizer = OptimizerConfig {
        weight_decay: cfg.optimizer.weight_decay,
        ..OptimizerConfig::with_uniform_rate(cfg.pretrain_lr)
    };
    let sched = Schedule {
        label: "pretrain",
        seed: cfg.seed,
        epochs: cfg.pretrain_epochs,
        batch_size: cfg.batch_size,
        optimizer: &optimizer,
    };
    let sentences = &data.sentences;
    let targets = |s: &Sentence| s.tags.iter().map(|t| t.index()).collect::<Vec<_>>();
    let epochs = run_epochs(
        &mut model,
        sentences.len(),
        &sched,
        |m, tape, i, rng| {
            let s = &sentences[i];
            let logits = m.logits(tape, s, Some((cfg.dropout, rng)))?;
            tape.cross_entropy(logits, &targets(s))
        },
        |_, _| Ok(None),
    )?;

    let items: Vec<usize> = (0..sentences.len()).collect();
    let hits = per_item(&items, |i| -> Result<usize> {
        let s = &sentences[i];
        let mut tape = Tape::new(&model.params);
        let l = model.logits(&mut tape, s, None)?;
        Ok(tape.value(l).argmax_rows().iter().zip(&s.tags).filter(|(p, g)| **p == g.index()).count())
    });
    let mut correct = 0;
    for h in hits {
        correct += h?;
    }
    let tokens = data.token_count();

    bundle.copy_params_from(&model.params, "encoder.")?;
    bundle.stage = Stage::Pretrained;
    let mut report = TrainReport::new(Stage::Pretrained);
    report.final_loss = epochs.last().map(|e| e.mean_loss);
    report.epochs = epochs;
    report.token_accuracy = Some(if tokens == 0 { 0.0 } else { correct as f64 / tokens as f64 });
    Ok(report)
}

/// Stage 1: the gazetteer network reads gold one-hot tags and is aligned to
/// the frozen encoder through the two projection heads.
pub fn stage1_adapt(bundle: &mut ModelBundle, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    data.validate()?;
    contract!(bundle.stage != Stage::Untrained, "stage 1 needs a pre-trained encoder");
    contract!(bundle.integration.uses_gazetteer(), "stage 1 needs a gazetteer integration mode");
    if data.is_empty() {
        return Err(GainError::Data("stage 1 on an empty dataset".into()));
    }
    bundle.params.set_trainable(|p| {
        p.name.starts_with("gaznet.") || p.name.starts_with("head_e.") || p.name.starts_with("head_g.")
    });
    let sched = Schedule {
        label: "stage1",
        seed: cfg.seed,
        epochs: cfg.stage1_epochs,
        batch_size: cfg.batch_size,
        optimizer: &cfg.optimizer,
    };
    let sentences = &data.sentences;
    let kind = cfg.adaptation_loss;
    let epochs = run_epochs(
        bundle,
        sentences.len(),
        &sched,
        |m, tape, i, _| m.stage1_loss(tape, &sentences[i], kind),
        |_, _| Ok(None),
    )?;
    let final_loss = mean_loss(bundle, sentences.len(), |m, tape, i| m.stage1_loss(tape, &sentences[i], kind))?;
    bundle.params.set_trainable(|_| true);
    bundle.stage = Stage::Adapted;
    let mut report = TrainReport::new(Stage::Adapted);
    report.epochs = epochs;
    report.final_loss = Some(final_loss);
    Ok(report)
}

/// The L1 weight in effect for `bundle` under `cfg`.
pub fn effective_alpha(bundle: &ModelBundle, cfg: &TrainConfig) -> f64 {
    cfg.alpha.unwrap_or_else(|| bundle.classifier.kind().default_alpha())
}

pub fn stage2_options(bundle: &ModelBundle, cfg: &TrainConfig) -> Stage2Options {
    Stage2Options {
        alpha: effective_alpha(bundle, cfg),
        adaptation: cfg.adaptation_loss,
        l1_source: cfg.stage2_l1_source,
        dropout: cfg.dropout,
    }
}

/// Stage 2: everything trains on `L3 = α·L1 + L2` with gazetteer features
/// from `trie`. With a validation set, the parameters of the epoch with the
/// best validation macro-F1 are kept (earliest on ties).
///
/// For the encoder-only baseline (integration `none`) the gazetteer network
/// and projection heads stay frozen and the objective is `L2`.
pub fn stage2_train(
    bundle: &mut ModelBundle,
    train: &Dataset,
    val: Option<&Dataset>,
    trie: &MatchTrie,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    train.validate()?;
    if train.is_empty() {
        return Err(GainError::Data("stage 2 on an empty dataset".into()));
    }
    let baseline = bundle.integration.mode == IntegrationMode::None;
    let ready = match bundle.stage {
        Stage::Adapted | Stage::Trained => true,
        Stage::Pretrained => baseline || cfg.skip_stage1,
        Stage::Untrained => false,
    };
    contract!(ready, "stage 2 needs an adapted bundle (stage is {})", bundle.stage);

    if baseline {
        bundle.params.set_trainable(|p| {
            !(p.name.starts_with("gaznet.") || p.name.starts_with("head_e.") || p.name.starts_with("head_g."))
        });
    } else {
        bundle.params.set_trainable(|_| true);
    }
    let features: Vec<FeatureMatrix> =
        train.sentences.iter().map(|s| bundle.features(Some(trie), &s.tokens)).collect();
    let opts = stage2_options(bundle, cfg);
    let sched = Schedule {
        label: "stage2",
        seed: cfg.seed,
        epochs: cfg.stage2_epochs,
        batch_size: cfg.batch_size,
        optimizer: &cfg.optimizer,
    };
    let sentences = &train.sentences;
    let mut best: Option<(f64, usize, Vec<crate::numcore::Tensor>)> = None;
    let epochs = run_epochs(
        bundle,
        sentences.len(),
        &sched,
        |m, tape, i, rng| Ok(m.stage2_loss(tape, &sentences[i], &features[i], &opts, rng)?.total),
        |m, epoch| {
            let Some(val) = val else { return Ok(None) };
            let pred = m.predict_dataset(val, Some(trie))?;
            let f1 = evaluate(&pred, val)?.macro_f1;
            if best.as_ref().map_or(true, |(b, _, _)| f1 > *b) {
                best = Some((f1, epoch, m.params.snapshot()));
            }
            Ok(Some(f1))
        },
    )?;
    let mut report = TrainReport::new(Stage::Trained);
    if let Some((f1, epoch, snapshot)) = best {
        bundle.params.restore(&snapshot)?;
        report.best_epoch = Some(epoch);
        report.best_val_macro_f1 = Some(f1);
    }
    let no_drop = Stage2Options { dropout: 0.0, ..opts };
    let seed = derive_seed(cfg.seed, "stage2/final");
    report.final_loss = Some(mean_loss(bundle, sentences.len(), |m, tape, i| {
        let mut rng = crate::seed::rng_from(seed);
        Ok(m.stage2_loss(tape, &sentences[i], &features[i], &no_drop, &mut rng)?.total)
    })?);
    report.epochs = epochs;
    bundle.params.set_trainable(|_| true);
    bundle.stage = Stage::Trained;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_tags, EntityType};
    use crate::gazetteer::Gazetteer;
    use crate::model::{ClassifierKind, ModelConfig, Vocab};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn data() -> Dataset {
        let rows = [
            ("ada lives in paris", "B-PER O O B-LOC"),
            ("buy apple iphone 13", "O B-PROD I-PROD I-PROD"),
            ("paris is big", "B-LOC O O"),
            ("ada wrote code", "B-PER O O"),
        ];
        Dataset::new(
            "t",
            rows.iter().map(|(t, g)| Sentence::new(toks(t), parse_tags(g).unwrap()).unwrap()).collect(),
        )
    }

    fn bundle(integration: IntegrationMode) -> ModelBundle {
        let cfg = ModelConfig {
            embed_dim: 4,
            hidden: 6,
            gaz_hidden: 4,
            classifier: ClassifierKind::Softmax,
            integration,
            ..ModelConfig::default()
        };
        ModelBundle::new(cfg, Vocab::build([&data()], 1), 3).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { pretrain_epochs: 2, stage1_epochs: 3, stage2_epochs: 2, batch_size: 2, ..TrainConfig::default() }
    }

    fn trie() -> MatchTrie {
        let mut g = Gazetteer::new();
        g.insert_str("paris", EntityType::Loc).unwrap();
        g.insert_str("apple iphone 13", EntityType::Prod).unwrap();
        MatchTrie::build(&g, false)
    }

    #[test]
    fn zero_pretrain_epochs_keep_initialisation() {
        let mut b = bundle(IntegrationMode::Concat);
        let before = b.params.snapshot();
        let cfg = TrainConfig { pretrain_epochs: 0, ..small_cfg() };
        pretrain_encoder(&mut b, &data(), &cfg).unwrap();
        assert_eq!(b.params.snapshot(), before);
        assert_eq!(b.stage, Stage::Pretrained);
    }

    #[test]
    fn pretraining_touches_only_the_encoder() {
        let mut b = bundle(IntegrationMode::Concat);
        let before = b.params.clone();
        pretrain_encoder(&mut b, &data(), &small_cfg()).unwrap();
        let mut encoder_changed = false;
        for ((_, p), (_, q)) in b.params.iter().zip(before.iter()) {
            if p.name.starts_with("encoder.") {
                encoder_changed |= p.value != q.value;
            } else {
                assert_eq!(p.value, q.value, "{}", p.name);
            }
        }
        assert!(encoder_changed);
    }

    #[test]
    fn stage1_requires_pretraining_and_freezes_encoder() {
        let mut b = bundle(IntegrationMode::Concat);
        assert!(matches!(stage1_adapt(&mut b, &data(), &small_cfg()), Err(GainError::Contract(_))));
        pretrain_encoder(&mut b, &data(), &small_cfg()).unwrap();
        let before = b.params.clone();
        let report = stage1_adapt(&mut b, &data(), &small_cfg()).unwrap();
        assert_eq!(report.epochs.len(), 3);
        for ((_, p), (_, q)) in b.params.iter().zip(before.iter()) {
            if p.name.starts_with("encoder.") || p.name.starts_with("classifier.") {
                assert_eq!(p.value, q.value, "{}", p.name);
            }
        }
        assert_eq!(b.stage, Stage::Adapted);
    }

    #[test]
    fn stage2_needs_adaptation_unless_skipped() {
        let mut b = bundle(IntegrationMode::Concat);
        pretrain_encoder(&mut b, &data(), &small_cfg()).unwrap();
        let t = trie();
        assert!(stage2_train(&mut b, &data(), None, &t, &small_cfg()).is_err());
        let cfg = TrainConfig { skip_stage1: true, ..small_cfg() };
        let r = stage2_train(&mut b, &data(), Some(&data()), &t, &cfg).unwrap();
        assert!(r.best_epoch.is_some());
        assert_eq!(b.stage, Stage::Trained);
        assert!(matches!(
            stage2_train(&mut b, &Dataset::default(), None, &t, &cfg),
            Err(GainError::Data(_))
        ));
    }

    #[test]
    fn baseline_never_touches_gazetteer_branch() {
        let mut b = bundle(IntegrationMode::None);
        pretrain_encoder(&mut b, &data(), &small_cfg()).unwrap();
        let before = b.params.clone();
        stage2_train(&mut b, &data(), None, &trie(), &small_cfg()).unwrap();
        for ((_, p), (_, q)) in b.params.iter().zip(before.iter()) {
            if p.name.starts_with("gaznet.") || p.name.starts_with("head_") {
                assert_eq!(p.value, q.value, "{}", p.name);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut b = bundle(IntegrationMode::WeightedSum);
            let cfg = small_cfg();
            pretrain_encoder(&mut b, &data(), &cfg).unwrap();
            stage1_adapt(&mut b, &data(), &cfg).unwrap();
            let r = stage2_train(&mut b, &data(), Some(&data()), &trie(), &cfg).unwrap();
            (checkpoint_to_bytes(&b).unwrap(), serde_json::to_string(&r).unwrap())
        };
        assert_eq!(run(), run());
    }
}
