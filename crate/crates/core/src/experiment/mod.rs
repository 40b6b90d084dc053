//! End-to-end drivers: the gazetteer-dependent synthetic task, GAIN against
//! the encoder-only baseline, and the coverage-rate sweep.
//!
//! In the synthetic task, entities are fresh random strings placed into short
//! query frames that fit every entity type, so the type of an entity is only
//! recoverable through the gazetteer. The encoder is pre-trained on a
//! separate rich-context corpus where context does reveal types.

mod gradients;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    low_context_templates, rich_context_templates, synth_corpus, ContextMode, Dataset, SynthSpec,
};
use crate::error::{contract, GainError, Result};
use crate::gazetteer::{coverage_rate, subsample_coverage, Gazetteer};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{IntegrationMode, ModelBundle, ModelConfig, Vocab};
use crate::seed::{derive_seed, derived_rng};
use crate::train::{pretrain_encoder, stage1_adapt, stage2_train, TrainConfig, TrainReport};

pub use gradients::{gradient_suite, GradSuiteEntry, GRADCHECK_STEP, GRADCHECK_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub pretrain_sentences: usize,
    pub train_sentences: usize,
    pub val_sentences: usize,
    /// Filler words available for padding.
    pub filler_vocab: usize,
    /// Tokens seen fewer times than this (over pre-training and training
    /// data) map to the unknown id.
    pub vocab_min_count: usize,
}

impl Default for TaskConfig {
    fn default() -> TaskConfig {
        TaskConfig {
            pretrain_sentences: 2000,
            train_sentences: 2000,
            val_sentences: 400,
            filler_vocab: 60,
            vocab_min_count: 2,
        }
    }
}

/// Everything an experiment run is configured by.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct GazetteerTask {
    /// Rich-context corpus for encoder pre-training.
    pub pretrain: Dataset,
    pub train: Dataset,
    pub val: Dataset,
    /// Every entity of `train` and `val` under its label (coverage 1.0).
    pub gazetteer: Gazetteer,
    pub vocab: Vocab,
}

impl GazetteerTask {
    /// Training and validation data together, the base for coverage control.
    pub fn labelled(&self) -> Dataset {
        self.train.concat("task", &self.val)
    }
}

/// Builds the gazetteer-dependent task. Deterministic in `seed`.
pub fn build_task(cfg: &TaskConfig, seed: u64) -> Result<GazetteerTask> {
    let pretrain = synth_corpus(
        &SynthSpec {
            n_sentences: cfg.pretrain_sentences,
            template_pool: rich_context_templates(),
            context_mode: ContextMode::Rich,
            vocab_size: cfg.filler_vocab,
            seed: derive_seed(seed, "task/pretrain"),
            fresh_entities: true,
        },
        &Gazetteer::new(),
    )?
    .dataset;
    // One call for train and validation, so no entity surface is shared.
    let n = cfg.train_sentences + cfg.val_sentences;
    let labelled = synth_corpus(
        &SynthSpec {
            n_sentences: n,
            template_pool: low_context_templates(),
            context_mode: ContextMode::Low,
            vocab_size: cfg.filler_vocab,
            seed: derive_seed(seed, "task/labelled"),
            fresh_entities: true,
        },
        &Gazetteer::new(),
    )?;
    let train_idx: Vec<usize> = (0..cfg.train_sentences).collect();
    let val_idx: Vec<usize> = (cfg.train_sentences..n).collect();
    let train = labelled.dataset.subset("task-train", &train_idx);
    let val = labelled.dataset.subset("task-val", &val_idx);
    let vocab = Vocab::build([&pretrain, &train], cfg.vocab_min_count);
    Ok(GazetteerTask { pretrain, train, val, gazetteer: labelled.companion, vocab })
}

/// A bundle whose encoder is pre-trained on the task's rich-context corpus.
pub fn pretrained_bundle(task: &GazetteerTask, cfg: &ExperimentConfig) -> Result<(ModelBundle, TrainReport)> {
    let mut bundle = ModelBundle::new(cfg.model.clone(), task.vocab.clone(), derive_seed(cfg.train.seed, "pretrain/init"))?;
    let train_cfg = TrainConfig { seed: derive_seed(cfg.train.seed, "pretrain"), ..cfg.train.clone() };
    let report = pretrain_encoder(&mut bundle, &task.pretrain, &train_cfg)?;
    Ok((bundle, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantResult {
    pub label: String,
    pub integration: IntegrationMode,
    /// Average coverage of the gazetteer used, over train and validation.
    pub coverage: f64,
    pub eval: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage1: Option<TrainReport>,
    pub stage2: TrainReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_gate: Option<f64>,
}

/// Stage 1 (when the integration uses the gazetteer) and stage 2 from the
/// pre-trained encoder, then validation scores. All randomness derives from
/// `cfg.train.seed` and `label`.
pub fn train_variant(
    label: &str,
    task: &GazetteerTask,
    pretrained: &ModelBundle,
    gazetteer: &Gazetteer,
    model: ModelConfig,
    cfg: &TrainConfig,
) -> Result<(VariantResult, ModelBundle)> {
    let seed = derive_seed(cfg.seed, label);
    let mut bundle = ModelBundle::with_encoder_from(model, pretrained, derive_seed(seed, "init"))?;
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let stage1 = if bundle.integration.uses_gazetteer() && !cfg.skip_stage1 {
        Some(stage1_adapt(&mut bundle, &task.train, &cfg)?)
    } else {
        None
    };
    let trie = bundle.build_trie(gazetteer);
    let stage2 = stage2_train(&mut bundle, &task.train, Some(&task.val), &trie, &cfg)?;
    let pred = bundle.predict_dataset(&task.val, Some(&trie))?;
    let eval = evaluate(&pred, &task.val)?;
    log::info!("{label}: macro-F1 {:.4}", eval.macro_f1);
    let result = VariantResult {
        label: label.to_string(),
        integration: bundle.integration.mode,
        coverage: coverage_rate(gazetteer, &task.labelled()).average_rate,
        eval,
        stage1,
        stage2,
        mean_gate: bundle.mean_gate(),
    };
    Ok((result, bundle))
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub gain: VariantResult,
    pub baseline: VariantResult,
    /// GAIN macro-F1 minus baseline macro-F1.
    pub delta_macro_f1: f64,
}

impl Comparison {
    pub fn render(&self) -> String {
        let mut out = String::from("model      macro@F1   MD@F1\n");
        for r in [&self.baseline, &self.gain] {
            let _ = writeln!(out, "{:<9} {:>9.4} {:>7.4}", r.label, r.eval.macro_f1, r.eval.md_f1);
        }
        let _ = writeln!(out, "delta     {:>+9.4}", self.delta_macro_f1);
        out
    }
}

/// GAIN (with `cfg.model`'s integration, full-coverage gazetteer) against the
/// encoder-only baseline trained the same way.
pub fn compare_with_baseline(
    task: &GazetteerTask,
    pretrained: &ModelBundle,
    cfg: &ExperimentConfig,
) -> Result<Comparison> {
    contract!(
        cfg.model.integration != IntegrationMode::None,
        "the GAIN side needs concat or weighted_sum integration"
    );
    let (gain, _) = train_variant("gain", task, pretrained, &task.gazetteer, cfg.model.clone(), &cfg.train)?;
    let baseline_model = ModelConfig { integration: IntegrationMode::None, ..cfg.model.clone() };
    let (baseline, _) = train_variant("baseline", task, pretrained, &task.gazetteer, baseline_model, &cfg.train)?;
    let delta_macro_f1 = gain.eval.macro_f1 - baseline.eval.macro_f1;
    Ok(Comparison { gain, baseline, delta_macro_f1 })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub rate: f64,
    /// Measured average coverage of the subsampled gazetteer.
    pub coverage: f64,
    pub macro_f1: f64,
    pub mean_gate: f64,
}

pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::from("rate   coverage  macro@F1  mean σ(λ)\n");
    for r in rows {
        let _ = writeln!(out, "{:<5.2} {:>9.4} {:>9.4} {:>10.4}", r.rate, r.coverage, r.macro_f1, r.mean_gate);
    }
    out
}

/// Coverage-rate sweep with weighted-sum integration: for each rate, a
/// gazetteer keeping that fraction of the task's entities per label, a full
/// stage-1 + stage-2 run, and validation macro-F1 with mean `σ(λ)`.
pub fn sweep_coverage(
    task: &GazetteerTask,
    pretrained: &ModelBundle,
    cfg: &ExperimentConfig,
    rates: &[f64],
) -> Result<Vec<SweepRow>> {
    contract!(
        cfg.model.integration == IntegrationMode::WeightedSum,
        "the coverage sweep needs weighted_sum integration"
    );
    if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(GainError::Config(format!("coverage rate {r} outside [0, 1]")));
    }
    let labelled = task.labelled();
    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        let label = format!("sweep/{rate}");
        let gaz = subsample_coverage(&labelled, rate, &mut derived_rng(cfg.train.seed, &format!("{label}/gazetteer")));
        let (r, _) = train_variant(&label, task, pretrained, &gaz, cfg.model.clone(), &cfg.train)?;
        rows.push(SweepRow {
            rate,
            coverage: r.coverage,
            macro_f1: r.eval.macro_f1,
            mean_gate: r.mean_gate.expect("weighted sum has a gate"),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityType;

    fn small() -> TaskConfig {
        TaskConfig { pretrain_sentences: 50, train_sentences: 60, val_sentences: 20, ..TaskConfig::default() }
    }

    #[test]
    fn task_is_deterministic_and_gazetteer_complete() {
        let a = build_task(&small(), 1).unwrap();
        let b = build_task(&small(), 1).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.pretrain, b.pretrain);
        assert_eq!((a.train.len(), a.val.len()), (60, 20));
        assert_eq!(coverage_rate(&a.gazetteer, &a.labelled()).average_rate, 1.0);
        assert!(a.train.sentences.iter().all(|s| (3..=8).contains(&s.len())));
    }

    #[test]
    fn task_entities_are_unknown_to_the_encoder() {
        let t = build_task(&small(), 2).unwrap();
        let unk = t.vocab.id(crate::model::UNK);
        let mut entity_tokens = 0;
        let mut unknown = 0;
        for s in &t.val.sentences {
            for span in s.spans() {
                for tok in s.surface(&span) {
                    entity_tokens += 1;
                    unknown += usize::from(t.vocab.id(tok) == unk);
                }
            }
        }
        assert!(entity_tokens > 0 && unknown == entity_tokens);
        assert!(t.gazetteer.labels().count() == EntityType::ALL.len());
    }

    #[test]
    fn sweep_rejects_wrong_mode_and_rates() {
        let task = build_task(&small(), 3).unwrap();
        let cfg = ExperimentConfig {
            task: small(),
            model: ModelConfig { embed_dim: 4, hidden: 4, gaz_hidden: 4, ..ModelConfig::default() },
            train: TrainConfig { pretrain_epochs: 0, ..TrainConfig::default() },
        };
        let (pre, _) = pretrained_bundle(&task, &cfg).unwrap();
        assert!(sweep_coverage(&task, &pre, &cfg, &[0.5]).is_err());
        let ws = ExperimentConfig {
            model: ModelConfig { integration: IntegrationMode::WeightedSum, ..cfg.model.clone() },
            ..cfg
        };
        assert!(matches!(sweep_coverage(&task, &pre, &ws, &[1.5]), Err(GainError::Config(_))));
    }
}
