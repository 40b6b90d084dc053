use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::classifier::{ClassifierHead, ClassifierKind, DEFAULT_SPAN_WIDTH};
use super::encoder::{Encoder, GazNet, Vocab};
use super::integrate::{Integration, IntegrationMode};
use crate::corpus::{tags_to_onehot, Dataset, Sentence, Tag, NUM_TAGS};
use crate::error::{contract, GainError, Result};
use crate::gazetteer::{match_features, FeatureMatrix, Gazetteer, MatchPolicy, MatchTrie};
use crate::numcore::{
    dropout, kl_pair_loss, mse_loss, Linear, ParamGroup, ParamSet, Tape, Tensor, Var,
};
use crate::seed::derived_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// `D`, the width of both `e` and `g`.
    pub hidden: usize,
    /// Width of the gazetteer network's dense layer.
    pub gaz_hidden: usize,
    pub classifier: ClassifierKind,
    pub integration: IntegrationMode,
    pub span_max_width: usize,
    pub match_policy: MatchPolicy,
    pub fold_case: bool,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            embed_dim: 32,
            hidden: 64,
            gaz_hidden: 32,
            classifier: ClassifierKind::Softmax,
            integration: IntegrationMode::Concat,
            span_max_width: DEFAULT_SPAN_WIDTH,
            match_policy: MatchPolicy::Longest,
            fold_case: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GainError::Config(m));
        if self.embed_dim == 0 || self.gaz_hidden == 0 {
            return bad("embed_dim and gaz_hidden must be positive".into());
        }
        if self.hidden == 0 || self.hidden % 2 != 0 {
            return bad(format!("hidden must be positive and even, got {}", self.hidden));
        }
        if self.classifier == ClassifierKind::Span && self.span_max_width == 0 {
            return bad("span_max_width must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Freshly initialised; the encoder has not been pre-trained.
    Untrained,
    Pretrained,
    Adapted,
    Trained,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Untrained => "untrained",
            Stage::Pretrained => "pretrained",
            Stage::Adapted => "adapted",
            Stage::Trained => "trained",
        })
    }
}

/// Distance used to align the two projected tag distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptationLoss {
    #[default]
    Kl,
    Mse,
}

/// What the gazetteer network sees when computing L1 during stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L1Source {
    /// One-hot gold tags.
    #[default]
    Gold,
    /// Gazetteer match features of the sentence.
    Matched,
}

/// Per-sentence knobs for the stage-2 objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Options {
    pub alpha: f64,
    pub adaptation: AdaptationLoss,
    pub l1_source: L1Source,
    pub dropout: f64,
}

/// Nodes of the stage-2 objective `L3 = α·L1 + L2`.
#[derive(Debug, Clone, Copy)]
pub struct Stage2Loss {
    pub total: Var,
    /// Absent for the encoder-only baseline.
    pub l1: Option<Var>,
    pub l2: Var,
}

/// All networks of the system sharing one parameter set.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub encoder: Encoder,
    pub gaznet: GazNet,
    /// Projects `e` to tag logits `e^t`.
    pub head_e: Linear,
    /// Projects `g_r` to tag logits `g_r^t`.
    pub head_g: Linear,
    pub integration: Integration,
    pub classifier: ClassifierHead,
    pub stage: Stage,
    pub seed: u64,
}

impl ModelBundle {
    /// Builds and initialises every parameter from `seed`. Parameter creation
    /// order is fixed, so the same config, vocabulary and seed always yield the
    /// same names, shapes and values.
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<ModelBundle> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = derived_rng(seed, "init");
        let d = config.hidden;
        let encoder = Encoder::new(&mut params, vocab, config.embed_dim, d, &mut rng)?;
        let gaznet = GazNet::new(&mut params, config.gaz_hidden, d, &mut rng)?;
        let head_e = Linear::new(&mut params, "head_e", ParamGroup::Other, d, NUM_TAGS, &mut rng)?;
        let head_g = Linear::new(&mut params, "head_g", ParamGroup::GazetteerNet, d, NUM_TAGS, &mut rng)?;
        let integration = Integration::new(&mut params, config.integration, d)?;
        let classifier = ClassifierHead::new(
            &mut params,
            config.classifier,
            integration.output_dim(),
            config.span_max_width,
            &mut rng,
        )?;
        Ok(ModelBundle {
            config,
            params,
            encoder,
            gaznet,
            head_e,
            head_g,
            integration,
            classifier,
            stage: Stage::Untrained,
            seed,
        })
    }

    /// A fresh bundle under `config` that takes over the pre-trained encoder
    /// (vocabulary and weights) of `source`.
    pub fn with_encoder_from(config: ModelConfig, source: &ModelBundle, seed: u64) -> Result<ModelBundle> {
        contract!(source.stage >= Stage::Pretrained, "source encoder is not pre-trained");
        contract!(
            config.embed_dim == source.config.embed_dim && config.hidden == source.config.hidden,
            "encoder dimensions differ from the source bundle"
        );
        let mut b = ModelBundle::new(config, source.encoder.vocab.clone(), seed)?;
        b.copy_params_from(&source.params, "encoder.")?;
        b.stage = Stage::Pretrained;
        Ok(b)
    }

    /// Copies values of every parameter whose name starts with `prefix` from
    /// `src`, matching by name. Shapes must agree.
    pub fn copy_params_from(&mut self, src: &ParamSet, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for (_, p) in src.iter().filter(|(_, p)| p.name.starts_with(prefix)) {
            let id = self
                .params
                .id(&p.name)
                .ok_or_else(|| GainError::Contract(format!("no parameter named {}", p.name)))?;
            let dst = self.params.get_mut(id);
            contract!(dst.value.same_shape(&p.value), "shape mismatch for {}", p.name);
            dst.value = p.value.clone();
            copied += 1;
        }
        Ok(copied)
    }

    pub fn build_trie(&self, gaz: &Gazetteer) -> MatchTrie {
        MatchTrie::build(gaz, self.config.fold_case)
    }

    /// Gazetteer features for `tokens`; all-`O` rows without a trie.
    pub fn features(&self, trie: Option<&MatchTrie>, tokens: &[String]) -> FeatureMatrix {
        match trie {
            Some(t) => match_features(t, tokens, self.config.match_policy),
            None => match_features(&MatchTrie::build(&Gazetteer::new(), false), tokens, self.config.match_policy),
        }
    }

    pub fn encode(&self, tape: &mut Tape, tokens: &[String]) -> Result<Var> {
        self.encoder.forward(tape, tokens)
    }

    /// L1 between `head_g(g_r)` and `head_e(e)`.
    pub fn adaptation_loss(&self, tape: &mut Tape, e: Var, g_r: Var, kind: AdaptationLoss) -> Result<Var> {
        let et = self.head_e.forward(tape, e)?;
        let gt = self.head_g.forward(tape, g_r)?;
        match kind {
            AdaptationLoss::Kl => kl_pair_loss(tape, gt, et),
            AdaptationLoss::Mse => mse_loss(tape, gt, et),
        }
    }

    /// Stage-1 objective for one sentence: the gazetteer network reads gold
    /// one-hots and is aligned with the encoder.
    pub fn stage1_loss(&self, tape: &mut Tape, sentence: &Sentence, kind: AdaptationLoss) -> Result<Var> {
        let e = self.encode(tape, &sentence.tokens)?;
        let g_r = self.gaznet.forward(tape, &tags_to_onehot(&sentence.tags))?;
        self.adaptation_loss(tape, e, g_r, kind)
    }

    /// Fused classifier input. Dropout is applied when `rng` is given.
    fn fused<R: Rng>(
        &self,
        tape: &mut Tape,
        e: Var,
        features: &FeatureMatrix,
        p: f64,
        rng: Option<&mut R>,
    ) -> Result<Var> {
        let g = if self.integration.uses_gazetteer() {
            Some(self.gaznet.forward(tape, features)?)
        } else {
            None
        };
        let fused = self.integration.forward(tape, e, g)?;
        match rng {
            Some(rng) => dropout(tape, fused, p, rng),
            None => Ok(fused),
        }
    }

    /// Stage-2 objective `L3 = α·L1 + L2` for one sentence with its
    /// gazetteer features. The baseline (no integration) has `L3 = L2`.
    pub fn stage2_loss<R: Rng>(
        &self,
        tape: &mut Tape,
        sentence: &Sentence,
        features: &FeatureMatrix,
        opts: &Stage2Options,
        rng: &mut R,
    ) -> Result<Stage2Loss> {
        contract!(features.rows() == sentence.len(), "feature rows vs sentence length");
        let e = self.encode(tape, &sentence.tokens)?;
        let fused = self.fused(tape, e, features, opts.dropout, Some(rng))?;
        let l2 = self.classifier.loss(tape, fused, &sentence.tags)?;
        if !self.integration.uses_gazetteer() {
            return Ok(Stage2Loss { total: l2, l1: None, l2 });
        }
        let g_r = match opts.l1_source {
            L1Source::Gold => self.gaznet.forward(tape, &tags_to_onehot(&sentence.tags))?,
            L1Source::Matched => self.gaznet.forward(tape, features)?,
        };
        let l1 = self.adaptation_loss(tape, e, g_r, opts.adaptation)?;
        let weighted = tape.scale(l1, opts.alpha);
        let total = tape.add(weighted, l2)?;
        Ok(Stage2Loss { total, l1: Some(l1), l2 })
    }

    /// Classifier logits at inference time (no dropout).
    pub fn logits(&self, tokens: &[String], features: &FeatureMatrix) -> Result<Tensor> {
        contract!(features.rows() == tokens.len(), "feature rows vs token count");
        let mut tape = Tape::new(&self.params);
        let e = self.encode(&mut tape, tokens)?;
        let fused = self.fused::<rand_chacha::ChaCha8Rng>(&mut tape, e, features, 0.0, None)?;
        let logits = self.classifier.logits(&mut tape, fused)?;
        let out = tape.value(logits).clone();
        out.check_finite("classifier logits")?;
        Ok(out)
    }

    pub fn decode(&self, logits: &Tensor) -> Result<Vec<Tag>> {
        self.classifier.decode(&self.params, logits)
    }

    pub fn predict(&self, tokens: &[String], trie: Option<&MatchTrie>) -> Result<Vec<Tag>> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let features = self.features(trie, tokens);
        self.decode(&self.logits(tokens, &features)?)
    }

    /// Predicts every sentence; sentences are processed in parallel when the
    /// `parallel` feature is on. Output order follows the input.
    pub fn predict_dataset(&self, data: &Dataset, trie: Option<&MatchTrie>) -> Result<Dataset> {
        let run = |s: &Sentence| -> Result<Sentence> {
            Sentence::new(s.tokens.clone(), self.predict(&s.tokens, trie)?)
        };
        #[cfg(feature = "parallel")]
        let sentences: Result<Vec<Sentence>> = {
            use rayon::prelude::*;
            data.sentences.par_iter().map(run).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let sentences: Result<Vec<Sentence>> = data.sentences.iter().map(run).collect();
        Ok(Dataset::new(format!("{}.pred", data.name), sentences?))
    }

    /// Mean `σ(λ)` for weighted-sum integration.
    pub fn mean_gate(&self) -> Option<f64> {
        self.integration.mean_gate(&self.params)
    }
}
