use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use gain_core::corpus::{
    augment_replace, low_context_templates, parse_conll, rich_context_templates, serialize_conll, synth_corpus, BioMode,
    ContextMode, Dataset, EntityType, Sentence, SynthSpec,
};
use gain_core::ensemble::{combine, read_predictions, write_predictions, PredictionRecord};
use gain_core::experiment::{
    build_task, compare_with_baseline, gradient_suite, pretrained_bundle, render_sweep, sweep_coverage, ExperimentConfig,
    GRADCHECK_TOLERANCE,
};
use gain_core::gazetteer::{coverage_rate, match_features, Gazetteer, MatchTrie};
use gain_core::metrics::evaluate;
use gain_core::model::{IntegrationMode, ModelBundle, Stage, Vocab};
use gain_core::seed::{derive_seed, derived_rng};
use gain_core::train::{
    load_checkpoint, pretrain_encoder, save_checkpoint, stage1_adapt, stage2_train, TrainConfig,
};
use gain_core::GainError;
use serde::de::DeserializeOwned;

use crate::config::{RunConfig, RunDir};
use crate::{Cli, Command, DataCmd, GazetteerCmd, ModelOverride};

/// Clap value parser for enums that deserialize from their config names.
pub fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("invalid value {s:?}"))
}

fn read_conll(path: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| GainError::Data(format!("{}: {e}", path.display())))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    let mode = if cfg.lenient_bio { BioMode::Lenient } else { BioMode::Strict };
    parse_conll(name, &text, mode).map_err(|e| match e {
        GainError::Data(m) => GainError::Data(format!("{}: {m}", path.display())).into(),
        other => other.into(),
    })
}

fn read_gazetteer(path: &Path) -> Result<Gazetteer> {
    Gazetteer::load(path).map_err(|e| match e {
        GainError::Io(io) => GainError::Data(format!("{}: {io}", path.display())).into(),
        GainError::Data(m) => GainError::Data(format!("{}: {m}", path.display())).into(),
        other => other.into(),
    })
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| Path::new("runs").join(default))
}

/// Run directory only when `--out` was given.
fn optional_dir(cli: &Cli, command: &str, cfg: &RunConfig) -> Result<Option<RunDir>> {
    cli.out.as_deref().map(|p| RunDir::create(p, command, cfg)).transpose()
}

fn experiment(cfg: &RunConfig) -> ExperimentConfig {
    ExperimentConfig { task: cfg.task.clone(), model: cfg.model.clone(), train: cfg.train.clone() }
}

/// Loads a checkpoint; a pre-trained one may be rebuilt with another
/// classifier or integration around its encoder.
fn load_model(path: &Path, over: &ModelOverride, cfg: &mut RunConfig) -> Result<ModelBundle> {
    let bundle = load_checkpoint(path).map_err(|e| match e {
        GainError::Io(io) => GainError::Data(format!("{}: {io}", path.display())),
        other => other,
    })?;
    let mut model = bundle.config.clone();
    if let Some(c) = over.classifier {
        model.classifier = c;
    }
    if let Some(i) = over.integration {
        model.integration = i;
    }
    let bundle = if model == bundle.config {
        bundle
    } else {
        if bundle.stage != Stage::Pretrained {
            return Err(GainError::Contract(format!(
                "only a pre-trained checkpoint can change classifier or integration (this one is {})",
                bundle.stage
            ))
            .into());
        }
        ModelBundle::with_encoder_from(model, &bundle, derive_seed(cfg.seed, "init"))?
    };
    cfg.model = bundle.config.clone();
    Ok(bundle)
}

pub fn run(cli: &Cli, mut cfg: RunConfig) -> Result<()> {
    match &cli.command {
        Command::Gazetteer(cmd) => gazetteer(cli, cfg, cmd),
        Command::Data(cmd) => data(cli, cfg, cmd),
        Command::Pretrain(args) => {
            let data = read_conll(&args.data, &cfg)?;
            let mut sets = vec![data.clone()];
            for p in &args.vocab_data {
                sets.push(read_conll(p, &cfg)?);
            }
            let vocab = Vocab::build(sets.iter(), cfg.task.vocab_min_count);
            let dir = RunDir::create(&out_dir(cli, "pretrain"), "pretrain", &cfg)?;
            let mut bundle = ModelBundle::new(cfg.model.clone(), vocab, derive_seed(cfg.seed, "pretrain/init"))?;
            let train = TrainConfig { seed: derive_seed(cfg.seed, "pretrain"), ..cfg.train.clone() };
            let report = pretrain_encoder(&mut bundle, &data, &train)?;
            save_checkpoint(&bundle, dir.file("pretrained.ckpt"))?;
            dir.write_json("report.json", &report)?;
            println!(
                "pre-trained {} epochs, token accuracy {:.4}, vocabulary {}",
                report.epochs.len(),
                report.token_accuracy.unwrap_or(0.0),
                bundle.encoder.vocab.len()
            );
            Ok(())
        }
        Command::Adapt(args) => {
            let mut bundle = load_model(&args.checkpoint, &args.model, &mut cfg)?;
            let data = read_conll(&args.data, &cfg)?;
            let dir = RunDir::create(&out_dir(cli, "adapt"), "adapt", &cfg)?;
            let report = stage1_adapt(&mut bundle, &data, &cfg.train)?;
            save_checkpoint(&bundle, dir.file("adapted.ckpt"))?;
            dir.write_json("report.json", &report)?;
            println!("stage 1: final adaptation loss {:.6}", report.final_loss.unwrap_or(f64::NAN));
            Ok(())
        }
        Command::Train(args) => {
            let mut bundle = load_model(&args.checkpoint, &args.model, &mut cfg)?;
            let data = read_conll(&args.data, &cfg)?;
            let val = args.val.as_deref().map(|p| read_conll(p, &cfg)).transpose()?;
            let gaz = match &args.gazetteer {
                Some(p) => read_gazetteer(p)?,
                None if bundle.integration.uses_gazetteer() => {
                    return Err(GainError::Config("this model needs --gazetteer".into()).into())
                }
                None => Gazetteer::new(),
            };
            let dir = RunDir::create(&out_dir(cli, "train"), "train", &cfg)?;
            let trie = bundle.build_trie(&gaz);
            let report = stage2_train(&mut bundle, &data, val.as_ref(), &trie, &cfg.train)?;
            save_checkpoint(&bundle, dir.file("model.ckpt"))?;
            dir.write_json("report.json", &report)?;
            match (report.best_epoch, report.best_val_macro_f1) {
                (Some(e), Some(f)) => println!("stage 2: best epoch {e}, validation macro-F1 {f:.4}"),
                _ => println!("stage 2: final loss {:.6}", report.final_loss.unwrap_or(f64::NAN)),
            }
            Ok(())
        }
        Command::Eval(args) => {
            let bundle = load_model(&args.checkpoint, &ModelOverride { classifier: None, integration: None }, &mut cfg)?;
            let gold = read_conll(&args.data, &cfg)?;
            let gaz = args.gazetteer.as_deref().map(read_gazetteer).transpose()?.unwrap_or_default();
            let trie = bundle.build_trie(&gaz);
            let id = args.model_id.clone().unwrap_or_else(|| {
                args.checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string()
            });
            let mut records = Vec::with_capacity(gold.len());
            let mut predicted = Vec::with_capacity(gold.len());
            for s in &gold.sentences {
                let (tags, logits) = if s.is_empty() {
                    (Vec::new(), Vec::new())
                } else {
                    let l = bundle.logits(&s.tokens, &bundle.features(Some(&trie), &s.tokens))?;
                    let rows = (0..l.rows()).map(|r| l.row(r).to_vec()).collect();
                    (bundle.decode(&l)?, rows)
                };
                predicted.push(Sentence::new(s.tokens.clone(), tags.clone())?);
                records.push(PredictionRecord { model_id: id.clone(), tokens: s.tokens.clone(), tags: Some(tags), logits: Some(logits) });
            }
            let report = evaluate(&Dataset::new("pred", predicted), &gold)?;
            print!("{}", report.render());
            if let Some(dir) = optional_dir(cli, "eval", &cfg)? {
                dir.write("eval.json", &report.to_json())?;
                dir.write("predictions.jsonl", &write_predictions(&records))?;
            }
            Ok(())
        }
        Command::Ensemble(args) => {
            let mut members = Vec::new();
            for p in &args.inputs {
                let text = fs::read_to_string(p).map_err(|e| GainError::Data(format!("{}: {e}", p.display())))?;
                members.push(read_predictions(&text)?);
            }
            let weights = if args.weights.is_empty() { vec![1.0; members.len()] } else { args.weights.clone() };
            let out = combine(&members, args.mode, &weights, cfg.model.span_max_width)?;
            let dir = RunDir::create(&out_dir(cli, "ensemble"), "ensemble", &cfg)?;
            dir.write("ensemble.jsonl", &write_predictions(&out))?;
            if let Some(g) = &args.gold {
                let gold = read_conll(g, &cfg)?;
                let pred = out
                    .iter()
                    .map(|r| Sentence::new(r.tokens.clone(), r.tags.clone().unwrap_or_default()))
                    .collect::<gain_core::Result<Vec<_>>>()?;
                let report = evaluate(&Dataset::new("ensemble", pred), &gold)?;
                print!("{}", report.render());
                dir.write("eval.json", &report.to_json())?;
            } else {
                println!("combined {} members over {} sentences", members.len(), out.len());
            }
            Ok(())
        }
        Command::CompareBaseline => {
            let dir = RunDir::create(&out_dir(cli, "compare-baseline"), "compare-baseline", &cfg)?;
            let exp = experiment(&cfg);
            let task = build_task(&exp.task, cfg.seed)?;
            let (pre, pre_report) = pretrained_bundle(&task, &exp)?;
            let cmp = compare_with_baseline(&task, &pre, &exp)?;
            dir.write_json("pretrain.json", &pre_report)?;
            dir.write_json("comparison.json", &cmp)?;
            print!("{}", cmp.render());
            Ok(())
        }
        Command::SweepCoverage(args) => {
            if !args.rates.is_empty() {
                cfg.sweep_rates = args.rates.clone();
            }
            if cfg.model.integration != IntegrationMode::WeightedSum {
                log::info!("coverage sweep uses weighted_sum integration");
                cfg.model.integration = IntegrationMode::WeightedSum;
            }
            cfg.validate()?;
            let dir = RunDir::create(&out_dir(cli, "sweep-coverage"), "sweep-coverage", &cfg)?;
            let exp = experiment(&cfg);
            let task = build_task(&exp.task, cfg.seed)?;
            let (pre, _) = pretrained_bundle(&task, &exp)?;
            let rows = sweep_coverage(&task, &pre, &exp, &cfg.sweep_rates)?;
            dir.write_json("sweep.json", &rows)?;
            print!("{}", render_sweep(&rows));
            Ok(())
        }
        Command::Gradcheck => {
            let entries = gradient_suite()?;
            let mut worst = 0.0f64;
            for e in &entries {
                println!("{:<28} {:>10.3e} over {} coordinates", e.name, e.report.max_relative_error, e.report.checked);
                worst = worst.max(e.report.max_relative_error);
            }
            println!("max relative error {worst:.3e}");
            if let Some(dir) = optional_dir(cli, "gradcheck", &cfg)? {
                dir.write_json("gradcheck.json", &entries)?;
            }
            if worst >= GRADCHECK_TOLERANCE {
                return Err(GainError::Numeric(format!("max relative error {worst:.3e} ≥ {GRADCHECK_TOLERANCE}")).into());
            }
            Ok(())
        }
    }
}

fn gazetteer(cli: &Cli, cfg: RunConfig, cmd: &GazetteerCmd) -> Result<()> {
    match cmd {
        GazetteerCmd::Build { data, tsv } => {
            if data.is_empty() && tsv.is_empty() {
                return Err(GainError::Config("give --data and/or --tsv sources".into()).into());
            }
            let mut gaz = Gazetteer::new();
            for p in data {
                let d = read_conll(p, &cfg)?;
                for s in &d.sentences {
                    for span in s.spans() {
                        gaz.insert(s.surface(&span).to_vec(), span.etype)?;
                    }
                }
            }
            for p in tsv {
                gaz.merge(&read_gazetteer(p)?);
            }
            let dir = RunDir::create(&out_dir(cli, "gazetteer"), "gazetteer build", &cfg)?;
            gaz.save(dir.file("gazetteer.tsv"))?;
            for (label, n) in gaz.counts_by_label() {
                println!("{:<5} {n}", label.name());
            }
            println!("total {}", gaz.len());
            Ok(())
        }
        GazetteerCmd::Match { gazetteer, tokens, policy, fold_case, compact } => {
            let gaz = read_gazetteer(gazetteer)?;
            let toks: Vec<String> = tokens.split_whitespace().map(str::to_string).collect();
            let trie = MatchTrie::build(&gaz, *fold_case || cfg.model.fold_case);
            let f = match_features(&trie, &toks, policy.unwrap_or(cfg.model.match_policy));
            print!("{}", f.render(&toks, !compact));
            if let Some(dir) = optional_dir(cli, "gazetteer match", &cfg)? {
                let rows: Vec<&[u8]> = (0..f.rows()).map(|i| &f.row(i)[..]).collect();
                dir.write_json("features.json", &serde_json::json!({ "tokens": toks, "features": rows }))?;
            }
            Ok(())
        }
        GazetteerCmd::Coverage { gazetteer, data } => {
            let gaz = read_gazetteer(gazetteer)?;
            let d = read_conll(data, &cfg)?;
            let report = coverage_rate(&gaz, &d);
            print!("{}", report.render());
            if let Some(dir) = optional_dir(cli, "gazetteer coverage", &cfg)? {
                dir.write_json("coverage.json", &report)?;
            }
            Ok(())
        }
    }
}

fn data(cli: &Cli, mut cfg: RunConfig, cmd: &DataCmd) -> Result<()> {
    match cmd {
        DataCmd::Synth { sentences, context, fresh, gazetteer } => {
            if let Some(n) = sentences {
                cfg.synth.sentences = *n;
            }
            if let Some(c) = context {
                cfg.synth.context = *c;
            }
            cfg.synth.fresh_entities |= *fresh;
            let gaz = match gazetteer {
                Some(p) => read_gazetteer(p)?,
                None if !cfg.synth.fresh_entities => {
                    return Err(GainError::Config("give --gazetteer or --fresh".into()).into())
                }
                None => Gazetteer::new(),
            };
            let spec = SynthSpec {
                n_sentences: cfg.synth.sentences,
                template_pool: match cfg.synth.context {
                    ContextMode::Rich => rich_context_templates(),
                    ContextMode::Low => low_context_templates(),
                },
                context_mode: cfg.synth.context,
                vocab_size: cfg.synth.filler_vocab,
                seed: derive_seed(cfg.seed, "synth"),
                fresh_entities: cfg.synth.fresh_entities,
            };
            let dir = RunDir::create(&out_dir(cli, "synth"), "data synth", &cfg)?;
            let out = synth_corpus(&spec, &gaz)?;
            dir.write("data.conll", &serialize_conll(&out.dataset))?;
            out.companion.save(dir.file("companion.tsv"))?;
            println!("{} sentences, {} tokens, {} gazetteer entries", out.dataset.len(), out.dataset.token_count(), out.companion.len());
            Ok(())
        }
        DataCmd::Augment { data, gazetteer } => {
            let d = read_conll(data, &cfg)?;
            let gaz = read_gazetteer(gazetteer)?;
            let dir = RunDir::create(&out_dir(cli, "augment"), "data augment", &cfg)?;
            let aug = augment_replace(&d, &gaz, &mut derived_rng(cfg.seed, "augment"))?;
            dir.write("augmented.conll", &serialize_conll(&aug))?;
            println!("{} sentences, {} tokens", aug.len(), aug.token_count());
            Ok(())
        }
        DataCmd::Validate { data } => {
            let d = read_conll(data, &cfg)?;
            d.validate()?;
            let mut counts = std::collections::BTreeMap::new();
            for s in &d.sentences {
                for span in s.spans() {
                    *counts.entry(span.etype).or_insert(0usize) += 1;
                }
            }
            println!("{} sentences, {} tokens", d.len(), d.token_count());
            for t in EntityType::ALL {
                println!("{:<5} {}", t.name(), counts.get(&t).copied().unwrap_or(0));
            }
            if let Some(dir) = optional_dir(cli, "data validate", &cfg)? {
                let entities: std::collections::BTreeMap<&str, usize> =
                    EntityType::ALL.iter().map(|t| (t.name(), counts.get(t).copied().unwrap_or(0))).collect();
                dir.write_json(
                    "stats.json",
                    &serde_json::json!({ "sentences": d.len(), "tokens": d.token_count(), "entities": entities }),
                )?;
            }
            Ok(())
        }
    }
}
