//! Finite-difference check of every differentiable op and of the full
//! stage-2 objective, as run by `gain gradcheck`.

use rand::Rng;
use serde::Serialize;

use crate::corpus::{parse_tags, Dataset, EntityType, Sentence, NUM_TAGS};
use crate::error::Result;
use crate::gazetteer::Gazetteer;
use crate::model::{crf_nll, AdaptationLoss, ClassifierKind, IntegrationMode, L1Source, ModelBundle, ModelConfig, Stage2Options, Vocab};
use crate::numcore::{grad_check, kl_pair_loss, BiLstm, GradCheckReport, Linear, ParamGroup, ParamSet, Tape, Tensor, Var};
use crate::seed::rng_from;

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradSuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

type Case = (&'static str, Box<dyn Fn(&mut Tape) -> Result<Var>>);

fn readout(tape: &mut Tape, x: Var) -> Result<Var> {
    let sq = tape.mul(x, x)?;
    let t = tape.tanh(x);
    let y = tape.add(sq, t)?;
    Ok(tape.sum(y))
}

fn unary(f: fn(&mut Tape, Var) -> Var, a: crate::numcore::ParamId) -> Box<dyn Fn(&mut Tape) -> Result<Var>> {
    Box::new(move |t| {
        let x = t.param(a);
        let z = f(t, x);
        readout(t, z)
    })
}

fn op_cases() -> Result<(ParamSet, Vec<Case>)> {
    let mut rng = rng_from(3);
    let mut params = ParamSet::new();
    let mut add = |params: &mut ParamSet, name: &str, r: usize, c: usize| -> Result<_> {
        let t = Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        params.add(name, ParamGroup::Other, t)
    };
    let a = add(&mut params, "a", 3, 4)?;
    let b = add(&mut params, "b", 3, 4)?;
    let w = add(&mut params, "w", 4, 5)?;
    let r = add(&mut params, "r", 1, 4)?;
    let table = add(&mut params, "table", 6, 4)?;
    let em = add(&mut params, "emissions", 3, NUM_TAGS)?;
    let tr = add(&mut params, "transitions", NUM_TAGS, NUM_TAGS)?;
    let st = add(&mut params, "start", 1, NUM_TAGS)?;
    let en = add(&mut params, "end", 1, NUM_TAGS)?;
    let mut init = rng_from(4);
    let lin = Linear::new(&mut params, "linear", ParamGroup::Other, 4, 3, &mut init)?;
    let lstm = BiLstm::new(&mut params, "bilstm", ParamGroup::Other, 4, 6, &mut init)?;

    let binary = |f: fn(&mut Tape, Var, Var) -> Result<Var>, x: _, y: _| -> Box<dyn Fn(&mut Tape) -> Result<Var>> {
        Box::new(move |t| {
            let (u, v) = (t.param(x), t.param(y));
            let z = f(t, u, v)?;
            readout(t, z)
        })
    };
    let cases: Vec<Case> = vec![
        ("matmul", binary(|t, x, y| t.matmul(x, y), a, w)),
        ("add", binary(|t, x, y| t.add(x, y), a, b)),
        ("sub", binary(|t, x, y| t.sub(x, y), a, b)),
        ("mul", binary(|t, x, y| t.mul(x, y), a, b)),
        ("add_row", binary(|t, x, y| t.add_row(x, y), a, r)),
        ("mul_row", binary(|t, x, y| t.mul_row(x, y), a, r)),
        ("concat_cols", binary(|t, x, y| t.concat_cols(&[x, y]), a, b)),
        ("stack_rows", binary(|t, x, y| t.stack_rows(&[x, y]), a, r)),
        ("scale", unary(|t, x| t.scale(x, -1.7), a)),
        ("sigmoid", unary(|t, x| t.sigmoid(x), a)),
        ("tanh", unary(|t, x| t.tanh(x), a)),
        ("relu", unary(|t, x| t.relu(x), a)),
        ("exp", unary(|t, x| t.exp(x), a)),
        ("log_softmax", unary(|t, x| t.log_softmax(x), a)),
        ("mask", Box::new(move |t| {
            let x = t.param(a);
            let z = t.mask(x, (0..12).map(|i| f64::from(i % 3 != 0)).collect())?;
            readout(t, z)
        })),
        ("slice_cols", Box::new(move |t| {
            let x = t.param(a);
            let z = t.slice_cols(x, 1, 3)?;
            readout(t, z)
        })),
        ("row", Box::new(move |t| {
            let x = t.param(a);
            let z = t.row(x, 2)?;
            readout(t, z)
        })),
        ("gather", Box::new(move |t| {
            let x = t.param(table);
            let z = t.gather(x, &[5, 0, 5, 2])?;
            readout(t, z)
        })),
        ("cross_entropy", Box::new(move |t| {
            let x = t.param(a);
            t.cross_entropy(x, &[0, 3, 1])
        })),
        ("mse", Box::new(move |t| {
            let (x, y) = (t.param(a), t.param(b));
            t.mse(x, y)
        })),
        ("kl_pair_loss", Box::new(move |t| {
            let (x, y) = (t.param(a), t.param(b));
            kl_pair_loss(t, x, y)
        })),
        ("crf_nll", Box::new(move |t| {
            let (e, m, s, f) = (t.param(em), t.param(tr), t.param(st), t.param(en));
            crf_nll(t, e, m, s, f, &[4, 5, 0])
        })),
        ("linear", Box::new(move |t| {
            let x = t.param(a);
            let z = lin.forward(t, x)?;
            readout(t, z)
        })),
        ("bilstm", Box::new(move |t| {
            let x = t.param(a);
            let z = lstm.forward(t, x)?;
            readout(t, z)
        })),
    ];
    Ok((params, cases))
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Mean stage-2 objective over a two-sentence batch, every classifier and
/// both gazetteer integrations, all parameters drawn from U(-1, 1).
fn stage2_cases() -> Result<Vec<GradSuiteEntry>> {
    let data = vec![
        Sentence::new(toks("where to buy apple iphone 13"), parse_tags("O O O B-PROD I-PROD I-PROD")?)?,
        Sentence::new(toks("ada visits paris"), parse_tags("B-PER O B-LOC")?)?,
    ];
    let mut gaz = Gazetteer::new();
    gaz.insert_str("apple iphone 13", EntityType::Prod)?;
    gaz.insert_str("apple", EntityType::Corp)?;
    gaz.insert_str("paris", EntityType::Loc)?;
    let vocab = Vocab::build([&Dataset::new("batch", data.clone())], 1);
    let mut out = Vec::new();
    for kind in [ClassifierKind::Softmax, ClassifierKind::Crf, ClassifierKind::Span] {
        for integration in [IntegrationMode::Concat, IntegrationMode::WeightedSum] {
            let cfg = ModelConfig { embed_dim: 3, hidden: 4, gaz_hidden: 3, classifier: kind, integration, ..ModelConfig::default() };
            let mut bundle = ModelBundle::new(cfg, vocab.clone(), 17)?;
            let mut values = rng_from(5);
            for p in bundle.params.iter_mut() {
                for v in p.value.data_mut() {
                    *v = values.gen_range(-1.0..1.0);
                }
            }
            let trie = bundle.build_trie(&gaz);
            let frozen = bundle.clone();
            let opts = Stage2Options {
                alpha: kind.default_alpha(),
                adaptation: AdaptationLoss::Kl,
                l1_source: L1Source::Gold,
                dropout: 0.0,
            };
            let report = grad_check(&mut bundle.params, GRADCHECK_STEP, usize::MAX, &mut rng_from(1), |tape| {
                let mut rng = rng_from(0);
                let mut parts = Vec::new();
                for s in &data {
                    let f = frozen.features(Some(&trie), &s.tokens);
                    parts.push(frozen.stage2_loss(tape, s, &f, &opts, &mut rng)?.total);
                }
                let sum = tape.add(parts[0], parts[1])?;
                Ok(tape.scale(sum, 0.5))
            })?;
            out.push(GradSuiteEntry { name: format!("stage2/{}/{}", kind_name(kind), integration_name(integration)), report });
        }
    }
    Ok(out)
}

fn kind_name(k: ClassifierKind) -> &'static str {
    match k {
        ClassifierKind::Softmax => "softmax",
        ClassifierKind::Crf => "crf",
        ClassifierKind::Span => "span",
    }
}

fn integration_name(m: IntegrationMode) -> &'static str {
    match m {
        IntegrationMode::Concat => "concat",
        IntegrationMode::WeightedSum => "weighted_sum",
        IntegrationMode::None => "none",
    }
}

/// Runs every check with `h = 1e-5` over all coordinates.
pub fn gradient_suite() -> Result<Vec<GradSuiteEntry>> {
    let (mut params, cases) = op_cases()?;
    let mut out = Vec::new();
    for (name, f) in &cases {
        let report = grad_check(&mut params, GRADCHECK_STEP, usize::MAX, &mut rng_from(0), f)?;
        out.push(GradSuiteEntry { name: (*name).to_string(), report });
    }
    out.extend(stage2_cases()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let entries = gradient_suite().unwrap();
        assert_eq!(entries.len(), 24 + 6);
        for e in &entries {
            assert!(e.report.checked > 0, "{}", e.name);
            assert!(e.report.max_relative_error < GRADCHECK_TOLERANCE, "{}: {:?}", e.name, e.report);
        }
    }
}
