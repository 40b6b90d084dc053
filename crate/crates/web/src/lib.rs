//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function takes plain text and returns a JSON string; the
//! `*_json` functions hold the logic so they can be tested natively.

use gain_core::corpus::{parse_conll, BioMode, TagScheme};
use gain_core::gazetteer::{match_features, match_tokens, Gazetteer, MatchPolicy, MatchTrie};
use gain_core::metrics::evaluate;
use gain_core::numcore::{kl_pair_loss, softmax_rows, ParamSet, Tape, Tensor};
use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

type Out = Result<String, String>;

fn json<T: Serialize>(v: &T) -> Out {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct MatchOutput {
    tokens: Vec<String>,
    columns: Vec<&'static str>,
    rows: Vec<Vec<u8>>,
    matches: Vec<(usize, usize, &'static str)>,
}

pub fn match_features_json(gazetteer_tsv: &str, tokens: &str, policy: &str, fold_case: bool) -> Out {
    let gaz = Gazetteer::from_tsv(gazetteer_tsv).map_err(|e| e.to_string())?;
    let policy = match policy {
        "longest" => MatchPolicy::Longest,
        "all" => MatchPolicy::All,
        other => return Err(format!("unknown policy {other:?}")),
    };
    let tokens: Vec<String> = tokens.split_whitespace().map(str::to_string).collect();
    let trie = MatchTrie::build(&gaz, fold_case);
    let features = match_features(&trie, &tokens, policy);
    let matches = match_tokens(&trie, &tokens, policy)
        .into_iter()
        .map(|m| (m.start, m.length, m.label.name()))
        .collect();
    let rows = (0..features.rows()).map(|i| features.row(i).to_vec()).collect();
    json(&MatchOutput { tokens, columns: TagScheme::TAGS.to_vec(), rows, matches })
}

fn parse_matrix(text: &str) -> Result<Tensor, String> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err("empty matrix".into());
    }
    if let Some(r) = rows.iter().position(|r| r.len() != cols) {
        return Err(format!("row {} has {} values, expected {cols}", r + 1, rows[r].len()));
    }
    Tensor::matrix(rows.len(), cols, rows.concat()).map_err(|e| e.to_string())
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.cols()).map(<[f64]>::to_vec).collect()
}

#[derive(Serialize)]
struct KlOutput {
    loss: f64,
    p: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    grad_a: Vec<Vec<f64>>,
    grad_b: Vec<Vec<f64>>,
}

/// Symmetric KL between two logit matrices given as text, one row per
/// line, with its gradient w.r.t. each side.
pub fn kl_pair_json(a_logits: &str, b_logits: &str) -> Out {
    let (a, b) = (parse_matrix(a_logits)?, parse_matrix(b_logits)?);
    let params = ParamSet::new();
    let mut tape = Tape::new(&params);
    let (va, vb) = (tape.leaf(a.clone(), true), tape.leaf(b.clone(), true));
    let loss = kl_pair_loss(&mut tape, va, vb).map_err(|e| e.to_string())?;
    tape.check_finite().map_err(|e| e.to_string())?;
    let grads = tape.backward(loss);
    let grad = |v| grads.wrt(v).map(to_rows).unwrap_or_default();
    json(&KlOutput {
        loss: tape.value(loss).data()[0],
        p: to_rows(&softmax_rows(&a)),
        q: to_rows(&softmax_rows(&b)),
        grad_a: grad(va),
        grad_b: grad(vb),
    })
}

#[derive(Serialize)]
struct ScoreOutput {
    table: String,
    report: gain_core::metrics::EvalReport,
}

/// Entity-level scores of predicted CoNLL text against gold.
pub fn score_json(gold_conll: &str, pred_conll: &str) -> Out {
    let gold = parse_conll("gold", gold_conll, BioMode::Strict).map_err(|e| e.to_string())?;
    let pred = parse_conll("pred", pred_conll, BioMode::Lenient).map_err(|e| e.to_string())?;
    let report = evaluate(&pred, &gold).map_err(|e| e.to_string())?;
    json(&ScoreOutput { table: report.render(), report })
}

#[wasm_bindgen(js_name = matchFeatures)]
pub fn match_features_js(gazetteer_tsv: &str, tokens: &str, policy: &str, fold_case: bool) -> Out {
    match_features_json(gazetteer_tsv, tokens, policy, fold_case)
}

#[wasm_bindgen(js_name = klPair)]
pub fn kl_pair_js(a_logits: &str, b_logits: &str) -> Out {
    kl_pair_json(a_logits, b_logits)
}

#[wasm_bindgen(js_name = score)]
pub fn score_js(gold_conll: &str, pred_conll: &str) -> Out {
    score_json(gold_conll, pred_conll)
}
