use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::Result;
use crate::gazetteer::FeatureMatrix;
use crate::numcore::{BiLstm, Embedding, Linear, ParamGroup, ParamSet, Tape, Tensor, Var};

pub const UNK: &str = "<unk>";

/// Token → id map; id 0 is the unknown token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Tokens seen at least `min_count` times, ordered by descending count then
    /// lexicographically.
    pub fn build<'a>(datasets: impl IntoIterator<Item = &'a Dataset>, min_count: usize) -> Vocab {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for d in datasets {
            for s in &d.sentences {
                for t in &s.tokens {
                    *counts.entry(t.as_str()).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(&str, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens = vec![UNK.to_string()];
        tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()).filter(|t| t != UNK));
        Vocab::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl From<Vec<String>> for Vocab {
    fn from(mut tokens: Vec<String>) -> Vocab {
        if tokens.first().map(String::as_str) != Some(UNK) {
            tokens.insert(0, UNK.to_string());
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Vec<String> {
        v.tokens
    }
}

/// Stand-in for a pre-trained language model: embeddings followed by one
/// BiLSTM layer, producing an N×D representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub vocab: Vocab,
    pub embedding: Embedding,
    pub bilstm: BiLstm,
}

impl Encoder {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        vocab: Vocab,
        embed_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Encoder> {
        let embedding =
            Embedding::new(params, "encoder.embed", ParamGroup::Encoder, vocab.len(), embed_dim, rng)?;
        let bilstm = BiLstm::new(params, "encoder.bilstm", ParamGroup::Encoder, embed_dim, hidden, rng)?;
        Ok(Encoder { vocab, embedding, bilstm })
    }

    pub fn output_dim(&self) -> usize {
        self.bilstm.output_dim()
    }

    /// `e`: one row per token. Out-of-vocabulary tokens map to the unknown id.
    pub fn forward(&self, tape: &mut Tape, tokens: &[String]) -> Result<Var> {
        let ids = self.vocab.ids(tokens);
        let x = self.embedding.forward(tape, &ids)?;
        self.bilstm.forward(tape, x)
    }
}

/// Dense(13→H) + ReLU, then BiLSTM(H→D).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazNet {
    pub dense: Linear,
    pub bilstm: BiLstm,
}

impl GazNet {
    pub fn new<R: Rng>(params: &mut ParamSet, hidden: usize, output: usize, rng: &mut R) -> Result<GazNet> {
        let dense = Linear::new(
            params,
            "gaznet.dense",
            ParamGroup::GazetteerNet,
            crate::corpus::NUM_TAGS,
            hidden,
            rng,
        )?;
        let bilstm = BiLstm::new(params, "gaznet.bilstm", ParamGroup::GazetteerNet, hidden, output, rng)?;
        Ok(GazNet { dense, bilstm })
    }

    pub fn forward(&self, tape: &mut Tape, features: &FeatureMatrix) -> Result<Var> {
        let x = Tensor::matrix(features.rows(), features.cols(), features.to_f64())?;
        self.forward_tensor(tape, x)
    }

    /// Same as [`GazNet::forward`] on an arbitrary N×13 input.
    pub fn forward_tensor(&self, tape: &mut Tape, features: Tensor) -> Result<Var> {
        let x = tape.constant(features);
        let h = self.dense.forward(tape, x)?;
        let h = tape.relu(h);
        self.bilstm.forward(tape, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_tags, tags_to_onehot, Sentence};
    use crate::seed::rng_from;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn small_encoder(ps: &mut ParamSet) -> Encoder {
        let data = Dataset::new(
            "v",
            vec![Sentence::untagged(toks("where to buy apple where to")), Sentence::untagged(toks("buy"))],
        );
        let vocab = Vocab::build([&data], 2);
        Encoder::new(ps, vocab, 8, 64, &mut rng_from(0)).unwrap()
    }

    #[test]
    fn vocab_min_count_and_unk() {
        let data = Dataset::new("v", vec![Sentence::untagged(toks("a a b c c c"))]);
        let v = Vocab::build([&data], 2);
        assert_eq!(v.tokens(), &[UNK, "c", "a"]);
        assert_eq!(v.id("b"), 0);
        assert_eq!(Vocab::from(Vec::<String>::from(v.clone())), v);
    }

    #[test]
    fn encoder_shape_determinism_and_unk() {
        let mut ps = ParamSet::new();
        let enc = small_encoder(&mut ps);
        let sent = toks("where to buy apple iphone 13");
        let mut tape = Tape::new(&ps);
        let a = enc.forward(&mut tape, &sent).unwrap();
        let b = enc.forward(&mut tape, &sent).unwrap();
        assert_eq!(tape.value(a).shape(), &[6, 64]);
        assert_eq!(tape.value(a), tape.value(b));
        let oov = enc.forward(&mut tape, &toks("zz yy")).unwrap();
        let unk = enc.forward(&mut tape, &toks("<unk> <unk>")).unwrap();
        assert_eq!(tape.value(oov), tape.value(unk));
    }

    #[test]
    fn gaznet_shape_and_zero_params() {
        let mut ps = ParamSet::new();
        let gn = GazNet::new(&mut ps, 16, 64, &mut rng_from(1)).unwrap();
        let feats = tags_to_onehot(&parse_tags("O O O B-PROD I-PROD I-PROD").unwrap());
        {
            let mut tape = Tape::new(&ps);
            let g = gn.forward(&mut tape, &feats).unwrap();
            assert_eq!(tape.value(g).shape(), &[6, 64]);
        }
        for p in ps.iter_mut() {
            p.value = Tensor::zeros_like(&p.value);
        }
        let mut tape = Tape::new(&ps);
        let g = gn.forward(&mut tape, &feats).unwrap();
        assert!(tape.value(g).data().iter().all(|&v| v == 0.0));
        assert!(gn.forward_tensor(&mut tape, Tensor::zeros(2, 12)).is_err());
    }
}
