//! Linear-chain CRF over the 13 tags.
//!
//! `score(y) = Σ_i emit[i, y_i] + start[y_0] + Σ_i trans[y_{i−1}, y_i] + end[y_{N−1}]`
//! and the training loss is `log Z − score(gold)`, with `log Z` from the
//! forward algorithm in log space. Gradients come from forward-backward
//! marginals, wrapped as a [`CustomOp`] on the tape.

use crate::numcore::{log_sum_exp, CustomOp, Tape, Tensor, Var};
use crate::error::{contract, GainError, Result};

/// Borrowed CRF scores: emissions `N×T`, transitions `T×T` (from row to column),
/// start and end vectors of length `T`.
#[derive(Debug, Clone, Copy)]
pub struct CrfScores<'a> {
    pub emissions: &'a Tensor,
    pub transitions: &'a Tensor,
    pub start: &'a [f64],
    pub end: &'a [f64],
}

impl<'a> CrfScores<'a> {
    pub fn new(
        emissions: &'a Tensor,
        transitions: &'a Tensor,
        start: &'a Tensor,
        end: &'a Tensor,
    ) -> Result<CrfScores<'a>> {
        let t = emissions.cols();
        contract!(emissions.rows() > 0, "CRF over an empty sequence");
        contract!(
            transitions.rows() == t && transitions.cols() == t,
            "transition matrix must be {t}×{t}"
        );
        contract!(start.len() == t && end.len() == t, "start/end vectors must have {t} entries");
        if !emissions.is_finite() {
            return Err(GainError::Numeric("non-finite CRF emission".into()));
        }
        Ok(CrfScores { emissions, transitions, start: start.data(), end: end.data() })
    }

    pub fn len(&self) -> usize {
        self.emissions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_tags(&self) -> usize {
        self.emissions.cols()
    }

    pub fn path_score(&self, path: &[usize]) -> f64 {
        let mut s = self.start[path[0]] + self.end[path[path.len() - 1]];
        for (i, &y) in path.iter().enumerate() {
            s += self.emissions.get(i, y);
            if i > 0 {
                s += self.transitions.get(path[i - 1], y);
            }
        }
        s
    }

    /// Forward log-scores `alpha[i][y]`: log-sum over prefixes ending in `y` at `i`.
    fn forward(&self) -> Vec<Vec<f64>> {
        let (n, t) = (self.len(), self.num_tags());
        let mut alpha = vec![vec![0.0; t]; n];
        for y in 0..t {
            alpha[0][y] = self.start[y] + self.emissions.get(0, y);
        }
        let mut buf = vec![0.0; t];
        for i in 1..n {
            for y in 0..t {
                for (p, b) in buf.iter_mut().enumerate() {
                    *b = alpha[i - 1][p] + self.transitions.get(p, y);
                }
                alpha[i][y] = log_sum_exp(&buf) + self.emissions.get(i, y);
            }
        }
        alpha
    }

    /// Backward log-scores `beta[i][y]`: log-sum over suffixes after `y` at `i`.
    fn backward(&self) -> Vec<Vec<f64>> {
        let (n, t) = (self.len(), self.num_tags());
        let mut beta = vec![vec![0.0; t]; n];
        beta[n - 1].copy_from_slice(self.end);
        let mut buf = vec![0.0; t];
        for i in (0..n - 1).rev() {
            for y in 0..t {
                for (q, b) in buf.iter_mut().enumerate() {
                    *b = self.transitions.get(y, q) + self.emissions.get(i + 1, q) + beta[i + 1][q];
                }
                beta[i][y] = log_sum_exp(&buf);
            }
        }
        beta
    }

    pub fn log_partition(&self) -> f64 {
        let alpha = self.forward();
        let last = &alpha[self.len() - 1];
        let buf: Vec<f64> = last.iter().zip(self.end).map(|(a, e)| a + e).collect();
        log_sum_exp(&buf)
    }

    /// Unary marginals `N×T` and summed pairwise marginals `T×T`.
    pub fn marginals(&self) -> (Tensor, Tensor, f64) {
        let (n, t) = (self.len(), self.num_tags());
        let alpha = self.forward();
        let beta = self.backward();
        let log_z = {
            let buf: Vec<f64> = alpha[n - 1].iter().zip(self.end).map(|(a, e)| a + e).collect();
            log_sum_exp(&buf)
        };
        let mut unary = Tensor::zeros(n, t);
        for i in 0..n {
            for y in 0..t {
                unary.set(i, y, (alpha[i][y] + beta[i][y] - log_z).exp());
            }
        }
        let mut pair = Tensor::zeros(t, t);
        for i in 1..n {
            for p in 0..t {
                for q in 0..t {
                    let lp = alpha[i - 1][p]
                        + self.transitions.get(p, q)
                        + self.emissions.get(i, q)
                        + beta[i][q]
                        - log_z;
                    let cur = pair.get(p, q);
                    pair.set(p, q, cur + lp.exp());
                }
            }
        }
        (unary, pair, log_z)
    }

    /// Highest-scoring path. Ties resolve to the lowest tag index, both at
    /// each backpointer and at the final position.
    pub fn viterbi(&self) -> (Vec<usize>, f64) {
        let (n, t) = (self.len(), self.num_tags());
        let mut score: Vec<f64> = (0..t).map(|y| self.start[y] + self.emissions.get(0, y)).collect();
        let mut back = vec![vec![0usize; t]; n];
        for i in 1..n {
            let mut next = vec![0.0; t];
            for y in 0..t {
                let mut best = 0;
                let mut best_v = score[0] + self.transitions.get(0, y);
                for p in 1..t {
                    let v = score[p] + self.transitions.get(p, y);
                    if v > best_v {
                        best_v = v;
                        best = p;
                    }
                }
                back[i][y] = best;
                next[y] = best_v + self.emissions.get(i, y);
            }
            score = next;
        }
        let mut last = 0;
        let mut best_v = score[0] + self.end[0];
        for y in 1..t {
            let v = score[y] + self.end[y];
            if v > best_v {
                best_v = v;
                last = y;
            }
        }
        let mut path = vec![0; n];
        path[n - 1] = last;
        for i in (1..n).rev() {
            path[i - 1] = back[i][path[i]];
        }
        (path, best_v)
    }
}

#[derive(Debug)]
struct CrfNll {
    gold: Vec<usize>,
}

impl CustomOp for CrfNll {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let scores = CrfScores::new(inputs[0], inputs[1], inputs[2], inputs[3])
            .expect("validated in forward");
        let g = grad.item();
        let (mut d_emit, mut d_trans, _) = scores.marginals();
        let t = scores.num_tags();
        let mut d_start = Tensor::zeros(1, t);
        let mut d_end = Tensor::zeros(1, t);
        for y in 0..t {
            d_start.set(0, y, d_emit.get(0, y));
            d_end.set(0, y, d_emit.get(scores.len() - 1, y));
        }
        for (i, &y) in self.gold.iter().enumerate() {
            d_emit.set(i, y, d_emit.get(i, y) - 1.0);
            if i > 0 {
                let p = self.gold[i - 1];
                d_trans.set(p, y, d_trans.get(p, y) - 1.0);
            }
        }
        d_start.set(0, self.gold[0], d_start.get(0, self.gold[0]) - 1.0);
        let last = self.gold[self.gold.len() - 1];
        d_end.set(0, last, d_end.get(0, last) - 1.0);
        for t in [&mut d_emit, &mut d_trans, &mut d_start, &mut d_end] {
            t.scale_assign(g);
        }
        vec![Some(d_emit), Some(d_trans), Some(d_start), Some(d_end)]
    }
}

/// Negative log-likelihood `log Z − score(gold)` as a differentiable node.
pub fn crf_nll(
    tape: &mut Tape,
    emissions: Var,
    transitions: Var,
    start: Var,
    end: Var,
    gold: &[usize],
) -> Result<Var> {
    let value = {
        let scores = CrfScores::new(
            tape.value(emissions),
            tape.value(transitions),
            tape.value(start),
            tape.value(end),
        )?;
        contract!(gold.len() == scores.len(), "gold path length mismatch");
        contract!(gold.iter().all(|&y| y < scores.num_tags()), "gold tag out of range");
        scores.log_partition() - scores.path_score(gold)
    };
    Ok(tape.custom(
        &[emissions, transitions, start, end],
        Tensor::scalar(value),
        Box::new(CrfNll { gold: gold.to_vec() }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{grad_check, ParamGroup, ParamSet};
    use crate::seed::rng_from;
    use rand::Rng;

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .unwrap()
    }

    #[test]
    fn single_step_uniform_reduces_to_softmax() {
        let e = Tensor::zeros(1, 13);
        let tr = Tensor::zeros(13, 13);
        let z = Tensor::zeros(1, 13);
        let s = CrfScores::new(&e, &tr, &z, &z).unwrap();
        assert!((s.log_partition() - 13f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn marginals_sum_to_one() {
        let mut rng = rng_from(4);
        let (e, tr, st, en) = (random(5, 4, &mut rng), random(4, 4, &mut rng), random(1, 4, &mut rng), random(1, 4, &mut rng));
        let s = CrfScores::new(&e, &tr, &st, &en).unwrap();
        let (unary, pair, _) = s.marginals();
        for i in 0..5 {
            assert!((unary.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((pair.sum() - 4.0).abs() < 1e-10);
    }

    #[test]
    fn non_finite_emission_is_numeric_failure() {
        let mut e = Tensor::zeros(2, 3);
        e.set(1, 1, f64::NAN);
        let tr = Tensor::zeros(3, 3);
        let z = Tensor::zeros(1, 3);
        assert!(matches!(CrfScores::new(&e, &tr, &z, &z), Err(GainError::Numeric(_))));
    }

    #[test]
    fn viterbi_follows_dominant_emissions() {
        let path = [3usize, 4, 0, 11];
        let mut e = Tensor::zeros(4, 13);
        for (i, &y) in path.iter().enumerate() {
            e.set(i, y, 1000.0);
        }
        let tr = Tensor::zeros(13, 13);
        let z = Tensor::zeros(1, 13);
        let s = CrfScores::new(&e, &tr, &z, &z).unwrap();
        assert_eq!(s.viterbi().0, path);
    }

    #[test]
    fn nll_gradients_match_finite_differences() {
        let mut rng = rng_from(9);
        let mut ps = ParamSet::new();
        let e = ps.add("e", ParamGroup::Other, random(4, 5, &mut rng)).unwrap();
        let t = ps.add("t", ParamGroup::Crf, random(5, 5, &mut rng)).unwrap();
        let s = ps.add("s", ParamGroup::Crf, random(1, 5, &mut rng)).unwrap();
        let n = ps.add("n", ParamGroup::Crf, random(1, 5, &mut rng)).unwrap();
        let gold = [1usize, 1, 4, 0];
        let report = grad_check(&mut ps, 1e-5, usize::MAX, &mut rng, |tape| {
            let (ev, tv, sv, nv) = (tape.param(e), tape.param(t), tape.param(s), tape.param(n));
            crf_nll(tape, ev, tv, sv, nv, &gold)
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }
}
