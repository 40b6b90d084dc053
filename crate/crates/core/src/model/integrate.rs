use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::numcore::{sigmoid, ParamGroup, ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMode {
    /// `[e, g]` per token (N×2D).
    Concat,
    /// `(1 − σ(λ))⊙e + σ(λ)⊙g` with a trainable D-vector `λ`.
    WeightedSum,
    /// Encoder only; the gazetteer branch is not used (baseline).
    None,
}

/// Fusion of the encoder output `e` and gazetteer representation `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Integration {
    pub mode: IntegrationMode,
    pub lambda: Option<ParamId>,
    pub dim: usize,
}

impl Integration {
    pub fn new(params: &mut ParamSet, mode: IntegrationMode, dim: usize) -> Result<Integration> {
        let lambda = match mode {
            IntegrationMode::WeightedSum => {
                Some(params.add("integration.lambda", ParamGroup::Other, Tensor::zeros(1, dim))?)
            }
            _ => None,
        };
        Ok(Integration { mode, lambda, dim })
    }

    pub fn output_dim(&self) -> usize {
        match self.mode {
            IntegrationMode::Concat => 2 * self.dim,
            _ => self.dim,
        }
    }

    pub fn uses_gazetteer(&self) -> bool {
        self.mode != IntegrationMode::None
    }

    pub fn forward(&self, tape: &mut Tape, e: Var, g: Option<Var>) -> Result<Var> {
        let Some(g) = g.filter(|_| self.uses_gazetteer()) else {
            contract!(!self.uses_gazetteer(), "integration needs a gazetteer representation");
            return Ok(e);
        };
        contract!(
            tape.value(e).same_shape(tape.value(g)),
            "e is {}×{} but g is {}×{}",
            tape.value(e).rows(),
            tape.value(e).cols(),
            tape.value(g).rows(),
            tape.value(g).cols()
        );
        match self.mode {
            IntegrationMode::Concat => tape.concat_cols(&[e, g]),
            IntegrationMode::WeightedSum => {
                let lambda = tape.param(self.lambda.expect("weighted sum owns λ"));
                let w = tape.sigmoid(lambda);
                // e + σ(λ)⊙(g − e)
                let diff = tape.sub(g, e)?;
                let gated = tape.mul_row(diff, w)?;
                tape.add(e, gated)
            }
            IntegrationMode::None => unreachable!(),
        }
    }

    /// Mean of `σ(λ)` over dimensions; `None` unless weighted-sum.
    pub fn mean_gate(&self, params: &ParamSet) -> Option<f64> {
        self.lambda.map(|id| {
            let v = params.value(id);
            v.data().iter().map(|&x| sigmoid(x)).sum::<f64>() / v.len() as f64
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(mode: IntegrationMode, lambda: f64) -> (ParamSet, Integration) {
        let mut ps = ParamSet::new();
        let integ = Integration::new(&mut ps, mode, 4).unwrap();
        if let Some(id) = integ.lambda {
            ps.get_mut(id).value = Tensor::filled(1, 4, lambda);
        }
        (ps, integ)
    }

    fn inputs(tape: &mut Tape) -> (Var, Var, Tensor, Tensor) {
        let e = Tensor::matrix(2, 4, vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let g = Tensor::matrix(2, 4, vec![-1., 0., 1., 2., 0.5, 0.5, 0.5, 0.5]).unwrap();
        (tape.constant(e.clone()), tape.constant(g.clone()), e, g)
    }

    #[test]
    fn saturated_gate_returns_e() {
        let (ps, integ) = setup(IntegrationMode::WeightedSum, -1000.0);
        let mut tape = Tape::new(&ps);
        let (e, g, ev, _) = inputs(&mut tape);
        let out = integ.forward(&mut tape, e, Some(g)).unwrap();
        assert_eq!(tape.value(out), &ev);
        assert_eq!(integ.mean_gate(&ps), Some(0.0));
    }

    #[test]
    fn zero_lambda_averages() {
        let (ps, integ) = setup(IntegrationMode::WeightedSum, 0.0);
        let mut tape = Tape::new(&ps);
        let (e, g, ev, gv) = inputs(&mut tape);
        let out = integ.forward(&mut tape, e, Some(g)).unwrap();
        let expected = ev.zip_map(&gv, |a, b| (a + b) / 2.0);
        for (a, b) in tape.value(out).data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn concat_puts_e_left() {
        let (ps, integ) = setup(IntegrationMode::Concat, 0.0);
        let mut tape = Tape::new(&ps);
        let (e, g, ev, _) = inputs(&mut tape);
        let out = integ.forward(&mut tape, e, Some(g)).unwrap();
        let v = tape.value(out);
        assert_eq!(v.shape(), &[2, 8]);
        assert_eq!(&v.row(1)[..4], ev.row(1));
        assert_eq!(integ.output_dim(), 8);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let (ps, integ) = setup(IntegrationMode::Concat, 0.0);
        let mut tape = Tape::new(&ps);
        let e = tape.constant(Tensor::zeros(2, 4));
        let g = tape.constant(Tensor::zeros(3, 4));
        assert!(integ.forward(&mut tape, e, Some(g)).is_err());
    }
}
