use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ParamGroup, ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{contract, Result};

fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// `y = x·W + b`, with `W` stored `in×out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        group: ParamGroup,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Linear> {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let weight = params.add(format!("{name}.weight"), group, uniform(input, output, bound, rng))?;
        let bias = params.add(format!("{name}.bias"), group, uniform(1, output, bound, rng))?;
        Ok(Linear { weight, bias, input, output })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        contract!(
            tape.value(x).cols() == self.input,
            "linear expects {} input columns, got {}",
            self.input,
            tape.value(x).cols()
        );
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        group: ParamGroup,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Embedding> {
        let table = params.add(format!("{name}.table"), group, uniform(vocab, dim, 0.1, rng))?;
        Ok(Embedding { table, vocab, dim })
    }

    pub fn forward(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        let t = tape.param(self.table);
        tape.gather(t, ids)
    }
}

/// Unidirectional LSTM. Gate columns are laid out `[input, forget, cell, output]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        group: ParamGroup,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Lstm> {
        let h4 = 4 * hidden;
        let w_ih = params.add(
            format!("{name}.w_ih"),
            group,
            uniform(input, h4, 1.0 / (input.max(1) as f64).sqrt(), rng),
        )?;
        let w_hh = params.add(
            format!("{name}.w_hh"),
            group,
            uniform(hidden, h4, 1.0 / (hidden.max(1) as f64).sqrt(), rng),
        )?;
        let mut b = Tensor::zeros(1, h4);
        for c in hidden..2 * hidden {
            b.set(0, c, 1.0);
        }
        let bias = params.add(format!("{name}.bias"), group, b)?;
        Ok(Lstm { w_ih, w_hh, bias, input, hidden })
    }

    /// Runs over the rows of `x` (N×input); returns one hidden row per step in
    /// time order, N×hidden. `reverse` processes rows last-to-first.
    pub fn forward(&self, tape: &mut Tape, x: Var, reverse: bool) -> Result<Var> {
        let n = tape.value(x).rows();
        contract!(
            tape.value(x).cols() == self.input,
            "lstm expects {} input columns, got {}",
            self.input,
            tape.value(x).cols()
        );
        contract!(n > 0, "lstm over an empty sequence");
        let hsz = self.hidden;
        let w_ih = tape.param(self.w_ih);
        let w_hh = tape.param(self.w_hh);
        let bias = tape.param(self.bias);
        let xw = tape.matmul(x, w_ih)?;
        let gates_in = tape.add_row(xw, bias)?;

        let mut h = tape.constant(Tensor::zeros(1, hsz));
        let mut c = tape.constant(Tensor::zeros(1, hsz));
        let mut outputs = vec![h; n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let xt = tape.row(gates_in, t)?;
            let hh = tape.matmul(h, w_hh)?;
            let gates = tape.add(xt, hh)?;
            let i_pre = tape.slice_cols(gates, 0, hsz)?;
            let f_pre = tape.slice_cols(gates, hsz, 2 * hsz)?;
            let g_pre = tape.slice_cols(gates, 2 * hsz, 3 * hsz)?;
            let o_pre = tape.slice_cols(gates, 3 * hsz, 4 * hsz)?;
            let i = tape.sigmoid(i_pre);
            let f = tape.sigmoid(f_pre);
            let g = tape.tanh(g_pre);
            let o = tape.sigmoid(o_pre);
            let fc = tape.mul(f, c)?;
            let ig = tape.mul(i, g)?;
            c = tape.add(fc, ig)?;
            let tc = tape.tanh(c);
            h = tape.mul(o, tc)?;
            outputs[t] = h;
        }
        tape.stack_rows(&outputs)
    }
}

/// Bidirectional LSTM; output row `t` is `[forward_t, backward_t]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    /// `output` is the concatenated width and must be even.
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        group: ParamGroup,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<BiLstm> {
        contract!(output % 2 == 0 && output > 0, "bilstm output width {output} must be even");
        let half = output / 2;
        Ok(BiLstm {
            forward: Lstm::new(params, &format!("{name}.fw"), group, input, half, rng)?,
            backward: Lstm::new(params, &format!("{name}.bw"), group, input, half, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden + self.backward.hidden
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let fw = self.forward.forward(tape, x, false)?;
        let bw = self.backward.forward(tape, x, true)?;
        tape.concat_cols(&[fw, bw])
    }
}

/// Inverted dropout: keeps each value with probability `1 − p` and scales by
/// `1/(1 − p)`. Identity when `p == 0`.
pub fn dropout<R: Rng>(tape: &mut Tape, x: Var, p: f64, rng: &mut R) -> Result<Var> {
    if p <= 0.0 {
        return Ok(x);
    }
    contract!(p < 1.0, "dropout rate {p} must be < 1");
    let keep = 1.0 / (1.0 - p);
    let mask = (0..tape.value(x).len())
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    tape.mask(x, mask)
}
