//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] records one forward computation (typically one sentence). Nodes
//! are appended in evaluation order, so the backward sweep is a single reverse
//! pass. Parameters are read from a borrowed [`ParamSet`] without copying;
//! frozen parameters become constants and cut gradient flow.

use std::collections::HashMap;
use std::fmt::Debug;

use super::tensor::{log_softmax_rows, softmax_rows};
use super::{ParamGrads, ParamId, ParamSet, Tensor};
use crate::error::{contract, GainError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// User-defined differentiable operation. `backward` returns one gradient
/// per input (or `None` when that input receives none).
pub trait CustomOp: Debug + Send + Sync {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    LogSoftmax(Var),
    Mask(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    Row(Var, usize),
    Gather(Var, Vec<usize>),
    StopGradient,
    Sum(Var),
    CrossEntropy(Var, Vec<usize>),
    Mse(Var, Var),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    stops: Vec<Var>,
    replay: Option<Vec<Tensor>>,
    /// First op whose forward value was not finite.
    non_finite: Option<String>,
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient w.r.t. an arbitrary node, if it received one.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Tape<'p> {
        Tape { params, nodes: Vec::new(), param_vars: HashMap::new(), stops: Vec::new(), replay: None, non_finite: None }
    }

    /// A tape whose `stop_gradient` nodes return `values` in order instead of
    /// their inputs. Used to finite-difference the surrogate objective that
    /// stop-gradient defines.
    pub fn with_stop_values(params: &'p ParamSet, values: Vec<Tensor>) -> Tape<'p> {
        let mut tape = Tape::new(params);
        tape.replay = Some(values);
        tape
    }

    /// Forward values of all `stop_gradient` nodes, in creation order.
    pub fn stop_values(&self) -> Vec<Tensor> {
        self.stops.iter().map(|&v| self.value(v).clone()).collect()
    }

    /// The first op that produced a NaN or infinity, if any.
    pub fn non_finite_op(&self) -> Option<&str> {
        self.non_finite.as_deref()
    }

    /// Numeric error naming the first op that produced a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match &self.non_finite {
            None => Ok(()),
            Some(op) => Err(GainError::Numeric(format!("non-finite forward value in {op}"))),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.value(id),
            _ => &self.nodes[v.0].value,
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        if self.non_finite.is_none() && !matches!(op, Op::Leaf) && !value.is_finite() {
            self.non_finite = Some(format!("{op:?}"));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant (or, with `requires_grad`, a differentiable input).
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// The node for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let trainable = self.params.get(id).trainable;
        self.nodes.push(Node { value: Tensor::zeros(0, 0), op: Op::Param(id), needs_grad: trainable });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        contract!(
            va.cols() == vb.rows(),
            "matmul {}×{} by {}×{}",
            va.rows(),
            va.cols(),
            vb.rows(),
            vb.cols()
        );
        let out = va.matmul(vb);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn binary_same(&mut self, a: Var, b: Var, what: &str) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        contract!(
            va.same_shape(vb),
            "{what}: shapes {}×{} and {}×{} differ",
            va.rows(),
            va.cols(),
            vb.rows(),
            vb.cols()
        );
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    fn row_broadcast(&mut self, a: Var, r: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (va, vr) = (self.value(a), self.value(r));
        contract!(
            vr.rows() == 1 && vr.cols() == va.cols(),
            "row broadcast of {}×{} onto {}×{}",
            vr.rows(),
            vr.cols(),
            va.rows(),
            va.cols()
        );
        let mut out = va.clone();
        let row = vr.data();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(row) {
                *o = f(*o, b);
            }
        }
        Ok(out)
    }

    /// `a + r` with the 1×m row `r` added to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let out = self.row_broadcast(a, r, |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(r);
        Ok(self.push(out, Op::AddRow(a, r), ng))
    }

    /// `a ⊙ r` with the 1×m row `r` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let out = self.row_broadcast(a, r, |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(r);
        Ok(self.push(out, Op::MulRow(a, r), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let ng = self.needs(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = log_softmax_rows(self.value(a));
        let ng = self.needs(a);
        self.push(out, Op::LogSoftmax(a), ng)
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        contract!(mask.len() == self.value(a).len(), "mask length mismatch");
        let out = {
            let mut t = self.value(a).clone();
            for (v, m) in t.data_mut().iter_mut().zip(&mask) {
                *v *= m;
            }
            t
        };
        let ng = self.needs(a);
        Ok(self.push(out, Op::Mask(a, mask), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        contract!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        contract!(
            parts.iter().all(|p| self.value(*p).rows() == rows),
            "concat_cols row counts differ"
        );
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Vertical stack of tensors with equal column counts.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        contract!(!parts.is_empty(), "stack of nothing");
        let cols = self.value(parts[0]).cols();
        contract!(
            parts.iter().all(|p| self.value(*p).cols() == cols),
            "stack_rows column counts differ"
        );
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::StackRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        contract!(start < end && end <= va.cols(), "slice {start}..{end} of {} cols", va.cols());
        let rows = va.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&va.row(r)[start..end]);
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor::matrix(rows, end - start, data)?, Op::SliceCols(a, start, end), ng))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let va = self.value(a);
        contract!(i < va.rows(), "row {i} of {}", va.rows());
        let out = Tensor::matrix(1, va.cols(), va.row(i).to_vec())?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Row(a, i), ng))
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        contract!(ids.iter().all(|&i| i < vt.rows()), "gather index out of range");
        let cols = vt.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            data.extend_from_slice(vt.row(i));
        }
        let ng = self.needs(table);
        Ok(self.push(Tensor::matrix(ids.len(), cols, data)?, Op::Gather(table, ids.to_vec()), ng))
    }

    /// Identity forward, no gradient backward.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let k = self.stops.len();
        let out = match self.replay.as_ref().and_then(|r| r.get(k)) {
            Some(v) if v.same_shape(self.value(a)) => v.clone(),
            _ => self.value(a).clone(),
        };
        let v = self.push(out, Op::StopGradient, false);
        self.stops.push(v);
        v
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(out, Op::Sum(a), ng)
    }

    /// Mean over rows of per-row cross-entropy against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        contract!(v.rows() == targets.len(), "{} rows vs {} targets", v.rows(), targets.len());
        contract!(v.rows() > 0, "cross entropy over zero rows");
        contract!(targets.iter().all(|&t| t < v.cols()), "target class out of range");
        let lp = log_softmax_rows(v);
        let loss = -targets.iter().enumerate().map(|(i, &t)| lp.get(i, t)).sum::<f64>()
            / targets.len() as f64;
        let ng = self.needs(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, targets.to_vec()), ng))
    }

    /// `mean((a − b)²)` over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "mse")?;
        let (va, vb) = (self.value(a), self.value(b));
        let n = va.len().max(1) as f64;
        let loss = va.data().iter().zip(vb.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(a, b), ng))
    }

    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        let ng = inputs.iter().any(|v| self.needs(*v));
        self.push(value, Op::Custom(inputs.to_vec(), op), ng)
    }

    /// Backpropagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params = ParamGrads(vec![None; self.params.len()]);
        for (id, var) in &self.param_vars {
            if let Some(g) = grads[var.0].clone() {
                params.0[id.0] = Some(g);
            }
        }
        Gradients { nodes: grads, params }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut Tensor)) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros_like(self.value(v)));
        f(slot);
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let da = g.matmul_t(self.value(*b));
                    self.acc(grads, *a, |s| s.add_assign(&da));
                }
                if self.needs(*b) {
                    let db = self.value(*a).t_matmul(g);
                    self.acc(grads, *b, |s| s.add_assign(&db));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |s| s.add_assign(g));
                self.acc(grads, *b, |s| s.add_assign(g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |s| s.add_assign(g));
                self.acc(grads, *b, |s| {
                    for (x, y) in s.data_mut().iter_mut().zip(g.data()) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |s| {
                    for ((x, gv), bv) in s.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *x += gv * bv;
                    }
                });
                self.acc(grads, *b, |s| {
                    for ((x, gv), av) in s.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *x += gv * av;
                    }
                });
            }
            Op::AddRow(a, r) => {
                self.acc(grads, *a, |s| s.add_assign(g));
                self.acc(grads, *r, |s| {
                    for row in 0..g.rows() {
                        for (x, gv) in s.data_mut().iter_mut().zip(g.row(row)) {
                            *x += gv;
                        }
                    }
                });
            }
            Op::MulRow(a, r) => {
                let (va, vr) = (self.value(*a), self.value(*r));
                self.acc(grads, *a, |s| {
                    for row in 0..g.rows() {
                        for ((x, gv), rv) in s.row_mut(row).iter_mut().zip(g.row(row)).zip(vr.data())
                        {
                            *x += gv * rv;
                        }
                    }
                });
                self.acc(grads, *r, |s| {
                    for row in 0..g.rows() {
                        for ((x, gv), av) in s.data_mut().iter_mut().zip(g.row(row)).zip(va.row(row))
                        {
                            *x += gv * av;
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                self.acc(grads, *a, |s| {
                    for (x, gv) in s.data_mut().iter_mut().zip(g.data()) {
                        *x += c * gv;
                    }
                });
            }
            Op::Sigmoid(a) => self.acc(grads, *a, |s| {
                for ((x, gv), y) in s.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                    *x += gv * y * (1.0 - y);
                }
            }),
            Op::Tanh(a) => self.acc(grads, *a, |s| {
                for ((x, gv), y) in s.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                    *x += gv * (1.0 - y * y);
                }
            }),
            Op::Relu(a) => {
                let va = self.value(*a);
                self.acc(grads, *a, |s| {
                    for ((x, gv), inp) in s.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        if *inp > 0.0 {
                            *x += gv;
                        }
                    }
                })
            }
            Op::Exp(a) => self.acc(grads, *a, |s| {
                for ((x, gv), y) in s.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                    *x += gv * y;
                }
            }),
            Op::LogSoftmax(a) => self.acc(grads, *a, |s| {
                for r in 0..g.rows() {
                    let gsum: f64 = g.row(r).iter().sum();
                    let lp = out.row(r);
                    for ((x, gv), l) in s.row_mut(r).iter_mut().zip(g.row(r)).zip(lp) {
                        *x += gv - l.exp() * gsum;
                    }
                }
            }),
            Op::Mask(a, mask) => self.acc(grads, *a, |s| {
                for ((x, gv), m) in s.data_mut().iter_mut().zip(g.data()).zip(mask) {
                    *x += gv * m;
                }
            }),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    self.acc(grads, *p, |s| {
                        for r in 0..g.rows() {
                            for (x, gv) in s.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *x += gv;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::StackRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).rows() * cols;
                    self.acc(grads, *p, |s| {
                        for (x, gv) in s.data_mut().iter_mut().zip(&g.data()[offset..offset + len]) {
                            *x += gv;
                        }
                    });
                    offset += len;
                }
            }
            Op::SliceCols(a, start, end) => self.acc(grads, *a, |s| {
                for r in 0..g.rows() {
                    for (x, gv) in s.row_mut(r)[*start..*end].iter_mut().zip(g.row(r)) {
                        *x += gv;
                    }
                }
            }),
            Op::Row(a, idx) => self.acc(grads, *a, |s| {
                for (x, gv) in s.row_mut(*idx).iter_mut().zip(g.data()) {
                    *x += gv;
                }
            }),
            Op::Gather(table, ids) => self.acc(grads, *table, |s| {
                for (r, &id) in ids.iter().enumerate() {
                    for (x, gv) in s.row_mut(id).iter_mut().zip(g.row(r)) {
                        *x += gv;
                    }
                }
            }),
            Op::Sum(a) => {
                let gv = g.item();
                self.acc(grads, *a, |s| {
                    for x in s.data_mut() {
                        *x += gv;
                    }
                })
            }
            Op::CrossEntropy(logits, targets) => {
                let p = softmax_rows(self.value(*logits));
                let scale = g.item() / targets.len() as f64;
                self.acc(grads, *logits, |s| {
                    for (r, &t) in targets.iter().enumerate() {
                        for (c, (x, pv)) in s.row_mut(r).iter_mut().zip(p.row(r)).enumerate() {
                            let target = if c == t { 1.0 } else { 0.0 };
                            *x += scale * (pv - target);
                        }
                    }
                });
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let scale = 2.0 * g.item() / va.len().max(1) as f64;
                let diff: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
                self.acc(grads, *a, |s| {
                    for (x, d) in s.data_mut().iter_mut().zip(&diff) {
                        *x += scale * d;
                    }
                });
                self.acc(grads, *b, |s| {
                    for (x, d) in s.data_mut().iter_mut().zip(&diff) {
                        *x -= scale * d;
                    }
                });
            }
            Op::Custom(inputs, op) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let back = op.backward(&vals, out, g);
                for (inp, gi) in inputs.iter().zip(back) {
                    if let Some(gi) = gi {
                        self.acc(grads, *inp, |s| s.add_assign(&gi));
                    }
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
