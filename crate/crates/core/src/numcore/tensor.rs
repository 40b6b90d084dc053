use std::fmt;

use crate::error::{contract, GainError, Result};

/// Dense row-major `f64` array. Operations in this crate use at most two
/// dimensions; a 1-D tensor of length `n` behaves as a `1×n` row.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        contract!(
            expected == data.len(),
            "shape {shape:?} needs {expected} values, got {}",
            data.len()
        );
        contract!(shape.len() <= 2, "tensors have at most two dimensions, got {shape:?}");
        Ok(Tensor { shape, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor { shape: vec![rows, cols], data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Tensor {
        Tensor { shape: vec![rows, cols], data: vec![v; rows * cols] }
    }

    pub fn zeros_like(other: &Tensor) -> Tensor {
        Tensor { shape: other.shape.clone(), data: vec![0.0; other.data.len()] }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: vec![1, 1], data: vec![v] }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        contract!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    /// The single value of a 1×1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows() == other.rows() && self.cols() == other.cols()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.data.len(), other.data.len());
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, c: f64) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(GainError::Numeric(format!("non-finite value in {what}")))
        }
    }

    /// `self · other` for 2-D operands.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (n, k, m) = (self.rows(), self.cols(), other.cols());
        debug_assert_eq!(k, other.rows());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor { shape: vec![n, m], data: out }
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Tensor) -> Tensor {
        let (k, n, m) = (self.rows(), self.cols(), other.cols());
        debug_assert_eq!(k, other.rows());
        let mut out = vec![0.0; n * m];
        for p in 0..k {
            let a_row = &self.data[p * n..(p + 1) * n];
            let b_row = &other.data[p * m..(p + 1) * m];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out[i * m..(i + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor { shape: vec![n, m], data: out }
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Tensor) -> Tensor {
        let (n, k, m) = (self.rows(), self.cols(), other.rows());
        debug_assert_eq!(k, other.cols());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let b_row = &other.data[j * k..(j + 1) * k];
                out[i * m + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Tensor { shape: vec![n, m], data: out }
    }

    /// Index of the maximum in each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

/// Numerically stable `log Σ exp(xs)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Row-wise log-softmax, `x − logΣexp(x)`.
pub fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let lse = log_sum_exp(out.row(r));
        for v in out.row_mut(r) {
            *v -= lse;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shape_checks() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((t.rows(), t.cols()), (1, 4));
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[58., 64., 139., 154.]);
        let at = Tensor::matrix(3, 2, vec![1., 4., 2., 5., 3., 6.]).unwrap();
        assert_eq!(at.t_matmul(&b), c);
        let bt = Tensor::matrix(2, 3, vec![7., 9., 11., 8., 10., 12.]).unwrap();
        assert_eq!(a.matmul_t(&bt), c);
    }

    #[test]
    fn argmax_ties_go_low() {
        let t = Tensor::matrix(2, 3, vec![1., 1., 0., 0., 2., 2.]).unwrap();
        assert_eq!(t.argmax_rows(), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(v in prop::collection::vec(-500.0f64..500.0, 13 * 3)) {
            let x = Tensor::matrix(3, 13, v).unwrap();
            let p = softmax_rows(&x);
            let lp = log_softmax_rows(&x);
            for r in 0..3 {
                prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for c in 0..13 {
                    let direct = p.get(r, c).ln();
                    if direct.is_finite() && direct > -700.0 {
                        prop_assert!((direct - lp.get(r, c)).abs() < 1e-10);
                    }
                }
            }
        }
    }
}
