//! Tape-based reverse-mode differentiation over small dense matrices.
//!
//! Every operation appends a node to the [`Tape`], so node order is a
//! topological order and the backward pass is a single reverse sweep.
//! Adjoints of values used several times are summed.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// `ln(2 pi) / 2`.
pub const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "tensor data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn row(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    fn same_shape(&self, other: &Tensor, what: &'static str) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what,
                expected: self.len(),
                found: other.len(),
            })
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn accumulate(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                what: "matmul inner dimension",
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Adds a `1 x cols` row to every row.
    AddRow(Var, Var),
    Relu(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    GaussianLogProb { x: Var, mean: Var, log_std: Var },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of a forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node that requires a gradient.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).same_shape(self.value(b), "add")?;
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).same_shape(self.value(b), "sub")?;
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).same_shape(self.value(b), "mul")?;
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| s * x);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows != 1 || rv.cols != av.cols {
            return Err(Error::DimensionMismatch {
                what: "row broadcast",
                expected: av.cols,
                found: rv.cols,
            });
        }
        let mut value = av.clone();
        for chunk in value.data.chunks_mut(rv.cols) {
            for (d, r) in chunk.iter_mut().zip(&rv.data) {
                *d += r;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(libm::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(value, Op::Softplus(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(libm::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    /// Horizontal concatenation; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.value(p).rows).unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows != rows {
                return Err(Error::DimensionMismatch {
                    what: "concat rows",
                    expected: rows,
                    found: v.rows,
                });
            }
            cols += v.cols;
        }
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let v = self.value(p);
                value.data[r * cols + offset..r * cols + offset + v.cols]
                    .copy_from_slice(&v.data[r * v.cols..(r + 1) * v.cols]);
                offset += v.cols;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data.iter().sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Tensor::scalar(v.data.iter().sum::<f64>() / v.len() as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Joint log-density of `x` under independent normals with the given
    /// means and log standard deviations (all the same shape).
    pub fn gaussian_log_prob(&mut self, x: Var, mean: Var, log_std: Var) -> Result<Var> {
        let (xv, mv, sv) = (self.value(x), self.value(mean), self.value(log_std));
        xv.same_shape(mv, "gaussian mean")?;
        xv.same_shape(sv, "gaussian log_std")?;
        let total = gaussian_log_density(&xv.data, &mv.data, &sv.data);
        let rg = self.rg(x) || self.rg(mean) || self.rg(log_std);
        Ok(self.push(
            Tensor::scalar(total),
            Op::GaussianLogProb { x, mean, log_std },
            rg,
        ))
    }

    /// Reverse sweep from a scalar output seeded with 1.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.backward_with(output, 1.0)
    }

    /// Reverse sweep from a scalar output seeded with `seed`.
    pub fn backward_with(&self, output: Var, seed: f64) -> Result<Gradients> {
        let out = self.value(output);
        if out.rows != 1 || out.cols != 1 {
            return Err(Error::NonScalarOutput {
                rows: out.rows,
                cols: out.cols,
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::scalar(seed));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    // keep the adjoint of leaves for the caller
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = g.matmul(&self.value(*b).transpose())?;
                        add_grad(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = self.value(*a).transpose().matmul(&g)?;
                        add_grad(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        add_grad(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        add_grad(&mut grads, *b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        add_grad(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        add_grad(&mut grads, *b, g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        add_grad(&mut grads, *a, g.zip(self.value(*b), |x, y| x * y));
                    }
                    if self.rg(*b) {
                        add_grad(&mut grads, *b, g.zip(self.value(*a), |x, y| x * y));
                    }
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    add_grad(&mut grads, *a, g.map(|x| s * x));
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        let mut gr = Tensor::zeros(1, g.cols);
                        for chunk in g.data.chunks(g.cols) {
                            for (d, v) in gr.data.iter_mut().zip(chunk) {
                                *d += v;
                            }
                        }
                        add_grad(&mut grads, *row, gr);
                    }
                    if self.rg(*a) {
                        add_grad(&mut grads, *a, g);
                    }
                }
                Op::Relu(a) => {
                    let ga = g.zip(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 });
                    add_grad(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip(&node.value, |x, t| x * (1.0 - t * t));
                    add_grad(&mut grads, *a, ga);
                }
                Op::Softplus(a) => {
                    let ga = g.zip(self.value(*a), |x, v| x * sigmoid(v));
                    add_grad(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip(&node.value, |x, e| x * e);
                    add_grad(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let v = self.value(p);
                        if self.rg(p) {
                            let mut gp = Tensor::zeros(v.rows, v.cols);
                            for r in 0..v.rows {
                                gp.data[r * v.cols..(r + 1) * v.cols].copy_from_slice(
                                    &g.data[r * g.cols + offset..r * g.cols + offset + v.cols],
                                );
                            }
                            add_grad(&mut grads, p, gp);
                        }
                        offset += v.cols;
                    }
                }
                Op::Sum(a) => {
                    let v = self.value(*a);
                    add_grad(&mut grads, *a, Tensor::filled(v.rows, v.cols, g.item()));
                }
                Op::Mean(a) => {
                    let v = self.value(*a);
                    let share = g.item() / v.len() as f64;
                    add_grad(&mut grads, *a, Tensor::filled(v.rows, v.cols, share));
                }
                Op::GaussianLogProb { x, mean, log_std } => {
                    let (xv, mv, sv) = (self.value(*x), self.value(*mean), self.value(*log_std));
                    let gs = g.item();
                    // d/dx = -(x-mu)/s^2, d/dmu = (x-mu)/s^2, d/dlog s = (x-mu)^2/s^2 - 1
                    let z2: Vec<f64> = xv
                        .data
                        .iter()
                        .zip(&mv.data)
                        .zip(&sv.data)
                        .map(|((&xi, &mi), &li)| (xi - mi) * libm::exp(-2.0 * li))
                        .collect();
                    if self.rg(*x) {
                        let data = z2.iter().map(|d| -gs * d).collect();
                        add_grad(&mut grads, *x, Tensor::new(xv.rows, xv.cols, data)?);
                    }
                    if self.rg(*mean) {
                        let data = z2.iter().map(|d| gs * d).collect();
                        add_grad(&mut grads, *mean, Tensor::new(xv.rows, xv.cols, data)?);
                    }
                    if self.rg(*log_std) {
                        let data = z2
                            .iter()
                            .zip(xv.data.iter().zip(&mv.data))
                            .map(|(d, (&xi, &mi))| gs * (d * (xi - mi) - 1.0))
                            .collect();
                        add_grad(&mut grads, *log_std, Tensor::new(xv.rows, xv.cols, data)?);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn add_grad(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.accumulate(&g),
        slot @ None => *slot = Some(g),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Sum of independent normal log-densities.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&xi, &mi), &li)| {
            let z = (xi - mi) * libm::exp(-li);
            -0.5 * z * z - li - HALF_LN_TWO_PI
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[-1.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn log_prob_at_mean() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[0.3, -1.2, 4.0]));
        let s = tape.constant(Tensor::zeros(1, 3));
        let lp = tape.gaussian_log_prob(x, x, s).unwrap();
        assert!((tape.value(lp).item() - 3.0 * -HALF_LN_TWO_PI).abs() < 1e-15);
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let x = Tensor::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let i = tape.constant(Tensor::identity(3));
        let xv = tape.constant(x.clone());
        let y = tape.matmul(i, xv).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn relu_sum_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[-1.0, 2.0]));
        let r = tape.relu(x);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[0.0]));
        let r = tape.relu(x);
        let s = tape.sum(r);
        assert_eq!(tape.backward(s).unwrap().get(x).unwrap().item(), 0.0);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 2.0]));
        assert_eq!(
            tape.backward(x).unwrap_err(),
            Error::NonScalarOutput { rows: 1, cols: 2 }
        );
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::row(&[1.0, 2.0]));
        let b = tape.leaf(Tensor::row(&[1.0, 2.0, 3.0]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.matmul(a, b).is_err());
        let b = tape_col(&mut tape);
        assert!(tape.concat_cols(&[a, b]).is_err());
    }

    fn tape_col(tape: &mut Tape) -> Var {
        tape.constant(Tensor::column(&[1.0, 2.0]))
    }

    #[test]
    fn reused_value_accumulates() {
        // f = sum(x * x + x) -> df/dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.5, -2.0]));
        let sq = tape.mul(x, x).unwrap();
        let y = tape.add(sq, x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0, -3.0]);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus(0.0) - core::f64::consts::LN_2).abs() < 1e-15);
    }
}
