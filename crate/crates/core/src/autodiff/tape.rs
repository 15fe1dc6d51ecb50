//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] owns every value produced during a forward pass. Each operation
//! appends a node holding its output and, when any input requires a gradient,
//! the record needed to push gradients back to its inputs. Nodes are only ever
//! appended, so the node order is a topological order and [`Tape::backward`]
//! is a single reverse sweep.
//!
//! ```
//! use glen::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).item(), 6.0);
//! ```

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::tensor::gemm;
use crate::autodiff::{SparseMatrix, Tensor};
use crate::error::{GlenError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    /// Leaf or constant; nothing to propagate.
    None,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Dropout(Var, Vec<f64>),
    SpMM(Arc<SparseMatrix>, Var),
    SegmentSoftmax(Var, Vec<usize>),
    SegmentWeightedSum {
        weights: Var,
        x: Var,
        dst: Vec<usize>,
        src: Vec<usize>,
    },
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        targets: Vec<usize>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Raw gradient buffer, `None` when no path connects `v` to the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like the node, zeros when disconnected.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match self.get(v) {
            Some(g) => Tensor::new(shape.clone(), g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Segment boundaries from contiguous, nondecreasing ids covering `0..=max`.
fn segment_offsets(ids: &[usize]) -> Result<Vec<usize>> {
    match ids.first() {
        None => return Err(GlenError::EmptySegment(0)),
        Some(&first) if first != 0 => return Err(GlenError::EmptySegment(0)),
        _ => {}
    }
    let mut offsets = vec![0];
    for pos in 1..ids.len() {
        let (prev, id) = (ids[pos - 1], ids[pos]);
        if id < prev {
            return Err(GlenError::NonContiguousSegments(pos));
        }
        if id > prev + 1 {
            return Err(GlenError::EmptySegment(prev + 1));
        }
        if id == prev + 1 {
            offsets.push(pos);
        }
    }
    offsets.push(ids.len());
    Ok(offsets)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, true, Op::None)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, false, Op::None)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_raw(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::None };
        self.push_raw(value, requires_grad, op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if self.value(a).dims() != self.value(b).dims() {
            return Err(GlenError::shape(op, sa, sb));
        }
        Ok(())
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.values().iter().map(|&v| f(v)).collect())
            .expect("same shape");
        self.push(out, &[x], op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<f64> = av.values().iter().zip(bv.values()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(out, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<f64> = av.values().iter().zip(bv.values()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(out, &[a, b], Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<f64> = av.values().iter().zip(bv.values()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(out, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.map(x, |v| v * factor, Op::Scale(x, factor))
    }

    /// Adds a length-`n` bias to every row of an `m x n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (m, n) = xv.dims();
        if bv.len() != n {
            return Err(GlenError::shape("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.values().to_vec();
        for row in out.chunks_mut(n.max(1)).take(m) {
            for (o, b) in row.iter_mut().zip(bv.values()) {
                *o += b;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(out, &[x, bias], Op::AddBias(x, bias)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, &[a, b], Op::MatMul(a, b)))
    }

    /// Concatenates along the last axis; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| GlenError::Invalid("concat of zero tensors".into()))?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(GlenError::shape("concat_cols", self.value(first).shape(), self.value(p).shape()));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let shape = if self.value(first).shape().len() == 1 {
            vec![total]
        } else {
            vec![rows, total]
        };
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, parts, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks matrices (or rows) vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| GlenError::Invalid("concat of zero tensors".into()))?;
        let cols = self.value(first).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(GlenError::shape("concat_rows", self.value(first).shape(), v.shape()));
            }
            rows += v.rows();
            out.extend_from_slice(v.values());
        }
        let out = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(out, parts, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows `start..start + count`.
    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims();
        if start + count > rows {
            return Err(GlenError::shape("slice_rows", xv.shape(), &[start, count]));
        }
        let out = Tensor::matrix(count, cols, xv.values()[start * cols..(start + count) * cols].to_vec())?;
        Ok(self.push(out, &[x], Op::SliceRows(x, start)))
    }

    /// Columns `start..start + count`.
    pub fn slice_cols(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims();
        if start + count > cols {
            return Err(GlenError::shape("slice_cols", xv.shape(), &[start, count]));
        }
        let mut out = Vec::with_capacity(rows * count);
        for r in 0..rows {
            out.extend_from_slice(&xv.row(r)[start..start + count]);
        }
        let out = Tensor::matrix(rows, count, out)?;
        Ok(self.push(out, &[x], Op::SliceCols(x, start)))
    }

    /// Row lookup; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims();
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(GlenError::shape("gather_rows", xv.shape(), &[i]));
            }
            out.extend_from_slice(xv.row(i));
        }
        let out = Tensor::matrix(indices.len(), cols, out)?;
        Ok(self.push(out, &[x], Op::GatherRows(x, indices.to_vec())))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, negative_slope: f64) -> Var {
        self.map(
            x,
            |v| if v >= 0.0 { v } else { negative_slope * v },
            Op::LeakyRelu(x, negative_slope),
        )
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.map(x, |v| if v > 0.0 { v } else { v.exp_m1() }, Op::Elu(x))
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(GlenError::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let xv = self.value(x);
        let out: Vec<f64> = xv.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(out, &[x], Op::Dropout(x, mask)))
    }

    /// Sparse-dense product; the sparse operand is a constant.
    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let out = s.mul_dense(self.value(x))?;
        Ok(self.push(out, &[x], Op::SpMM(Arc::clone(s), x)))
    }

    /// Softmax within each contiguous run of equal segment ids.
    pub fn segment_softmax(&mut self, scores: Var, segment_ids: &[usize]) -> Result<Var> {
        let sv = self.value(scores);
        if sv.len() != segment_ids.len() {
            return Err(GlenError::shape("segment_softmax", sv.shape(), &[segment_ids.len()]));
        }
        let offsets = segment_offsets(segment_ids)?;
        let mut out = vec![0.0; sv.len()];
        for w in offsets.windows(2) {
            let seg = &sv.values()[w[0]..w[1]];
            let max = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, &s) in out[w[0]..w[1]].iter_mut().zip(seg) {
                *o = (s - max).exp();
                total += *o;
            }
            for o in &mut out[w[0]..w[1]] {
                *o /= total;
            }
        }
        let out = Tensor::new(sv.shape().to_vec(), out)?;
        Ok(self.push(out, &[scores], Op::SegmentSoftmax(scores, offsets)))
    }

    /// `out[dst[e]] += weights[e] * x[src[e]]` over edges `e`, giving `n_out` rows.
    pub fn segment_weighted_sum(
        &mut self,
        weights: Var,
        x: Var,
        dst: &[usize],
        src: &[usize],
        n_out: usize,
    ) -> Result<Var> {
        let (wv, xv) = (self.value(weights), self.value(x));
        let (rows, cols) = xv.dims();
        if wv.len() != dst.len() || dst.len() != src.len() {
            return Err(GlenError::shape("segment_weighted_sum", wv.shape(), &[dst.len(), src.len()]));
        }
        if src.iter().any(|&s| s >= rows) || dst.iter().any(|&d| d >= n_out) {
            return Err(GlenError::Invalid("edge endpoint out of range".into()));
        }
        let mut out = vec![0.0; n_out * cols];
        for (e, (&d, &s)) in dst.iter().zip(src).enumerate() {
            let w = wv.values()[e];
            for (o, v) in out[d * cols..(d + 1) * cols].iter_mut().zip(xv.row(s)) {
                *o += w * v;
            }
        }
        let out = Tensor::matrix(n_out, cols, out)?;
        Ok(self.push(
            out,
            &[weights, x],
            Op::SegmentWeightedSum {
                weights,
                x,
                dst: dst.to_vec(),
                src: src.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).values().iter().sum();
        self.push(Tensor::scalar(total), &[x], Op::Sum(x))
    }

    /// Mean softmax cross-entropy over rows of `logits` (batch x classes).
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (batch, classes) = lv.dims();
        if targets.len() != batch {
            return Err(GlenError::shape("softmax_cross_entropy", lv.shape(), &[targets.len()]));
        }
        let mut probs = vec![0.0; batch * classes];
        let mut loss = 0.0;
        for (b, &t) in targets.iter().enumerate() {
            if t >= classes {
                return Err(GlenError::TargetOutOfRange { target: t, classes });
            }
            let row = lv.row(b);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            for (p, &z) in probs[b * classes..(b + 1) * classes].iter_mut().zip(row) {
                *p = (z - lse).exp();
            }
        }
        let out = Tensor::scalar(loss / batch.max(1) as f64);
        Ok(self.push(
            out,
            &[logits],
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Mean binary cross-entropy over every logit, computed from logits directly.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.len() {
            return Err(GlenError::shape("bce_with_logits", lv.shape(), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(GlenError::Invalid(format!("binary target {bad} is not 0 or 1")));
        }
        let loss: f64 = lv
            .values()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let out = Tensor::scalar(loss / lv.len().max(1) as f64);
        Ok(self.push(
            out,
            &[logits],
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Gradients of the scalar `loss` with respect to every upstream node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(GlenError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let mut shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        shapes.truncate(grads.len());
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = node.value.values();
        match &node.op {
            Op::None => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                self.accumulate(grads, *b, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                self.accumulate(grads, *b, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).values(), self.value(*b).values());
                self.accumulate(grads, *a, |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(bv) {
                        *d += g * y;
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(av) {
                        *d += g * x;
                    }
                });
            }
            Op::Scale(x, f) => {
                self.accumulate(grads, *x, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * f));
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                let n = self.value(*b).len();
                self.accumulate(grads, *b, |d| {
                    for row in g.chunks(n.max(1)) {
                        d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims();
                let n = bv.cols();
                // dA = G B^T, dB = A^T G
                self.accumulate(grads, *a, |d| gemm(m, n, k, g, false, bv.values(), true, d, 1.0));
                self.accumulate(grads, *b, |d| gemm(k, m, n, av.values(), true, g, false, d, 1.0));
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    self.accumulate(grads, p, |d| {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + c];
                            d[r * c..(r + 1) * c].iter_mut().zip(src).for_each(|(d, g)| *d += g);
                        }
                    });
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, |d| {
                        d.iter_mut().zip(&g[offset..offset + n]).for_each(|(d, g)| *d += g);
                    });
                    offset += n;
                }
            }
            Op::SliceRows(x, start) => {
                let cols = node.value.cols();
                self.accumulate(grads, *x, |d| {
                    d[start * cols..start * cols + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, g)| *d += g);
                });
            }
            Op::SliceCols(x, start) => {
                let (rows, count) = node.value.dims();
                let cols = self.value(*x).cols();
                self.accumulate(grads, *x, |d| {
                    for r in 0..rows {
                        let dst = &mut d[r * cols + start..r * cols + start + count];
                        dst.iter_mut().zip(&g[r * count..(r + 1) * count]).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::GatherRows(x, indices) => {
                let cols = node.value.cols();
                self.accumulate(grads, *x, |d| {
                    for (r, &i) in indices.iter().enumerate() {
                        let dst = &mut d[i * cols..(i + 1) * cols];
                        dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::Sigmoid(x) => self.accumulate(grads, *x, |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(out) {
                    *d += g * y * (1.0 - y);
                }
            }),
            Op::Tanh(x) => self.accumulate(grads, *x, |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(out) {
                    *d += g * (1.0 - y * y);
                }
            }),
            Op::Relu(x) => self.accumulate(grads, *x, |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(out) {
                    if *y > 0.0 {
                        *d += g;
                    }
                }
            }),
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).values();
                self.accumulate(grads, *x, |d| {
                    for ((d, g), v) in d.iter_mut().zip(g).zip(xv) {
                        *d += if *v >= 0.0 { *g } else { g * slope };
                    }
                })
            }
            Op::Elu(x) => self.accumulate(grads, *x, |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(out) {
                    *d += if *y > 0.0 { *g } else { g * (y + 1.0) };
                }
            }),
            Op::Dropout(x, mask) => self.accumulate(grads, *x, |d| {
                for ((d, g), m) in d.iter_mut().zip(g).zip(mask) {
                    *d += g * m;
                }
            }),
            Op::SpMM(s, x) => {
                let cols = node.value.cols();
                self.accumulate(grads, *x, |d| {
                    let back = s.transpose_mul_dense(g, cols);
                    d.iter_mut().zip(&back).for_each(|(d, b)| *d += b);
                });
            }
            Op::SegmentSoftmax(x, offsets) => self.accumulate(grads, *x, |d| {
                for w in offsets.windows(2) {
                    let (ys, gs) = (&out[w[0]..w[1]], &g[w[0]..w[1]]);
                    let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                    for ((d, y), g) in d[w[0]..w[1]].iter_mut().zip(ys).zip(gs) {
                        *d += y * (g - dot);
                    }
                }
            }),
            Op::SegmentWeightedSum { weights, x, dst, src } => {
                let (wv, xv) = (self.value(*weights).values(), self.value(*x));
                let cols = xv.cols();
                self.accumulate(grads, *weights, |d| {
                    for (e, (&t, &s)) in dst.iter().zip(src).enumerate() {
                        d[e] += g[t * cols..(t + 1) * cols]
                            .iter()
                            .zip(xv.row(s))
                            .map(|(g, v)| g * v)
                            .sum::<f64>();
                    }
                });
                self.accumulate(grads, *x, |d| {
                    for (e, (&t, &s)) in dst.iter().zip(src).enumerate() {
                        let w = wv[e];
                        for (d, g) in d[s * cols..(s + 1) * cols].iter_mut().zip(&g[t * cols..(t + 1) * cols]) {
                            *d += w * g;
                        }
                    }
                });
            }
            Op::Sum(x) => self.accumulate(grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::SoftmaxCrossEntropy { logits, probs, targets } => {
                let classes = self.value(*logits).cols();
                let scale = g[0] / targets.len().max(1) as f64;
                self.accumulate(grads, *logits, |d| {
                    for (b, &t) in targets.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            d[b * classes + c] += scale * (probs[b * classes + c] - onehot);
                        }
                    }
                });
            }
            Op::BceWithLogits { logits, targets } => {
                let lv = self.value(*logits).values();
                let scale = g[0] / lv.len().max(1) as f64;
                self.accumulate(grads, *logits, |d| {
                    for ((d, &z), &y) in d.iter_mut().zip(lv).zip(targets) {
                        *d += scale * (sigmoid(z) - y);
                    }
                });
            }
        }
    }
}
