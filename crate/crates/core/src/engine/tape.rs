//! Reverse-mode automatic differentiation over an explicit operation tape.
//!
//! Every operation appends one node holding its forward value. `backward`
//! walks the nodes in reverse order and accumulates gradients additively, so
//! a value consumed by several operations receives the sum of all paths.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    in_channels: usize,
    height: usize,
    width: usize,
    out_channels: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn spatial(&self) -> usize {
        self.out_h * self.out_w
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Reshape(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Softmax(Var),
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    SoftCrossEntropy {
        logits: Var,
        targets: Vec<f64>,
        probs: Vec<f64>,
    },
    Columns {
        input: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    WeightedSum {
        input: Var,
        weights: Vec<f64>,
    },
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    needs_grad: Vec<bool>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.needs_grad.push(needs_grad);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    /// Records an input; it participates in gradients iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    /// Records a trainable input.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Copy of the node value with its accumulated gradient attached.
    pub fn tensor_with_grad(&self, v: Var) -> Tensor {
        let mut t = self.values[v.0].clone();
        t.set_grad(self.grads[v.0].clone())
            .expect("tape gradients always match their value shape");
        t
    }

    fn ng(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    fn rank2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.values[v.0].shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Dimension(format!(
                "{what} expects rank-2, got {s:?}"
            ))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.rank2(a, "matmul")?;
        let (k2, n) = self.rank2(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner extents differ: {m}x{k} by {k2}x{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.values[a.0].data(),
            false,
            self.values[b.0].data(),
            false,
            &mut out,
            0.0,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng))
    }

    /// `x[N×M] + bias[M]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.rank2(x, "add_row_bias")?;
        if self.values[bias.0].len() != m {
            return Err(Error::Dimension(format!(
                "bias of length {} for {m} columns",
                self.values[bias.0].len()
            )));
        }
        let b = self.values[bias.0].data();
        let mut out = self.values[x.0].data().to_vec();
        for row in out.chunks_mut(m) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::AddRowBias(x, bias), ng))
    }

    /// `x[N×C×H×W] + bias[C]` broadcast over batch and space.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let shape = self.values[x.0].shape().to_vec();
        if shape.len() != 4 || self.values[bias.0].len() != shape[1] {
            return Err(Error::Dimension(format!(
                "channel bias of length {} for input {:?}",
                self.values[bias.0].len(),
                shape
            )));
        }
        let plane = shape[2] * shape[3];
        let b = self.values[bias.0].data();
        let mut out = self.values[x.0].data().to_vec();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let bv = b[i % shape[1]];
            chunk.iter_mut().for_each(|o| *o += bv);
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddChannelBias(x, bias), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.shape() != vb.shape() {
            return Err(Error::Dimension(format!(
                "add shapes differ: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let out: Vec<f64> = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(va.shape().to_vec(), out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = &self.values[x.0];
        let out = v.data().iter().map(|&z| z.max(0.0)).collect();
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Relu(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.values[x.0].clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// Collapses everything after the leading axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let v = &self.values[x.0];
        let shape = vec![v.rows(), v.row_len()];
        self.reshape(x, shape)
    }

    /// 2-D cross-correlation with zero padding.
    ///
    /// `input` is N×C×H×W, `kernel` is O×C×KH×KW; the kernel is not flipped.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ks) = (self.values[input.0].shape(), self.values[kernel.0].shape());
        let (&[n, c, h, w], &[o, kc, kh, kw]) = (xs, ks) else {
            return Err(Error::Dimension(format!(
                "conv2d expects NCHW input and OIKK kernel, got {xs:?} and {ks:?}"
            )));
        };
        if c != kc {
            return Err(Error::Dimension(format!(
                "conv2d channel mismatch: input has {c}, kernel expects {kc}"
            )));
        }
        if stride == 0 {
            return Err(Error::Dimension("conv2d stride must be positive".into()));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::Dimension(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let geom = ConvGeom {
            batch: n,
            in_channels: c,
            height: h,
            width: w,
            out_channels: o,
            kh,
            kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        let (patch, spatial) = (geom.patch(), geom.spatial());
        let x = self.values[input.0].data();
        let k = self.values[kernel.0].data();
        let mut cols = vec![0.0; n * patch * spatial];
        let mut out = vec![0.0; n * o * spatial];
        let sample_in = c * h * w;
        for s in 0..n {
            let col = &mut cols[s * patch * spatial..(s + 1) * patch * spatial];
            im2col(&x[s * sample_in..(s + 1) * sample_in], &geom, col);
            gemm(
                o,
                patch,
                spatial,
                k,
                false,
                col,
                false,
                &mut out[s * o * spatial..(s + 1) * o * spatial],
                0.0,
            );
        }
        let t = Tensor::new(vec![n, o, geom.out_h, geom.out_w], out)?;
        let ng = self.ng(input) || self.ng(kernel);
        Ok(self.push(
            t,
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            },
            ng,
        ))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let (n, k) = self.rank2(logits, "softmax")?;
        let v = self.values[logits.0].data();
        if v.iter().any(|z| z.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let out = softmax_rows(v, k);
        let ng = self.ng(logits);
        Ok(self.push(Tensor::new(vec![n, k], out)?, Op::Softmax(logits), ng))
    }

    /// Mean over the batch of `-ln p[label]` on already-normalized rows.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.rank2(probs, "cross_entropy")?;
        check_labels(labels, n, k)?;
        let p = self.values[probs.0].data();
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -p[i * k + y].ln())
            .sum::<f64>()
            / n as f64;
        let ng = self.ng(probs);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            ng,
        ))
    }

    /// Softmax followed by cross-entropy, computed through log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.rank2(logits, "softmax_cross_entropy")?;
        check_labels(labels, n, k)?;
        let z = self.values[logits.0].data();
        if z.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("logits contain NaN".into()));
        }
        let probs = softmax_rows(z, k);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let row = &z[i * k..(i + 1) * k];
                log_sum_exp(row) - row[y]
            })
            .sum::<f64>()
            / n as f64;
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Cross-entropy against full target distributions: mean of `-Σ t·log softmax(z)`.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let (n, k) = self.rank2(logits, "soft_cross_entropy")?;
        if targets.shape() != [n, k] {
            return Err(Error::Dimension(format!(
                "targets {:?} for logits {n}x{k}",
                targets.shape()
            )));
        }
        let z = self.values[logits.0].data();
        if z.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("logits contain NaN".into()));
        }
        let probs = softmax_rows(z, k);
        let t = targets.data();
        let mut loss = 0.0;
        for i in 0..n {
            let row = &z[i * k..(i + 1) * k];
            let lse = log_sum_exp(row);
            for j in 0..k {
                let tj = t[i * k + j];
                if tj != 0.0 {
                    loss -= tj * (row[j] - lse);
                }
            }
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::SoftCrossEntropy {
                logits,
                targets: t.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Column range `[start, end)` of a rank-2 value.
    pub fn columns(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.rank2(x, "columns")?;
        if start >= end || end > m {
            return Err(Error::Dimension(format!(
                "column range {start}..{end} outside 0..{m}"
            )));
        }
        let v = self.values[x.0].data();
        let w = end - start;
        let mut out = Vec::with_capacity(n * w);
        for i in 0..n {
            out.extend_from_slice(&v[i * m + start..i * m + end]);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(vec![n, w], out)?,
            Op::Columns { input: x, start },
            ng,
        ))
    }

    /// Side-by-side concatenation of rank-2 values with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat_cols of nothing".into()))?;
        let (n, _) = self.rank2(*first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.rank2(p, "concat_cols")?;
            if r != n {
                return Err(Error::Dimension(format!("concat_cols rows {r} vs {n}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.values[p.0].data()[i * w..(i + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::new(vec![n, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    /// Scalar `Σ x·w` for a fixed weight tensor of the same length.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let v = self.values[x.0].data();
        if v.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} values",
                weights.len(),
                v.len()
            )));
        }
        let s = v.iter().zip(weights).map(|(a, b)| a * b).sum();
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                input: x,
                weights: weights.to_vec(),
            },
            ng,
        ))
    }

    /// Back-propagates from a scalar node. Gradients from earlier calls are
    /// discarded first.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.values[output.0].len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar output, got shape {:?}",
                self.values[output.0].shape()
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            if !self.needs_grad[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut [f64]> {
        if !self.needs_grad[v.0] {
            return None;
        }
        let len = self.values[v.0].len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Take the op out so its cached buffers can be read while grads mutate.
        let op = std::mem::replace(&mut self.ops[i], Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(&self.values[a.0]);
                let n = self.values[b.0].shape()[1];
                if self.ng(*a) {
                    let bv = self.values[b.0].data().to_vec();
                    let ga = self.acc(*a).expect("checked");
                    gemm(m, n, k, g, false, &bv, true, ga, 1.0);
                }
                if self.ng(*b) {
                    let av = self.values[a.0].data().to_vec();
                    let gb = self.acc(*b).expect("checked");
                    gemm(k, m, n, &av, true, g, false, gb, 1.0);
                }
            }
            Op::AddRowBias(x, bias) => {
                let m = self.values[bias.0].len();
                if let Some(gx) = self.acc(*x) {
                    add_into(gx, g);
                }
                if let Some(gb) = self.acc(*bias) {
                    for row in g.chunks(m) {
                        add_into(gb, row);
                    }
                }
            }
            Op::AddChannelBias(x, bias) => {
                let shape = self.values[x.0].shape().to_vec();
                let plane = shape[2] * shape[3];
                if let Some(gx) = self.acc(*x) {
                    add_into(gx, g);
                }
                if let Some(gb) = self.acc(*bias) {
                    for (j, chunk) in g.chunks(plane).enumerate() {
                        gb[j % shape[1]] += chunk.iter().sum::<f64>();
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.acc(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(*b) {
                    add_into(gb, g);
                }
            }
            Op::Relu(x) => {
                let mask: Vec<bool> = self.values[x.0].data().iter().map(|&z| z > 0.0).collect();
                if let Some(gx) = self.acc(*x) {
                    for ((o, gi), m) in gx.iter_mut().zip(g).zip(mask) {
                        if m {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.acc(*x) {
                    add_into(gx, g);
                }
            }
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            } => {
                let (o, patch, spatial) = (geom.out_channels, geom.patch(), geom.spatial());
                if self.ng(*kernel) {
                    let gk = self.acc(*kernel).expect("checked");
                    for s in 0..geom.batch {
                        gemm(
                            o,
                            spatial,
                            patch,
                            &g[s * o * spatial..(s + 1) * o * spatial],
                            false,
                            &cols[s * patch * spatial..(s + 1) * patch * spatial],
                            true,
                            gk,
                            1.0,
                        );
                    }
                }
                if self.ng(*input) {
                    let kv = self.values[kernel.0].data().to_vec();
                    let sample_in = geom.in_channels * geom.height * geom.width;
                    let mut dcol = vec![0.0; patch * spatial];
                    let gx = self.acc(*input).expect("checked");
                    for s in 0..geom.batch {
                        gemm(
                            patch,
                            o,
                            spatial,
                            &kv,
                            true,
                            &g[s * o * spatial..(s + 1) * o * spatial],
                            false,
                            &mut dcol,
                            0.0,
                        );
                        col2im_add(&dcol, geom, &mut gx[s * sample_in..(s + 1) * sample_in]);
                    }
                }
            }
            Op::Softmax(x) => {
                let k = self.values[i].shape()[1];
                let p = self.values[i].data().to_vec();
                if let Some(gx) = self.acc(*x) {
                    for ((prow, grow), out) in p.chunks(k).zip(g.chunks(k)).zip(gx.chunks_mut(k)) {
                        let dot: f64 = prow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for j in 0..k {
                            out[j] += prow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy { probs, labels } => {
                let k = self.values[probs.0].shape()[1];
                let n = labels.len() as f64;
                let p = self.values[probs.0].data().to_vec();
                if let Some(gp) = self.acc(*probs) {
                    for (r, &y) in labels.iter().enumerate() {
                        gp[r * k + y] -= g[0] / (n * p[r * k + y]);
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.values[logits.0].shape()[1];
                let scale = g[0] / labels.len() as f64;
                if let Some(gz) = self.acc(*logits) {
                    for (r, &y) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            gz[r * k + j] += scale * (probs[r * k + j] - onehot);
                        }
                    }
                }
            }
            Op::SoftCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (n, k) = dims2(&self.values[logits.0]);
                let scale = g[0] / n as f64;
                if let Some(gz) = self.acc(*logits) {
                    for r in 0..n {
                        let trow = &targets[r * k..(r + 1) * k];
                        let mass: f64 = trow.iter().sum();
                        for j in 0..k {
                            gz[r * k + j] += scale * (probs[r * k + j] * mass - trow[j]);
                        }
                    }
                }
            }
            Op::Columns { input, start } => {
                let (n, m) = dims2(&self.values[input.0]);
                let w = self.values[i].shape()[1];
                let start = *start;
                if let Some(gx) = self.acc(*input) {
                    for r in 0..n {
                        add_into(
                            &mut gx[r * m + start..r * m + start + w],
                            &g[r * w..(r + 1) * w],
                        );
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (n, total) = dims2(&self.values[i]);
                let mut offset = 0;
                for &p in parts {
                    let w = self.values[p.0].shape()[1];
                    if let Some(gp) = self.acc(p) {
                        for r in 0..n {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::WeightedSum { input, weights } => {
                if let Some(gx) = self.acc(*input) {
                    for (o, w) in gx.iter_mut().zip(weights) {
                        *o += g[0] * w;
                    }
                }
            }
        }
        self.ops[i] = op;
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.shape()[0], t.shape()[1])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Dimension(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Index(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_rows(z: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for (src, dst) in z.chunks(k).zip(out.chunks_mut(k)) {
        let m = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - m).exp();
            sum += *d;
        }
        dst.iter_mut().for_each(|d| *d /= sum);
    }
    out
}

/// `c = op(a)·op(b) + beta·c` for row-major buffers, where `op(a)` is m×k and
/// `op(b)` is k×n. A transposed operand is stored with its dimensions swapped.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: slice lengths are checked above against the extents and strides passed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let spatial = g.spatial();
    for c in 0..g.in_channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * spatial..(row + 1) * spatial];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        dst[oy * g.out_w + ox] = if iy >= 0
                            && ix >= 0
                            && (iy as usize) < g.height
                            && (ix as usize) < g.width
                        {
                            plane[iy as usize * g.width + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let spatial = g.spatial();
    for c in 0..g.in_channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * spatial..(row + 1) * spatial];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy as usize >= g.height {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            plane[iy as usize * g.width + ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}
