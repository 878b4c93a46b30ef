//! Reverse-mode differentiation over batched tensors.
//!
//! Every primitive appends one node holding its output value. Nodes only
//! reference earlier nodes, so the insertion order is already a topological
//! order and [`Tape::backward`] walks it once, back to front.

use rand::Rng as _;

use super::rng::Rng;
use super::special::{digamma, lgamma};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d { input: Var, weight: Var, bias: Var, stride: usize },
    Linear { input: Var, weight: Var, bias: Var },
    Relu(Var),
    Dropout { input: Var, mask: Vec<f64> },
    MaxPoolTime { input: Var, argmax: Vec<usize> },
    Softmax { input: Var, temperature: f64 },
    LogSoftmax { input: Var, temperature: f64 },
    Exp(Var),
    Log(Var),
    Neg(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SelectRows { input: Var, rows: Vec<usize> },
    Clamp { input: Var, lo: f64, hi: f64 },
    Lgamma(Var),
    Softplus(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every differentiable leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
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

    /// Differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Multi-channel 1-D convolution without padding.
    ///
    /// `input` is `[batch, in_channels, time]`, `weight` is
    /// `[out_channels, in_channels, kernel]` and `bias` is `[out_channels]`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        if xs.len() != 3 || ws.len() != 3 || ws[1] != xs[1] {
            return Err(Error::shape("conv1d", xs, ws));
        }
        if self.shape(bias) != [ws[0]] {
            return Err(Error::shape("conv1d bias", ws, self.shape(bias)));
        }
        if stride == 0 {
            return Err(Error::InvalidParameter("conv1d stride must be positive".into()));
        }
        let (batch, chans, time) = (xs[0], xs[1], xs[2]);
        let (outs, kernel) = (ws[0], ws[2]);
        if time < kernel {
            return Err(Error::shape("conv1d (input shorter than kernel)", xs, ws));
        }
        let len = (time - kernel) / stride + 1;
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = self.value(bias).data();
        let mut y = vec![0.0; batch * outs * len];
        for bi in 0..batch {
            for o in 0..outs {
                let yrow = &mut y[(bi * outs + o) * len..][..len];
                yrow.fill(b[o]);
                for c in 0..chans {
                    let xrow = &x[(bi * chans + c) * time..][..time];
                    let wrow = &w[(o * chans + c) * kernel..][..kernel];
                    for (k, &wv) in wrow.iter().enumerate() {
                        if stride == 1 {
                            for (yv, xv) in yrow.iter_mut().zip(&xrow[k..k + len]) {
                                *yv += wv * xv;
                            }
                        } else {
                            for (t, yv) in yrow.iter_mut().enumerate() {
                                *yv += wv * xrow[t * stride + k];
                            }
                        }
                    }
                }
            }
        }
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        let value = Tensor::new(vec![batch, outs, len], y)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
            },
            needs,
        ))
    }

    /// Affine map `input · weightᵀ + bias` with `input` `[batch, in]`,
    /// `weight` `[out, in]` and `bias` `[out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape("linear", xs, ws));
        }
        if self.shape(bias) != [ws[0]] {
            return Err(Error::shape("linear bias", ws, self.shape(bias)));
        }
        let (batch, inputs, outs) = (xs[0], xs[1], ws[0]);
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = self.value(bias).data();
        let mut y = vec![0.0; batch * outs];
        for bi in 0..batch {
            let xrow = &x[bi * inputs..][..inputs];
            for o in 0..outs {
                let wrow = &w[o * inputs..][..inputs];
                y[bi * outs + o] = b[o] + dot(xrow, wrow);
            }
        }
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        let value = Tensor::new(vec![batch, outs], y)?;
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), needs)
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - p)` so inference
    /// needs no rescaling. `p == 0` returns `a` unchanged.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("dropout rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let src = self.value(a);
        let mask: Vec<f64> = (0..src.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Dropout { input: a, mask }, needs))
    }

    /// Maximum over the time axis: `[batch, channels, time] -> [batch, channels]`.
    pub fn max_pool_time(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 3 || s[2] == 0 {
            return Err(Error::shape("max_pool_time", s, &[0, 0, 1]));
        }
        let (batch, chans, time) = (s[0], s[1], s[2]);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(batch * chans);
        let mut argmax = Vec::with_capacity(batch * chans);
        for row in x.chunks_exact(time) {
            let (mut best, mut arg) = (row[0], 0);
            for (t, &v) in row.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    arg = t;
                }
            }
            out.push(best);
            argmax.push(arg);
        }
        let value = Tensor::new(vec![batch, chans], out)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::MaxPoolTime { input: a, argmax }, needs))
    }

    /// Row-wise softmax of `a / temperature` over the last axis of a 2-D tensor.
    pub fn softmax(&mut self, a: Var, temperature: f64) -> Result<Var> {
        let value = self.row_softmax(a, temperature, false)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Softmax { input: a, temperature }, needs))
    }

    pub fn log_softmax(&mut self, a: Var, temperature: f64) -> Result<Var> {
        let value = self.row_softmax(a, temperature, true)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::LogSoftmax { input: a, temperature }, needs))
    }

    fn row_softmax(&self, a: Var, temperature: f64, log: bool) -> Result<Tensor> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape("softmax", s, &[0, 0]));
        }
        if !(temperature > 0.0) {
            return Err(Error::InvalidParameter(format!("temperature {temperature} must be positive")));
        }
        let width = s[1];
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_exact_mut(width.max(1)) {
            if log {
                log_softmax_in_place(row, temperature);
            } else {
                softmax_in_place(row, temperature);
            }
        }
        Tensor::new(s.to_vec(), out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let needs = self.needs(a);
        self.push(value, Op::Exp(a), needs)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).data().iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Domain {
                function: "log",
                value: bad,
            });
        }
        let value = self.value(a).map(f64::ln);
        let needs = self.needs(a);
        Ok(self.push(value, Op::Log(a), needs))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| -v);
        let needs = self.needs(a);
        self.push(value, Op::Neg(a), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("add", a, b, |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("sub", a, b, |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("mul", a, b, |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    fn zip(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v * c);
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, c), needs)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v + c);
        let needs = self.needs(a);
        self.push(value, Op::AddScalar(a), needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let needs = self.needs(a);
        self.push(value, Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Empty("mean of an empty tensor".into()));
        }
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let needs = self.needs(a);
        Ok(self.push(value, Op::Mean(a), needs))
    }

    /// Sums every axis except the first: `[batch, ...] -> [batch]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().is_empty() {
            return Err(Error::shape("sum_rows", t.shape(), &[0, 0]));
        }
        let rows = t.rows();
        let data: Vec<f64> = (0..rows).map(|i| t.row(i).iter().sum()).collect();
        let value = Tensor::new(vec![rows], data)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::SumRows(a), needs))
    }

    /// Gathers rows along the first axis (duplicates allowed).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let n = t.rows();
        if t.shape().is_empty() {
            return Err(Error::shape("select_rows", t.shape(), &[0]));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape("select_rows", t.shape(), &[bad]));
        }
        let mut data = Vec::with_capacity(rows.len() * t.row_len());
        for &r in rows {
            data.extend_from_slice(t.row(r));
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows.len();
        let value = Tensor::new(shape, data)?;
        let needs = self.needs(a);
        Ok(self.push(
            value,
            Op::SelectRows {
                input: a,
                rows: rows.to_vec(),
            },
            needs,
        ))
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero where the bound binds.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        let needs = self.needs(a);
        self.push(value, Op::Clamp { input: a, lo, hi }, needs)
    }

    pub fn lgamma(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let data = src.data().iter().map(|&v| lgamma(v)).collect::<Result<Vec<_>>>()?;
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Lgamma(a), needs))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        let needs = self.needs(a);
        self.push(value, Op::Softplus(a), needs)
    }

    /// Propagates gradients of the scalar `loss` back to every leaf created
    /// with [`Tape::leaf`]. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let lt = &self.nodes[loss.0].value;
        if !lt.is_scalar() || lt.shape().iter().any(|&d| d != 1) {
            return Err(Error::shape("backward (loss must be scalar)", lt.shape(), &[]));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lt.shape().to_vec(), vec![1.0])?);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        // only leaf gradients survive; intermediate ones were consumed above
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (batch, chans, time) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (outs, kernel) = (w.shape()[0], w.shape()[2]);
                let len = node.value.shape()[2];
                let s = *stride;
                if self.needs(*input) {
                    let mut dx = vec![0.0; x.len()];
                    for bi in 0..batch {
                        for o in 0..outs {
                            let grow = &gd[(bi * outs + o) * len..][..len];
                            for c in 0..chans {
                                let dxrow = &mut dx[(bi * chans + c) * time..][..time];
                                let wrow = &w.data()[(o * chans + c) * kernel..][..kernel];
                                for (k, &wv) in wrow.iter().enumerate() {
                                    if s == 1 {
                                        for (d, gv) in dxrow[k..k + len].iter_mut().zip(grow) {
                                            *d += wv * gv;
                                        }
                                    } else {
                                        for (t, gv) in grow.iter().enumerate() {
                                            dxrow[t * s + k] += wv * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    accumulate(grads, *input, Tensor::new(x.shape().to_vec(), dx)?);
                }
                if self.needs(*weight) {
                    let mut dw = vec![0.0; w.len()];
                    for bi in 0..batch {
                        for o in 0..outs {
                            let grow = &gd[(bi * outs + o) * len..][..len];
                            for c in 0..chans {
                                let xrow = &x.data()[(bi * chans + c) * time..][..time];
                                let dwrow = &mut dw[(o * chans + c) * kernel..][..kernel];
                                for (k, d) in dwrow.iter_mut().enumerate() {
                                    *d += if s == 1 {
                                        dot(grow, &xrow[k..k + len])
                                    } else {
                                        grow.iter().enumerate().map(|(t, gv)| gv * xrow[t * s + k]).sum()
                                    };
                                }
                            }
                        }
                    }
                    accumulate(grads, *weight, Tensor::new(w.shape().to_vec(), dw)?);
                }
                if self.needs(*bias) {
                    let mut db = vec![0.0; outs];
                    for (j, row) in gd.chunks_exact(len).enumerate() {
                        db[j % outs] += row.iter().sum::<f64>();
                    }
                    accumulate(grads, *bias, Tensor::new(vec![outs], db)?);
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (batch, inputs) = (x.shape()[0], x.shape()[1]);
                let outs = w.shape()[0];
                if self.needs(*input) {
                    let mut dx = vec![0.0; x.len()];
                    for bi in 0..batch {
                        let dxrow = &mut dx[bi * inputs..][..inputs];
                        for o in 0..outs {
                            axpy(gd[bi * outs + o], &w.data()[o * inputs..][..inputs], dxrow);
                        }
                    }
                    accumulate(grads, *input, Tensor::new(x.shape().to_vec(), dx)?);
                }
                if self.needs(*weight) {
                    let mut dw = vec![0.0; w.len()];
                    for bi in 0..batch {
                        let xrow = &x.data()[bi * inputs..][..inputs];
                        for o in 0..outs {
                            axpy(gd[bi * outs + o], xrow, &mut dw[o * inputs..][..inputs]);
                        }
                    }
                    accumulate(grads, *weight, Tensor::new(w.shape().to_vec(), dw)?);
                }
                if self.needs(*bias) {
                    let mut db = vec![0.0; outs];
                    for row in gd.chunks_exact(outs) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *bias, Tensor::new(vec![outs], db)?);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d = gd.iter().zip(x).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate_like(grads, *a, d)?;
            }
            Op::Dropout { input, mask } => {
                let d = gd.iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate_like(grads, *input, d)?;
            }
            Op::MaxPoolTime { input, argmax } => {
                let x = self.value(*input);
                let time = x.shape()[2];
                let mut d = vec![0.0; x.len()];
                for (j, (&arg, &gv)) in argmax.iter().zip(gd).enumerate() {
                    d[j * time + arg] += gv;
                }
                self.accumulate_like(grads, *input, d)?;
            }
            Op::Softmax { input, temperature } => {
                let y = node.value.data();
                let width = node.value.shape()[1].max(1);
                let mut d = vec![0.0; y.len()];
                for ((drow, yrow), grow) in d.chunks_exact_mut(width).zip(y.chunks_exact(width)).zip(gd.chunks_exact(width)) {
                    let inner = dot(grow, yrow);
                    for ((dv, yv), gv) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dv = (gv - inner) * yv / temperature;
                    }
                }
                self.accumulate_like(grads, *input, d)?;
            }
            Op::LogSoftmax { input, temperature } => {
                let y = node.value.data();
                let width = node.value.shape()[1].max(1);
                let mut d = vec![0.0; y.len()];
                for ((drow, yrow), grow) in d.chunks_exact_mut(width).zip(y.chunks_exact(width)).zip(gd.chunks_exact(width)) {
                    let total: f64 = grow.iter().sum();
                    for ((dv, yv), gv) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dv = (gv - yv.exp() * total) / temperature;
                    }
                }
                self.accumulate_like(grads, *input, d)?;
            }
            Op::Exp(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, v)| g * v).collect();
                self.accumulate_like(grads, *a, d)?;
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let d = gd.iter().zip(x).map(|(g, v)| g / v).collect();
                self.accumulate_like(grads, *a, d)?;
            }
            Op::Neg(a) => {
                let d = gd.iter().map(|g| -g).collect();
                self.accumulate_like(grads, *a, d)?;
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    self.accumulate_like(grads, *a, gd.to_vec())?;
                }
                if self.needs(*b) {
                    self.accumulate_like(grads, *b, gd.to_vec())?;
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    self.accumulate_like(grads, *a, gd.to_vec())?;
                }
                if self.needs(*b) {
                    self.accumulate_like(grads, *b, gd.iter().map(|g| -g).collect())?;
                }
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    self.accumulate_like(grads, *a, gd.iter().zip(xb).map(|(g, v)| g * v).collect())?;
                }
                if self.needs(*b) {
                    self.accumulate_like(grads, *b, gd.iter().zip(xa).map(|(g, v)| g * v).collect())?;
                }
            }
            Op::Scale(a, c) => {
                self.accumulate_like(grads, *a, gd.iter().map(|g| g * c).collect())?;
            }
            Op::AddScalar(a) => {
                self.accumulate_like(grads, *a, gd.to_vec())?;
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate_like(grads, *a, vec![gd[0]; n])?;
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.accumulate_like(grads, *a, vec![gd[0] / n as f64; n])?;
            }
            Op::SumRows(a) => {
                let x = self.value(*a);
                let w = x.row_len();
                let mut d = Vec::with_capacity(x.len());
                for &gv in gd {
                    d.extend(std::iter::repeat_n(gv, w));
                }
                self.accumulate_like(grads, *a, d)?;
            }
            Op::SelectRows { input, rows } => {
                let x = self.value(*input);
                let w = x.row_len();
                let mut d = vec![0.0; x.len()];
                for (j, &r) in rows.iter().enumerate() {
                    for (dv, gv) in d[r * w..(r + 1) * w].iter_mut().zip(&gd[j * w..(j + 1) * w]) {
                        *dv += gv;
                    }
                }
                self.accumulate_like(grads, *input, d)?;
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(g, &v)| if v < *lo || v > *hi { 0.0 } else { *g })
                    .collect();
                self.accumulate_like(grads, *input, d)?;
            }
            Op::Lgamma(a) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(g, &v)| Ok(g * digamma(v)?))
                    .collect::<Result<Vec<_>>>()?;
                self.accumulate_like(grads, *a, d)?;
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                let d = gd.iter().zip(x).map(|(g, &v)| g * sigmoid(v)).collect();
                self.accumulate_like(grads, *a, d)?;
            }
        }
        Ok(())
    }

    fn accumulate_like(&self, grads: &mut [Option<Tensor>], target: Var, data: Vec<f64>) -> Result<()> {
        if !self.needs(target) {
            return Ok(());
        }
        let t = Tensor::new(self.shape(target).to_vec(), data)?;
        accumulate(grads, target, t);
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], target: Var, g: Tensor) {
    match &mut grads[target.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of `row / temperature`, in place.
pub(crate) fn softmax_in_place(row: &mut [f64], temperature: f64) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - max) / temperature).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn log_softmax_in_place(row: &mut [f64], temperature: f64) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = row.iter().map(|&v| ((v - max) / temperature).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v = (*v - max) / temperature - lse;
    }
}
