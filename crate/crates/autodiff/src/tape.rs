//! Computation tape and the differentiable operator set.
//!
//! Every operation appends a node to the tape. Nodes are stored in creation
//! order, which is a topological order of the graph, so the backward pass is
//! a single reverse sweep that visits each node once.

use crate::error::{AutodiffError, Result};
use crate::special::{digamma, ln_gamma, trigamma};
use crate::tensor::{broadcast_shape, for_each_broadcast, gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Spatial padding for [`Tape::conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Output keeps the input's spatial extent; kernel sides must be odd.
    Same,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    MinConst(Var, f64),
    LnGamma(Var),
    Digamma(Var),
    StopGrad,
    Sum(Var),
    SumLastAxis(Var),
    Mean(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    Conv2d { input: Var, weight: Var, pad: usize },
    MaxPool2 { input: Var, argmax: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
    /// Accumulated gradient; only populated for tracked leaves.
    grad: Option<Tensor>,
}

/// Records executed operations so gradients can be propagated back to the
/// tracked leaves.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    stop_values: Vec<Tensor>,
    replay: Option<std::vec::IntoIter<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A tracked leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An untracked leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Accumulated gradient of a tracked leaf. Zeros before any backward pass
    /// reaches it; `None` for untracked or non-leaf nodes.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        if !node.tracked || !matches!(node.op, Op::Leaf) {
            return None;
        }
        Some(
            node.grad
                .clone()
                .unwrap_or_else(|| Tensor::zeros(node.value.shape())),
        )
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            tracked,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let tracked = self.tracked_any(&[x]);
        self.push(value, op, tracked)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out = broadcast_shape(&sa, &sb).ok_or_else(|| AutodiffError::ShapeMismatch {
            op: name,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let mut data = vec![0.0; out.iter().product()];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for_each_broadcast(&out, &sa, &sb, |o, ia, ib| data[o] = f(da[ia], db[ib]));
        }
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(Tensor::new(out, data)?, op, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Op::Neg(x), |v| -v)
    }

    /// `c · x`
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| c * v)
    }

    /// `x + c`
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    /// `[m×k] · [k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), tracked))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(AutodiffError::InvalidArgument {
                op: "transpose",
                reason: format!("expected a matrix, got shape {s:?}"),
            });
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let tracked = self.tracked_any(&[x]);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(x), tracked))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let tracked = self.tracked_any(&[x]);
        Ok(self.push(value, Op::Reshape(x), tracked))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), |v| v.max(0.0) + (-v.abs()).exp().ln_1p())
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// Elementwise `min(x, c)`.
    pub fn min_const(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::MinConst(x, c), |v| v.min(c))
    }

    pub fn ln_gamma(&mut self, x: Var) -> Var {
        self.unary(x, Op::LnGamma(x), ln_gamma)
    }

    pub fn digamma(&mut self, x: Var) -> Var {
        self.unary(x, Op::Digamma(x), digamma)
    }

    /// Identity in the forward pass; blocks the gradient in the backward pass.
    ///
    /// Under [`Tape::replay_stop_grads`] the output is instead the next
    /// replayed value, so a perturbed re-evaluation sees blocked subgraphs
    /// held at their original values.
    pub fn stop_grad(&mut self, x: Var) -> Var {
        let value = match self.replay.as_mut().and_then(Iterator::next) {
            Some(v) if v.shape() == self.shape(x) => v,
            _ => self.value(x).clone(),
        };
        self.stop_values.push(value.clone());
        self.push(value, Op::StopGrad, false)
    }

    /// Outputs of every [`Tape::stop_grad`] call so far, in call order.
    pub fn stop_grad_values(&self) -> &[Tensor] {
        &self.stop_values
    }

    /// Makes subsequent `stop_grad` calls return `values` in order.
    pub fn replay_stop_grads(&mut self, values: Vec<Tensor>) {
        self.replay = Some(values.into_iter());
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let tracked = self.tracked_any(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), tracked)
    }

    /// Sum over the last axis, keeping it with extent 1.
    pub fn sum_last_axis(&mut self, x: Var) -> Result<Var> {
        let (shape, cols) = self.last_axis(x, "sum_last_axis")?;
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(cols)
            .map(|row| row.iter().sum())
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = 1;
        let tracked = self.tracked_any(&[x]);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::SumLastAxis(x), tracked))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let tracked = self.tracked_any(&[x]);
        self.push(Tensor::scalar(m), Op::Mean(x), tracked)
    }

    fn last_axis(&self, x: Var, op: &'static str) -> Result<(Vec<usize>, usize)> {
        let shape = self.shape(x).to_vec();
        match shape.last() {
            Some(&c) if c > 0 => Ok((shape, c)),
            _ => Err(AutodiffError::InvalidArgument {
                op,
                reason: format!("needs a non-empty last axis, got shape {shape:?}"),
            }),
        }
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (shape, cols) = self.last_axis(x, "softmax")?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let tracked = self.tracked_any(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Softmax(x), tracked))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (shape, cols) = self.last_axis(x, "log_softmax")?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let tracked = self.tracked_any(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::LogSoftmax(x), tracked))
    }

    /// Picks `x[n, labels[n]]` from an `N × K` tensor.
    pub fn gather(&mut self, x: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "gather",
                lhs: s,
                rhs: vec![labels.len()],
            });
        }
        let k = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(AutodiffError::InvalidArgument {
                op: "gather",
                reason: format!("label {bad} out of range for {k} classes"),
            });
        }
        let src = self.value(x).data();
        let data = labels.iter().enumerate().map(|(n, &l)| src[n * k + l]).collect();
        let tracked = self.tracked_any(&[x]);
        Ok(self.push(
            Tensor::new(vec![labels.len()], data)?,
            Op::Gather(x, labels.to_vec()),
            tracked,
        ))
    }

    /// Stride-1 2-D convolution of `[N, C, H, W]` input with `[O, C, KH, KW]`
    /// weights. Bias is added separately by broadcasting a `[O, 1, 1]` tensor.
    pub fn conv2d(&mut self, input: Var, weight: Var, padding: Padding) -> Result<Var> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if si.len() != 4 || sw.len() != 4 || si[1] != sw[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d",
                lhs: si,
                rhs: sw,
            });
        }
        let pad = match padding {
            Padding::Valid => 0,
            Padding::Same => {
                if sw[2] % 2 == 0 || sw[3] % 2 == 0 || sw[2] != sw[3] {
                    return Err(AutodiffError::InvalidArgument {
                        op: "conv2d",
                        reason: format!("same padding needs a square odd kernel, got {sw:?}"),
                    });
                }
                sw[2] / 2
            }
        };
        let geom = ConvGeometry::new(&si, &sw, pad).ok_or_else(|| AutodiffError::ShapeMismatch {
            op: "conv2d",
            lhs: si.clone(),
            rhs: sw.clone(),
        })?;
        let mut out = vec![0.0; geom.out_len()];
        geom.forward(self.value(input).data(), self.value(weight).data(), &mut out);
        let tracked = self.tracked_any(&[input, weight]);
        Ok(self.push(
            Tensor::new(geom.out_shape(), out)?,
            Op::Conv2d { input, weight, pad },
            tracked,
        ))
    }

    /// 2×2 max pooling with stride 2 over `[N, C, H, W]`; odd trailing rows and
    /// columns are dropped.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(AutodiffError::InvalidArgument {
                op: "max_pool2",
                reason: format!("expected [N, C, H≥2, W≥2], got {s:?}"),
            });
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let tracked = self.tracked_any(&[input]);
        Ok(self.push(
            Tensor::new(vec![n, c, oh, ow], out)?,
            Op::MaxPool2 { input, argmax },
            tracked,
        ))
    }

    /// Back-propagates from a scalar `root`, accumulating into the gradients
    /// of every tracked leaf.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if root_value.numel() != 1 {
            return Err(AutodiffError::NonScalarRoot(root_value.shape().to_vec()));
        }
        if !self.nodes[root.0].tracked {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        let mut leaf_updates = Vec::new();
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            self.propagate(i, g, &mut grads, &mut leaf_updates);
        }
        for (i, g) in leaf_updates {
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }

    fn propagate(
        &self,
        i: usize,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        leaf_updates: &mut Vec<(usize, Vec<f64>)>,
    ) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut send = |v: Var, contribution: Vec<f64>| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contribution),
            }
        };
        let elementwise = |x: Var, d: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            let xs = self.nodes[x.0].value.data();
            xs.iter().zip(out).zip(&g).map(|((&x, &y), &g)| g * d(x, y)).collect()
        };
        match &node.op {
            Op::Leaf => leaf_updates.push((i, g)),
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let (ga, gb) = self.reduce_broadcast(a, b, node.value.shape(), |o, _, _| {
                    (g[o], sign * g[o])
                });
                send(a, ga);
                send(b, gb);
            }
            &Op::Mul(a, b) => {
                let (da, db) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                let (ga, gb) = self.reduce_broadcast(a, b, node.value.shape(), |o, ia, ib| {
                    (g[o] * db[ib], g[o] * da[ia])
                });
                send(a, ga);
                send(b, gb);
            }
            &Op::Div(a, b) => {
                let (da, db) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                let (ga, gb) = self.reduce_broadcast(a, b, node.value.shape(), |o, ia, ib| {
                    (g[o] / db[ib], -g[o] * da[ia] / (db[ib] * db[ib]))
                });
                send(a, ga);
                send(b, gb);
            }
            &Op::Neg(x) => send(x, g.iter().map(|v| -v).collect()),
            &Op::Scale(x, c) => send(x, g.iter().map(|v| c * v).collect()),
            &Op::AddScalar(x) | &Op::Reshape(x) => send(x, g),
            &Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.nodes[a.0].tracked {
                    let mut ga = vec![0.0; m * k];
                    gemm_nt(&g, self.nodes[b.0].value.data(), &mut ga, m, n, k);
                    send(a, ga);
                }
                if self.nodes[b.0].tracked {
                    let mut gb = vec![0.0; k * n];
                    gemm_tn(self.nodes[a.0].value.data(), &g, &mut gb, m, k, n);
                    send(b, gb);
                }
            }
            &Op::Transpose(x) => {
                let s = self.nodes[x.0].value.shape();
                let (r, c) = (s[0], s[1]);
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = g[j * r + i];
                    }
                }
                send(x, gx);
            }
            &Op::Relu(x) => send(x, elementwise(x, &|x, _| if x > 0.0 { 1.0 } else { 0.0 })),
            &Op::Softplus(x) => send(x, elementwise(x, &|x, _| 1.0 / (1.0 + (-x).exp()))),
            &Op::Exp(x) => send(x, elementwise(x, &|_, y| y)),
            &Op::Log(x) => send(x, elementwise(x, &|x, _| 1.0 / x)),
            &Op::Square(x) => send(x, elementwise(x, &|x, _| 2.0 * x)),
            &Op::MinConst(x, c) => send(x, elementwise(x, &|x, _| if x < c { 1.0 } else { 0.0 })),
            &Op::LnGamma(x) => send(x, elementwise(x, &|x, _| digamma(x))),
            &Op::Digamma(x) => send(x, elementwise(x, &|x, _| trigamma(x))),
            Op::StopGrad => {}
            &Op::Sum(x) => send(x, vec![g[0]; self.nodes[x.0].value.numel()]),
            &Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                send(x, vec![g[0] / n as f64; n]);
            }
            &Op::SumLastAxis(x) => {
                let cols = *self.nodes[x.0].value.shape().last().unwrap();
                let gx = g.iter().flat_map(|&v| std::iter::repeat_n(v, cols)).collect();
                send(x, gx);
            }
            &Op::Softmax(x) => {
                let cols = *node.value.shape().last().unwrap();
                let mut gx = vec![0.0; g.len()];
                for ((gx, y), g) in gx.chunks_mut(cols).zip(out.chunks(cols)).zip(g.chunks(cols)) {
                    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        gx[j] = y[j] * (g[j] - dot);
                    }
                }
                send(x, gx);
            }
            &Op::LogSoftmax(x) => {
                let cols = *node.value.shape().last().unwrap();
                let mut gx = vec![0.0; g.len()];
                for ((gx, y), g) in gx.chunks_mut(cols).zip(out.chunks(cols)).zip(g.chunks(cols)) {
                    let total: f64 = g.iter().sum();
                    for j in 0..cols {
                        gx[j] = g[j] - y[j].exp() * total;
                    }
                }
                send(x, gx);
            }
            Op::Gather(x, labels) => {
                let k = self.nodes[x.0].value.shape()[1];
                let mut gx = vec![0.0; labels.len() * k];
                for (n, &l) in labels.iter().enumerate() {
                    gx[n * k + l] = g[n];
                }
                send(*x, gx);
            }
            &Op::Conv2d { input, weight, pad } => {
                let (xi, xw) = (&self.nodes[input.0], &self.nodes[weight.0]);
                let geom = ConvGeometry::new(xi.value.shape(), xw.value.shape(), pad)
                    .expect("validated in forward");
                if xi.tracked {
                    let mut gi = vec![0.0; xi.value.numel()];
                    geom.backward_input(&g, xw.value.data(), &mut gi);
                    send(input, gi);
                }
                if xw.tracked {
                    let mut gw = vec![0.0; xw.value.numel()];
                    geom.backward_weight(&g, xi.value.data(), &mut gw);
                    send(weight, gw);
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let mut gi = vec![0.0; self.nodes[input.0].value.numel()];
                for (o, &src) in argmax.iter().enumerate() {
                    gi[src] += g[o];
                }
                send(*input, gi);
            }
        }
    }

    /// Gradient contributions of a broadcasting binary op, summed back onto
    /// each operand's shape.
    fn reduce_broadcast(
        &self,
        a: Var,
        b: Var,
        out: &[usize],
        f: impl Fn(usize, usize, usize) -> (f64, f64),
    ) -> (Vec<f64>, Vec<f64>) {
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        let mut ga = vec![0.0; self.nodes[a.0].value.numel()];
        let mut gb = vec![0.0; self.nodes[b.0].value.numel()];
        for_each_broadcast(out, sa, sb, |o, ia, ib| {
            let (x, y) = f(o, ia, ib);
            ga[ia] += x;
            gb[ib] += y;
        });
        (ga, gb)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], weight: &[usize], pad: usize) -> Option<Self> {
        let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
        let (o, kh, kw) = (weight[0], weight[2], weight[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        Some(Self {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            pad,
            oh: h + 2 * pad - kh + 1,
            ow: w + 2 * pad - kw + 1,
        })
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.o, self.oh, self.ow]
    }

    fn out_len(&self) -> usize {
        self.n * self.o * self.oh * self.ow
    }

    /// Output columns `j` for which input column `j + v - pad` is in bounds.
    fn col_range(&self, v: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(v);
        let hi = (self.w + self.pad).saturating_sub(v).min(self.ow);
        (lo, hi.max(lo))
    }

    fn row_range(&self, u: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(u);
        let hi = (self.h + self.pad).saturating_sub(u).min(self.oh);
        (lo, hi.max(lo))
    }

    fn forward(&self, x: &[f64], wt: &[f64], out: &mut [f64]) {
        self.visit(|oi, xi, wi| out[oi] += x[xi] * wt[wi]);
    }

    fn backward_input(&self, g: &[f64], wt: &[f64], gx: &mut [f64]) {
        self.visit(|oi, xi, wi| gx[xi] += g[oi] * wt[wi]);
    }

    fn backward_weight(&self, g: &[f64], x: &[f64], gw: &mut [f64]) {
        self.visit(|oi, xi, wi| gw[wi] += g[oi] * x[xi]);
    }

    /// Calls `f(out_index, input_index, weight_index)` for every multiply of
    /// the convolution.
    fn visit(&self, mut f: impl FnMut(usize, usize, usize)) {
        for b in 0..self.n {
            for o in 0..self.o {
                let out_base = (b * self.o + o) * self.oh * self.ow;
                for c in 0..self.c {
                    let in_base = (b * self.c + c) * self.h * self.w;
                    for u in 0..self.kh {
                        let (r0, r1) = self.row_range(u);
                        for v in 0..self.kw {
                            let (c0, c1) = self.col_range(v);
                            let wi = ((o * self.c + c) * self.kh + u) * self.kw + v;
                            for i in r0..r1 {
                                let xr = in_base + (i + u - self.pad) * self.w;
                                let orow = out_base + i * self.ow;
                                for j in c0..c1 {
                                    f(orow + j, xr + j + v - self.pad, wi);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let a = Tensor::matrix(3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let i = tape.constant(Tensor::eye(3));
        let av = tape.constant(a.clone());
        let out = tape.matmul(i, av).unwrap();
        assert_eq!(tape.value(out), &a);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0; 3]));
        let y = tape.softmax(x).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let sq = tape.square(x);
        let root = tape.sum(sq);
        tape.backward(root).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let sq = tape.square(x);
        let root = tape.sum(sq);
        tape.backward(root).unwrap();
        tape.backward(root).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 8.0]);
        tape.zero_grad();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn reused_tensor_sums_gradients() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        tape.backward(z).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), Some(7.0));
    }

    #[test]
    fn constant_root_leaves_gradients_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::scalar(5.0));
        tape.backward(c).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert_eq!(
            tape.backward(x),
            Err(AutodiffError::NonScalarRoot(vec![2]))
        );
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 2]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
        assert!(tape.add(a, b).is_err());
    }

    #[test]
    fn stop_grad_blocks() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let s = tape.stop_grad(x);
        let d = tape.sub(x, s).unwrap();
        assert_eq!(tape.value(d).item(), Some(0.0));
        tape.backward(d).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), Some(1.0));
    }

    #[test]
    fn conv_same_padding_keeps_extent() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 1, 4, 4], 1.0));
        let w = tape.constant(Tensor::full(&[2, 1, 3, 3], 1.0));
        let y = tape.conv2d(x, w, Padding::Same).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 4, 4]);
        // corner sees a 2×2 window, interior a 3×3 window
        assert_eq!(tape.value(y).data()[0], 4.0);
        assert_eq!(tape.value(y).data()[5], 9.0);
        let v = tape.conv2d(x, w, Padding::Valid).unwrap();
        assert_eq!(tape.shape(v), &[1, 2, 2, 2]);
    }

    #[test]
    fn max_pool_picks_window_max() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 4.0, 3.0, 2.0]).unwrap());
        let y = tape.max_pool2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }
}
