//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each operation appends a
//! node holding its value and the ids of its inputs; [`Tape::backward`]
//! walks the nodes in reverse and sums gradient contributions at fan-out
//! points. Nodes that do not depend on any `requires_grad` leaf never
//! receive a gradient.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the input `x` and output `y = f(x)`.
    /// The relu derivative at exactly zero is zero.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a 3x3 convolution window sweep over an NHWC batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub stride: usize,
    pub padding: usize,
}

pub const KERNEL: usize = 3;

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - KERNEL) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - KERNEL) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        KERNEL * KERNEL * self.channels
    }

    /// For each (output row, patch column) pair, the flat NHWC input index
    /// it reads, or `None` when it falls into the zero padding.
    fn for_each_tap(&self, mut visit: impl FnMut(usize, Option<usize>)) {
        let (ho, wo) = (self.out_height(), self.out_width());
        let patch = self.patch_len();
        for b in 0..self.batch {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = (b * ho + oy) * wo + ox;
                    for ky in 0..KERNEL {
                        for kx in 0..KERNEL {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            let inside =
                                iy >= 0 && ix >= 0 && (iy as usize) < self.height && (ix as usize) < self.width;
                            for c in 0..self.channels {
                                let col = (ky * KERNEL + kx) * self.channels + c;
                                let src = inside.then(|| {
                                    ((b * self.height + iy as usize) * self.width + ix as usize) * self.channels + c
                                });
                                visit(row * patch + col, src);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    MulBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Act(Var, Activation),
    Sum(Var),
    Reshape(Var),
    Im2Col(Var, ConvGeometry),
    GlobalAvgPool(Var),
    /// Stores the precomputed logit gradient.
    Loss(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    tracked: bool,
    op: Op,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// An append-only record of operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Plain matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return dim_err(format!("matmul of {:?} and {:?}", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
}

fn check_one_hot(targets: &Tensor) -> Result<()> {
    for r in 0..targets.rows() {
        let row = targets.row(r);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Data(format!("target row {r} is not one-hot")));
        }
    }
    Ok(())
}

/// Mean softmax cross-entropy over the rows of `logits`, with the logit
/// gradient `(softmax(logits) - targets) / P`.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 || logits.shape() != targets.shape() {
        return dim_err(format!("logits {:?} vs targets {:?}", logits.shape(), targets.shape()));
    }
    check_one_hot(targets)?;
    let (p, o) = (logits.rows(), logits.cols());
    let mut loss = 0.0;
    let mut grad = vec![0.0; p * o];
    for r in 0..p {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        for c in 0..o {
            let t = targets.at(r, c);
            if t == 1.0 {
                loss += log_z - row[c];
            }
            grad[r * o + c] = (((row[c] - log_z).exp()) - t) / p as f64;
        }
    }
    Ok((loss / p as f64, Tensor::new(vec![p, o], grad)?))
}

/// Mean over rows of `0.5 * ||pred - target||^2`, with gradient
/// `(pred - target) / P`.
pub fn squared_error(pred: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if pred.rank() != 2 || pred.shape() != targets.shape() {
        return dim_err(format!(
            "predictions {:?} vs targets {:?}",
            pred.shape(),
            targets.shape()
        ));
    }
    let p = pred.rows() as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = pred
        .data()
        .iter()
        .zip(targets.data())
        .map(|(y, t)| {
            loss += 0.5 * (y - t) * (y - t);
            (y - t) / p
        })
        .collect();
    Ok((loss / p, Tensor::new(pred.shape().to_vec(), grad)?))
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

    fn push(&mut self, value: Tensor, tracked: bool, op: Op) -> Var {
        self.nodes.push(Node { value, tracked, op });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Records a leaf. Its `requires_grad` flag decides whether it will
    /// receive a gradient.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let tracked = tensor.requires_grad();
        let mut value = tensor.clone();
        value.clear_grad();
        self.push(value, tracked, Op::Leaf)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, false, Op::Leaf)
    }

    /// Records a leaf that always receives a gradient.
    pub fn variable(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, t, Op::MatMul(a, b)))
    }

    fn check_bias(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 1 || av.shape()[1] != bv.shape()[0] {
            return dim_err(format!("{what}: trailing dim of {:?} vs {:?}", av.shape(), bv.shape()));
        }
        Ok(())
    }

    /// Adds the vector `b` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_bias(a, b, "add_bias")?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = bv.numel();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv.data()[i % n])
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, t, Op::AddBias(a, b)))
    }

    /// Multiplies every row of `a` elementwise by the vector `b`.
    pub fn mul_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_bias(a, b, "mul_bias")?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = bv.numel();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * bv.data()[i % n])
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, t, Op::MulBias(a, b)))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return dim_err(format!("elementwise {:?} vs {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| kind.apply(x)).collect();
        let out = Tensor::new(av.shape().to_vec(), data).unwrap();
        let t = self.tracked(a);
        self.push(out, t, Op::Act(a, kind))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let t = self.tracked(a);
        self.push(Tensor::scalar(s), t, Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let t = self.tracked(a);
        Ok(self.push(out, t, Op::Reshape(a)))
    }

    /// Unfolds 3x3 windows of an NHWC batch into rows of a patch matrix of
    /// shape `[batch * out_h * out_w, 9 * channels]`.
    pub fn im2col(&mut self, a: Var, stride: usize, padding: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 4 {
            return dim_err(format!("im2col expects NHWC input, got {:?}", av.shape()));
        }
        let s = av.shape();
        let g = ConvGeometry {
            batch: s[0],
            height: s[1],
            width: s[2],
            channels: s[3],
            stride,
            padding,
        };
        if stride == 0 || g.height + 2 * padding < KERNEL || g.width + 2 * padding < KERNEL {
            return dim_err(format!("3x3 window does not fit {:?} with padding {padding}", s));
        }
        let rows = g.batch * g.out_height() * g.out_width();
        let mut data = vec![0.0; rows * g.patch_len()];
        let src = av.data();
        g.for_each_tap(|dst, from| {
            if let Some(i) = from {
                data[dst] = src[i];
            }
        });
        let out = Tensor::new(vec![rows, g.patch_len()], data)?;
        let t = self.tracked(a);
        Ok(self.push(out, t, Op::Im2Col(a, g)))
    }

    /// Averages an NHWC batch over its spatial axes, giving `[batch, channels]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 4 {
            return dim_err(format!("global_avg_pool expects NHWC input, got {:?}", av.shape()));
        }
        let s = av.shape().to_vec();
        let (b, hw, c) = (s[0], s[1] * s[2], s[3]);
        let mut data = vec![0.0; b * c];
        for (i, v) in av.data().iter().enumerate() {
            let (bi, ci) = (i / (hw * c), i % c);
            data[bi * c + ci] += v / hw as f64;
        }
        let out = Tensor::new(vec![b, c], data)?;
        let t = self.tracked(a);
        Ok(self.push(out, t, Op::GlobalAvgPool(a)))
    }

    /// Mean softmax cross-entropy against constant one-hot `targets`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let (loss, grad) = softmax_cross_entropy(self.value(logits), targets)?;
        let t = self.tracked(logits);
        Ok(self.push(Tensor::scalar(loss), t, Op::Loss(logits, grad)))
    }

    /// Mean half squared error against constant `targets`.
    pub fn squared_error(&mut self, pred: Var, targets: &Tensor) -> Result<Var> {
        let (loss, grad) = squared_error(self.value(pred), targets)?;
        let t = self.tracked(pred);
        Ok(self.push(Tensor::scalar(loss), t, Op::Loss(pred, grad)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.tracked(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let send = |grads: &mut Vec<Option<Vec<f64>>>, to: Var, contrib: Vec<f64>| {
                if !self.tracked(to) {
                    return;
                }
                match &mut grads[to.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if self.tracked(*a) {
                        let bt = transpose_raw(bv.data(), k, n);
                        send(&mut grads, *a, matmul_raw(&g, &bt, m, n, k));
                    }
                    if self.tracked(*b) {
                        let at = transpose_raw(av.data(), m, k);
                        send(&mut grads, *b, matmul_raw(&at, &g, k, m, n));
                    }
                }
                Op::AddBias(a, b) => {
                    let n = self.value(*b).numel();
                    if self.tracked(*b) {
                        let mut gb = vec![0.0; n];
                        g.iter().enumerate().for_each(|(i, v)| gb[i % n] += v);
                        send(&mut grads, *b, gb);
                    }
                    send(&mut grads, *a, g);
                }
                Op::MulBias(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let n = bv.numel();
                    if self.tracked(*b) {
                        let mut gb = vec![0.0; n];
                        for (i, (gv, x)) in g.iter().zip(av.data()).enumerate() {
                            gb[i % n] += gv * x;
                        }
                        send(&mut grads, *b, gb);
                    }
                    if self.tracked(*a) {
                        let ga = g.iter().enumerate().map(|(i, gv)| gv * bv.data()[i % n]).collect();
                        send(&mut grads, *a, ga);
                    }
                }
                Op::Add(a, b) => {
                    send(&mut grads, *b, g.clone());
                    send(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.tracked(*a) {
                        send(&mut grads, *a, g.iter().zip(bv.data()).map(|(x, y)| x * y).collect());
                    }
                    if self.tracked(*b) {
                        send(&mut grads, *b, g.iter().zip(av.data()).map(|(x, y)| x * y).collect());
                    }
                }
                Op::Act(a, kind) => {
                    let x = self.value(*a).data();
                    let y = node.value.data();
                    let ga = g
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(gv, (&xv, &yv))| gv * kind.derivative(xv, yv))
                        .collect();
                    send(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).numel();
                    send(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Reshape(a) => send(&mut grads, *a, g),
                Op::Im2Col(a, geom) => {
                    let mut ga = vec![0.0; self.value(*a).numel()];
                    geom.for_each_tap(|dst, from| {
                        if let Some(i) = from {
                            ga[i] += g[dst];
                        }
                    });
                    send(&mut grads, *a, ga);
                }
                Op::GlobalAvgPool(a) => {
                    let s = self.value(*a).shape();
                    let (hw, c) = (s[1] * s[2], s[3]);
                    let ga = (0..self.value(*a).numel())
                        .map(|i| g[(i / (hw * c)) * c + i % c] / hw as f64)
                        .collect();
                    send(&mut grads, *a, ga);
                }
                Op::Loss(a, dlogits) => {
                    send(&mut grads, *a, dlogits.data().iter().map(|v| v * g[0]).collect());
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Central-difference gradient check of a scalar function.
///
/// `f` records its computation on the given tape, starting from the leaf it
/// is handed, and returns the scalar output. Returns the largest
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)` over coordinates.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_skipping(f, x, h, |_| false)
}

/// As [`grad_check`], but ignores coordinates whose input value satisfies
/// `skip` (used to stay away from the relu kink).
pub fn grad_check_skipping<F, S>(f: F, x: &Tensor, h: f64, skip: S) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
    S: Fn(f64) -> bool,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(t.clone());
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let xv = tape.variable(x.clone());
    let out = f(&mut tape, xv)?;
    let grads = tape.backward(out)?;
    let zeros = vec![0.0; x.numel()];
    let analytic = grads.get(xv).unwrap_or(&zeros);

    let mut worst: f64 = 0.0;
    for (i, (&xi, &a)) in x.data().iter().zip(analytic).enumerate() {
        if skip(xi) {
            continue;
        }
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        worst = worst.max((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()));
    }
    Ok(worst)
}
