use std::borrow::Cow;

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
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
    Conv1d {
        input: Var,
        weight: Var,
        geom: ConvGeom,
    },
    AddBias {
        input: Var,
        bias: Var,
    },
    Matmul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Gelu {
        input: Var,
    },
    InstanceNorm {
        input: Var,
        scale: Var,
        shift: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Sum {
        input: Var,
    },
    Mse {
        a: Var,
        b: Var,
    },
    Posterior {
        logits: Var,
    },
    Focal {
        p: Var,
        positive: Vec<bool>,
        gamma: f64,
    },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, [f64]>,
    shape: Vec<usize>,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Posterior clamp applied before the focal log.
pub const POSTERIOR_CLAMP: f64 = 1e-7;

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, [f64]>, shape: Vec<usize>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a borrowed tensor; it takes part in backward iff the tensor
    /// requires gradients.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        self.push(
            Cow::Borrowed(t.data()),
            t.shape().to_vec(),
            t.requires_grad(),
            Op::Leaf,
        )
    }

    /// Records an owned leaf.
    pub fn input(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                op: "Tape::input",
                expected: shape,
                got: vec![data.len()],
            });
        }
        Ok(self.push(Cow::Owned(data), shape, requires_grad, Op::Leaf))
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        self.input(shape, data, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            &[r, c] => Ok((r, c)),
            s => Err(Error::ShapeMismatch {
                op,
                expected: vec![0, 0],
                got: s.to_vec(),
            }),
        }
    }

    /// 1-D convolution of `input: C_in×T` with `weight: C_out×C_in×K`.
    ///
    /// Valid convolution unless `causal`, which left-pads `dilation·(K−1)`
    /// zeros so output frame `t` sees only input frames `≤ t`; causal mode
    /// requires stride 1.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        stride: usize,
        dilation: usize,
        causal: bool,
    ) -> Result<Var> {
        let (c_in, t_in) = self.matrix_dims(input, "conv1d")?;
        let (c_out, wc_in, kernel) = match self.shape(weight) {
            &[o, i, k] => (o, i, k),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "conv1d weight",
                    expected: vec![0, c_in, 0],
                    got: s.to_vec(),
                })
            }
        };
        if wc_in != c_in {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                expected: vec![c_out, c_in, kernel],
                got: self.shape(weight).to_vec(),
            });
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::invalid("conv1d stride and dilation must be positive"));
        }
        if causal && stride != 1 {
            return Err(Error::invalid("causal conv1d requires stride 1"));
        }
        let left_pad = if causal { dilation * (kernel - 1) } else { 0 };
        let t_out = conv_out_len(t_in + left_pad, kernel, stride, dilation).ok_or(
            Error::TooShort {
                op: "conv1d",
                required: dilation * (kernel - 1) + 1,
                got: t_in + left_pad,
            },
        )?;
        let geom = ConvGeom {
            c_in,
            c_out,
            kernel,
            stride,
            dilation,
            left_pad,
            t_in,
            t_out,
        };
        let out = kernels::conv1d_forward(self.value(input), self.value(weight), &geom);
        let rg = self.rg(input) || self.rg(weight);
        Ok(self.push(
            Cow::Owned(out),
            vec![c_out, t_out],
            rg,
            Op::Conv1d {
                input,
                weight,
                geom,
            },
        ))
    }

    /// Adds `bias[c]` to every frame of row `c`.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (c, t) = self.matrix_dims(input, "add_bias")?;
        if self.shape(bias) != [c] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                expected: vec![c],
                got: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias);
        let out: Vec<f64> = self
            .value(input)
            .chunks(t)
            .zip(b)
            .flat_map(|(row, &bc)| row.iter().map(move |v| v + bc))
            .collect();
        let rg = self.rg(input) || self.rg(bias);
        Ok(self.push(Cow::Owned(out), vec![c, t], rg, Op::AddBias { input, bias }))
    }

    /// `a: m×k` times `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (kb, n) = self.matrix_dims(b, "matmul")?;
        if k != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                expected: vec![k, n],
                got: vec![kb, n],
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(out), vec![m, n], rg, Op::Matmul { a, b, m, k, n }))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, input: Var) -> Var {
        let out: Vec<f64> = self
            .value(input)
            .iter()
            .map(|&x| x * kernels::std_normal_cdf(x))
            .collect();
        let shape = self.shape(input).to_vec();
        let rg = self.rg(input);
        self.push(Cow::Owned(out), shape, rg, Op::Gelu { input })
    }

    /// Per-row normalization over time followed by a per-row affine map.
    ///
    /// Uses the biased variance. A row whose variance plus `eps` is zero
    /// normalizes to zeros.
    pub fn instance_norm(&mut self, input: Var, scale: Var, shift: Var, eps: f64) -> Result<Var> {
        let (c, t) = self.matrix_dims(input, "instance_norm")?;
        if t < 2 {
            return Err(Error::TooShort {
                op: "instance_norm",
                required: 2,
                got: t,
            });
        }
        for v in [scale, shift] {
            if self.shape(v) != [c] {
                return Err(Error::ShapeMismatch {
                    op: "instance_norm",
                    expected: vec![c],
                    got: self.shape(v).to_vec(),
                });
            }
        }
        let x = self.value(input);
        let (gamma, beta) = (self.value(scale), self.value(shift));
        let mut normalized = vec![0.0; c * t];
        let mut inv_std = vec![0.0; c];
        let mut out = vec![0.0; c * t];
        for ch in 0..c {
            let row = &x[ch * t..(ch + 1) * t];
            let mean = row.iter().sum::<f64>() / t as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
            let denom = (var + eps).sqrt();
            let is = if denom > 0.0 { 1.0 / denom } else { 0.0 };
            inv_std[ch] = is;
            for i in 0..t {
                let n = (row[i] - mean) * is;
                normalized[ch * t + i] = n;
                out[ch * t + i] = gamma[ch] * n + beta[ch];
            }
        }
        let rg = self.rg(input) || self.rg(scale) || self.rg(shift);
        Ok(self.push(
            Cow::Owned(out),
            vec![c, t],
            rg,
            Op::InstanceNorm {
                input,
                scale,
                shift,
                normalized,
                inv_std,
            },
        ))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                expected: self.shape(a).to_vec(),
                got: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(out), shape, rg, Op::Add { a, b }))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out: Vec<f64> = self.value(input).iter().map(|x| x * factor).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.rg(input);
        self.push(Cow::Owned(out), shape, rg, Op::Scale { input, factor })
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).iter().sum::<f64>();
        let rg = self.rg(input);
        self.push(Cow::Owned(vec![s]), vec![1], rg, Op::Sum { input })
    }

    /// Element-mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let n = self.value(a).len() as f64;
        let s = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(vec![s]), vec![1], rg, Op::Mse { a, b }))
    }

    /// Two-class softmax over `logits: 2×T`; returns the class-1 probability
    /// per frame.
    pub fn posterior(&mut self, logits: Var) -> Result<Var> {
        let (c, t) = self.matrix_dims(logits, "posterior")?;
        if c != 2 {
            return Err(Error::ShapeMismatch {
                op: "posterior",
                expected: vec![2, t],
                got: vec![c, t],
            });
        }
        let h = self.value(logits);
        let out: Vec<f64> = (0..t).map(|i| sigmoid(h[t + i] - h[i])).collect();
        let rg = self.rg(logits);
        Ok(self.push(Cow::Owned(out), vec![t], rg, Op::Posterior { logits }))
    }

    /// Frame-averaged focal loss `−(1−p_t)^γ·log p_t`.
    ///
    /// `p_t` is clamped to `[1e−7, 1−1e−7]`; clamped frames pass no gradient.
    pub fn focal(&mut self, p: Var, targets: &[bool], gamma: f64) -> Result<Var> {
        let t = self.value(p).len();
        if targets.len() != t {
            return Err(Error::ShapeMismatch {
                op: "focal",
                expected: vec![t],
                got: vec![targets.len()],
            });
        }
        if !(gamma >= 0.0) {
            return Err(Error::invalid("focal gamma must be nonnegative"));
        }
        let loss = self
            .value(p)
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let q = clamp_pt(if y { p } else { 1.0 - p });
                -(1.0 - q).powf(gamma) * q.ln()
            })
            .sum::<f64>()
            / t as f64;
        let rg = self.rg(p);
        Ok(self.push(
            Cow::Owned(vec![loss]),
            vec![1],
            rg,
            Op::Focal {
                p,
                positive: targets.to_vec(),
                gamma,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                expected: vec![1],
                got: self.nodes[loss.0].shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dout) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &dout, &mut grads);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'a>, dout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                weight,
                geom,
            } => {
                let (dx, dw) = kernels::conv1d_backward(
                    self.value(*input),
                    self.value(*weight),
                    dout,
                    geom,
                    self.rg(*input),
                    self.rg(*weight),
                );
                if let Some(dx) = dx {
                    accumulate(grads, *input, dx);
                }
                if let Some(dw) = dw {
                    accumulate(grads, *weight, dw);
                }
            }
            Op::AddBias { input, bias } => {
                if self.rg(*bias) {
                    let t = node.shape[1];
                    let db: Vec<f64> = dout.chunks(t).map(|r| r.iter().sum()).collect();
                    accumulate(grads, *bias, db);
                }
                if self.rg(*input) {
                    accumulate(grads, *input, dout.to_vec());
                }
            }
            Op::Matmul { a, b, m, k, n } => {
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm(*m, *n, *k, dout, false, self.value(*b), true, &mut da, 0.0);
                    accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm(*k, *m, *n, self.value(*a), true, dout, false, &mut db, 0.0);
                    accumulate(grads, *b, db);
                }
            }
            Op::Gelu { input } => {
                let dx: Vec<f64> = self
                    .value(*input)
                    .iter()
                    .zip(dout)
                    .map(|(&x, &g)| g * (kernels::std_normal_cdf(x) + x * kernels::std_normal_pdf(x)))
                    .collect();
                accumulate(grads, *input, dx);
            }
            Op::InstanceNorm {
                input,
                scale,
                shift,
                normalized,
                inv_std,
            } => {
                let (c, t) = (node.shape[0], node.shape[1]);
                let gamma = self.value(*scale);
                if self.rg(*shift) {
                    let ds: Vec<f64> = dout.chunks(t).map(|r| r.iter().sum()).collect();
                    accumulate(grads, *shift, ds);
                }
                if self.rg(*scale) {
                    let dg: Vec<f64> = dout
                        .chunks(t)
                        .zip(normalized.chunks(t))
                        .map(|(d, n)| d.iter().zip(n).map(|(a, b)| a * b).sum())
                        .collect();
                    accumulate(grads, *scale, dg);
                }
                if self.rg(*input) {
                    let mut dx = vec![0.0; c * t];
                    for ch in 0..c {
                        let d = &dout[ch * t..(ch + 1) * t];
                        let n = &normalized[ch * t..(ch + 1) * t];
                        let mean_d = d.iter().sum::<f64>() * gamma[ch] / t as f64;
                        let mean_dn =
                            d.iter().zip(n).map(|(a, b)| a * b).sum::<f64>() * gamma[ch] / t as f64;
                        for i in 0..t {
                            dx[ch * t + i] =
                                inv_std[ch] * (d[i] * gamma[ch] - mean_d - n[i] * mean_dn);
                        }
                    }
                    accumulate(grads, *input, dx);
                }
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    accumulate(grads, *a, dout.to_vec());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, dout.to_vec());
                }
            }
            Op::Scale { input, factor } => {
                accumulate(grads, *input, dout.iter().map(|g| g * factor).collect());
            }
            Op::Sum { input } => {
                let n = self.value(*input).len();
                accumulate(grads, *input, vec![dout[0]; n]);
            }
            Op::Mse { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let c = 2.0 * dout[0] / va.len() as f64;
                let diff: Vec<f64> = va.iter().zip(vb).map(|(x, y)| c * (x - y)).collect();
                if self.rg(*b) {
                    accumulate(grads, *b, diff.iter().map(|d| -d).collect());
                }
                if self.rg(*a) {
                    accumulate(grads, *a, diff);
                }
            }
            Op::Posterior { logits } => {
                let t = node.shape[0];
                let mut dh = vec![0.0; 2 * t];
                for (i, (&p, &g)) in node.value.iter().zip(dout).enumerate() {
                    let d = g * p * (1.0 - p);
                    dh[i] = -d;
                    dh[t + i] = d;
                }
                accumulate(grads, *logits, dh);
            }
            Op::Focal { p, positive, gamma } => {
                let values = self.value(*p);
                let scale = dout[0] / values.len() as f64;
                let dp: Vec<f64> = values
                    .iter()
                    .zip(positive)
                    .map(|(&p, &y)| {
                        let raw = if y { p } else { 1.0 - p };
                        if raw <= POSTERIOR_CLAMP || raw >= 1.0 - POSTERIOR_CLAMP {
                            return 0.0;
                        }
                        let dq = focal_dq(raw, *gamma);
                        scale * if y { dq } else { -dq }
                    })
                    .collect();
                accumulate(grads, *p, dp);
            }
        }
    }
}

/// d/dq of `−(1−q)^γ·ln q`.
fn focal_dq(q: f64, gamma: f64) -> f64 {
    let one_m = 1.0 - q;
    let lead = if gamma == 0.0 {
        0.0
    } else {
        gamma * one_m.powf(gamma - 1.0) * q.ln()
    };
    lead - one_m.powf(gamma) / q
}

fn clamp_pt(q: f64) -> f64 {
    q.clamp(POSTERIOR_CLAMP, 1.0 - POSTERIOR_CLAMP)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

/// Output length of a valid convolution, `None` when the input is shorter
/// than the kernel span.
pub fn conv_out_len(t: usize, kernel: usize, stride: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (kernel.max(1) - 1) + 1;
    (t >= span && stride > 0).then(|| (t - span) / stride + 1)
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` for non-leaves, leaves without `requires_grad`, and leaves
    /// unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Adds the gradient for `v` into `tensor.grad`.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor) {
        if let Some(g) = self.get(v) {
            tensor.accumulate_grad(g);
        }
    }
}
