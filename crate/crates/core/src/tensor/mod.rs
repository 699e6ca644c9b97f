//! Minimal reverse-mode autodiff over dense f64 tensors.
//!
//! A [`Tape`] records every primitive executed during a forward pass.
//! Parameters enter the tape by reference ([`Tape::leaf`]), so a frozen
//! teacher can be shared read-only while each training sample gets its own
//! tape. [`Tape::backward`] replays the record in reverse and returns the
//! gradients of every leaf that requires them; callers fold those into
//! [`Tensor::grad`] with [`Gradients::accumulate_into`].

pub(crate) mod kernels;
mod tape;

pub use tape::{conv_out_len, Gradients, Tape, Var, POSTERIOR_CLAMP};

use crate::error::{Error, Result};

/// Dense row-major tensor with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                expected: shape,
                got: vec![data.len()],
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Trainable tensor.
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Ok(Self::new(shape, data)?.with_requires_grad(true))
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.set_requires_grad(requires_grad);
        self
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
        if !requires_grad {
            self.grad = None;
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer. Ignored when the tensor does not
    /// require gradients.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        if !self.requires_grad {
            return;
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self.grad.iter().flatten().all(|v| v.is_finite())
    }
}

/// Anything that owns trainable tensors in a stable order.
pub trait Module {
    /// Tensors with their checkpoint names, in binding order.
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;

    /// Same order as [`Module::named_tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn set_trainable(&mut self, trainable: bool) {
        for t in self.tensors_mut() {
            t.set_requires_grad(trainable);
        }
    }

    fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    /// Records every tensor on `tape` in [`Module::named_tensors`] order.
    fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<Var> {
        self.tensors().into_iter().map(|t| tape.leaf(t)).collect()
    }

    /// Folds tape gradients for `vars` (as returned by [`Module::bind`])
    /// into the tensors' gradient buffers.
    fn accumulate_grads(&mut self, vars: &[Var], grads: &Gradients) {
        for (v, t) in vars.iter().zip(self.tensors_mut()) {
            grads.accumulate_into(*v, t);
        }
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}
