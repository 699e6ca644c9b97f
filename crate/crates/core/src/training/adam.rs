use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for a fixed, ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    /// One update of every tensor in `params` that requires gradients. A
    /// trainable tensor with no gradient buffer is treated as having a zero
    /// gradient; frozen tensors are never touched.
    pub fn step(&mut self, params: Vec<&mut Tensor>, lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if params.len() != self.m.len() || params.iter().zip(&self.m).any(|(p, m)| p.numel() != m.len()) {
            return Err(Error::invalid("optimizer parameter list changed between steps"));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            if !p.requires_grad() {
                continue;
            }
            let g = p.grad().map(<[f64]>::to_vec);
            let data = p.data_mut();
            for i in 0..data.len() {
                let gi = g.as_ref().map_or(0.0, |g| g[i]);
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::param(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        p.accumulate_grad(&[0.5, -2.0, 0.0]);
        let mut adam = AdamState::new();
        adam.step(vec![&mut p], 0.1).unwrap();
        let d = p.data();
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] - 2.1).abs() < 1e-6);
        assert_eq!(d[2], 3.0);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::param(vec![2], vec![0.25, -4.0]).unwrap();
        let mut adam = AdamState::new();
        for _ in 0..5 {
            p.accumulate_grad(&[0.0, 0.0]);
            adam.step(vec![&mut p], 1e-3).unwrap();
            p.zero_grad();
            adam.step(vec![&mut p], 1e-3).unwrap();
        }
        assert_eq!(p.data(), &[0.25, -4.0]);
    }

    #[test]
    fn frozen_tensors_untouched() {
        let mut frozen = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let mut p = Tensor::param(vec![1], vec![0.0]).unwrap();
        p.accumulate_grad(&[1.0]);
        let mut adam = AdamState::new();
        adam.step(vec![&mut frozen, &mut p], 0.5).unwrap();
        assert_eq!(frozen.data(), &[1.0, 1.0]);
        assert!(p.data()[0] < 0.0);
    }

    #[test]
    fn changed_parameter_list_rejected() {
        let mut a = Tensor::param(vec![2], vec![0.0; 2]).unwrap();
        let mut b = Tensor::param(vec![3], vec![0.0; 3]).unwrap();
        let mut adam = AdamState::new();
        adam.step(vec![&mut a], 0.1).unwrap();
        assert!(adam.step(vec![&mut b], 0.1).is_err());
    }
}
