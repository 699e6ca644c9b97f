//! Causal dilated-conv wake-word detector head and the focal loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::init;
use crate::tensor::{Module, Tape, Tensor, Var, POSTERIOR_CLAMP};

/// Default focal exponent.
pub const FOCAL_GAMMA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DilatedConvConfig {
    pub n_blocks: usize,
    pub residual_channels: usize,
    pub kernel: usize,
    pub dilation_cycle: Vec<usize>,
    pub input_channels: usize,
}

impl Default for DilatedConvConfig {
    fn default() -> Self {
        Self {
            n_blocks: 24,
            residual_channels: 16,
            kernel: 3,
            dilation_cycle: vec![1, 2, 4, 8],
            input_channels: 40,
        }
    }
}

impl DilatedConvConfig {
    pub fn with_blocks(n_blocks: usize, input_channels: usize) -> Self {
        Self {
            n_blocks,
            input_channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.residual_channels == 0 || self.input_channels == 0 {
            return Err(Error::Config(
                "head needs n_blocks, residual_channels and input_channels >= 1".into(),
            ));
        }
        if self.kernel == 0 || self.dilation_cycle.is_empty() || self.dilation_cycle.contains(&0) {
            return Err(Error::Config(
                "head kernel and dilations must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn dilation(&self, block: usize) -> usize {
        self.dilation_cycle[block % self.dilation_cycle.len()]
    }

    /// Frames of history that influence one output frame (including itself).
    pub fn receptive_field(&self) -> usize {
        1 + (0..self.n_blocks)
            .map(|b| self.dilation(b) * (self.kernel - 1))
            .sum::<usize>()
    }
}

/// Closed-form parameter count of a [`DilatedConvHead`].
pub fn head_param_count(cfg: &DilatedConvConfig) -> usize {
    let r = cfg.residual_channels;
    let input = cfg.input_channels * r + r;
    let block = r * r * cfg.kernel + r + r * r + r;
    let output = 2 * r + 2;
    input + cfg.n_blocks * block + output
}

/// Per-frame detector output.
#[derive(Debug, Clone, PartialEq)]
pub struct WwdOutput {
    /// Wake-word posterior per frame, in (0, 1).
    pub posteriors: Vec<f64>,
    /// Two-logit last-layer output per frame.
    pub hidden: Vec<[f64; 2]>,
}

/// `1×1 in → n × (causal dilated conv → GELU → 1×1 → +residual) → 1×1 to 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DilatedConvHead {
    config: DilatedConvConfig,
    tensors: Vec<Tensor>,
}

impl DilatedConvHead {
    pub fn new<R: Rng + ?Sized>(config: DilatedConvConfig, rng: &mut R) -> Result<Self> {
        // Residual branch outputs start scaled by 1/sqrt(n_blocks) so the
        // un-normalised stack keeps O(1) activations at any depth.
        let branch_gain = 1.0 / (config.n_blocks.max(1) as f64).sqrt();
        Self::build(config, |fan_in, n, branch_out| {
            let mut w = init::kaiming_uniform(rng, fan_in, n);
            if branch_out {
                w.iter_mut().for_each(|v| *v *= branch_gain);
            }
            w
        })
    }

    /// Head with every weight and bias zero.
    pub fn zeros(config: DilatedConvConfig) -> Result<Self> {
        Self::build(config, |_, n, _| vec![0.0; n])
    }

    fn build(config: DilatedConvConfig, mut fill: impl FnMut(usize, usize, bool) -> Vec<f64>) -> Result<Self> {
        config.validate()?;
        let r = config.residual_channels;
        let (i, k) = (config.input_channels, config.kernel);
        let mut tensors = vec![
            Tensor::param(vec![r, i, 1], fill(i, r * i, false))?,
            Tensor::param(vec![r], vec![0.0; r])?,
        ];
        for _ in 0..config.n_blocks {
            tensors.push(Tensor::param(vec![r, r, k], fill(r * k, r * r * k, false))?);
            tensors.push(Tensor::param(vec![r], vec![0.0; r])?);
            tensors.push(Tensor::param(vec![r, r, 1], fill(r, r * r, true))?);
            tensors.push(Tensor::param(vec![r], vec![0.0; r])?);
        }
        tensors.push(Tensor::param(vec![2, r, 1], fill(r, 2 * r, false))?);
        tensors.push(Tensor::param(vec![2], vec![0.0; 2])?);
        Ok(Self { config, tensors })
    }

    /// Rebuilds a head from named tensors, validating every shape.
    pub fn from_named(config: DilatedConvConfig, prefix: &str, mut get: impl FnMut(&str) -> Option<Tensor>) -> Result<Self> {
        let mut head = Self::zeros(config)?;
        let names: Vec<String> = head
            .named_tensors()
            .into_iter()
            .map(|(n, _)| format!("{prefix}{n}"))
            .collect();
        for (name, slot) in names.iter().zip(head.tensors.iter_mut()) {
            let t = get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        Ok(head)
    }

    pub fn config(&self) -> &DilatedConvConfig {
        &self.config
    }

    /// Hidden logits `2×T` for `features: input_channels×T`.
    pub fn forward<'a>(&self, tape: &mut Tape<'a>, vars: &[Var], features: Var) -> Result<Var> {
        let c = tape.shape(features)[0];
        if c != self.config.input_channels {
            return Err(Error::ShapeMismatch {
                op: "head forward",
                expected: vec![self.config.input_channels],
                got: vec![c],
            });
        }
        let x = tape.conv1d(features, vars[0], 1, 1, false)?;
        let mut x = tape.add_bias(x, vars[1])?;
        for b in 0..self.config.n_blocks {
            let v = &vars[2 + 4 * b..6 + 4 * b];
            let y = tape.conv1d(x, v[0], 1, self.config.dilation(b), true)?;
            let y = tape.add_bias(y, v[1])?;
            let y = tape.gelu(y);
            let y = tape.conv1d(y, v[2], 1, 1, false)?;
            let y = tape.add_bias(y, v[3])?;
            x = tape.add(x, y)?;
        }
        let n = vars.len();
        let h = tape.conv1d(x, vars[n - 2], 1, 1, false)?;
        tape.add_bias(h, vars[n - 1])
    }

    pub fn infer(&self, features: &FeatureMap) -> Result<WwdOutput> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.constant(features.shape(), features.values().to_vec())?;
        let h = self.forward(&mut tape, &vars, x)?;
        let p = tape.posterior(h)?;
        Ok(WwdOutput {
            posteriors: tape.value(p).to_vec(),
            hidden: hidden_pairs(tape.value(h)),
        })
    }
}

/// Splits a `2×T` buffer into per-frame pairs.
pub fn hidden_pairs(h: &[f64]) -> Vec<[f64; 2]> {
    let t = h.len() / 2;
    (0..t).map(|i| [h[i], h[t + i]]).collect()
}

impl Module for DilatedConvHead {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let n = self.tensors.len();
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let name = match i {
                    0 => "in.weight".to_string(),
                    1 => "in.bias".to_string(),
                    i if i == n - 2 => "out.weight".to_string(),
                    i if i == n - 1 => "out.bias".to_string(),
                    i => {
                        let (b, slot) = ((i - 2) / 4, (i - 2) % 4);
                        let part = ["dil.weight", "dil.bias", "mix.weight", "mix.bias"][slot];
                        format!("block.{b}.{part}")
                    }
                };
                (name, t)
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors.iter_mut().collect()
    }
}

/// `−(1−p_t)^γ·log p_t` with `p_t = p` for `y = 1` and `1 − p` otherwise.
pub fn focal_loss(p: f64, y: bool, gamma: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "posterior {p} outside (0, 1); clamp to [{POSTERIOR_CLAMP}, {}] first",
            1.0 - POSTERIOR_CLAMP
        )));
    }
    if !(gamma >= 0.0) {
        return Err(Error::invalid("focal gamma must be nonnegative"));
    }
    let pt = if y { p } else { 1.0 - p };
    Ok(-(1.0 - pt).powf(gamma) * pt.ln())
}

/// Frame-averaged focal loss.
pub fn focal_loss_mean(p: &[f64], y: &[bool], gamma: f64) -> Result<f64> {
    if p.len() != y.len() || p.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "focal_loss_mean",
            expected: vec![p.len()],
            got: vec![y.len()],
        });
    }
    let mut total = 0.0;
    for (&pi, &yi) in p.iter().zip(y) {
        total += focal_loss(pi, yi, gamma)?;
    }
    Ok(total / p.len() as f64)
}
