//! Raw-waveform conv feature encoders and the auto-encoder compressor.

mod autoencoder;

pub use autoencoder::AutoEncoder;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::init;
use crate::tensor::{conv_out_len, Module, Tape, Tensor, Var};

pub const BASE_CHANNELS: usize = 512;
pub const NORM_EPS: f64 = 1e-5;

/// Geometry of the seven-layer waveform encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub alpha: f64,
    pub base_channels: usize,
    pub strides: Vec<usize>,
    pub kernels: Vec<usize>,
    pub use_bias: bool,
    pub first_block_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0 / 8.0,
            base_channels: BASE_CHANNELS,
            strides: vec![5, 2, 2, 2, 2, 2, 2],
            kernels: vec![10, 3, 3, 3, 3, 2, 2],
            use_bias: false,
            first_block_norm: true,
        }
    }
}

impl EncoderConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    /// Full-width teacher geometry.
    pub fn teacher() -> Self {
        Self::with_alpha(1.0)
    }

    pub fn channels(&self) -> usize {
        (self.alpha * self.base_channels as f64).round() as usize
    }

    pub fn layers(&self) -> usize {
        self.strides.len()
    }

    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn frame_rate_hz(&self) -> f64 {
        SAMPLE_RATE as f64 / self.total_stride() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.strides.len() != 7 || self.kernels.len() != 7 {
            return Err(Error::Config(format!(
                "encoder needs 7 strides and 7 kernels, got {} and {}",
                self.strides.len(),
                self.kernels.len()
            )));
        }
        if self.strides.iter().chain(&self.kernels).any(|&v| v == 0) {
            return Err(Error::Config("encoder strides and kernels must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "width multiplier alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.channels() == 0 {
            return Err(Error::Config(format!(
                "alpha {} leaves no channels",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Frames emitted for `n` input samples, `None` when too short.
    pub fn output_frames(&self, n: usize) -> Option<usize> {
        self.strides
            .iter()
            .zip(&self.kernels)
            .try_fold(n, |len, (&s, &k)| conv_out_len(len, k, s, 1))
    }

    /// Shortest input yielding one output frame (the receptive field).
    pub fn min_samples(&self) -> usize {
        self.samples_for_frames(1)
    }

    /// Shortest input yielding `frames` output frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        self.strides
            .iter()
            .zip(&self.kernels)
            .rev()
            .fold(frames.max(1), |need, (&s, &k)| (need - 1) * s + k)
    }
}

/// Exact parameter count: conv weights, plus per-layer biases and the
/// first-block norm affine when enabled.
pub fn param_count(config: &EncoderConfig) -> usize {
    let c = config.channels();
    let mut c_in = 1;
    let mut total = 0;
    for &k in &config.kernels {
        total += k * c_in * c;
        c_in = c;
    }
    if config.use_bias {
        total += config.layers() * c;
    }
    if config.first_block_norm {
        total += 2 * c;
    }
    total
}

/// Weights of layers `2..=7` only, where `C_in = C_out = C` and the count is
/// exactly `K·C²` per layer.
pub fn inner_layer_count(config: &EncoderConfig) -> usize {
    let c = config.channels();
    config.kernels[1..].iter().map(|k| k * c * c).sum()
}

/// Conv → [instance norm, block 1 only] → GELU, seven times.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFeatureEncoder {
    config: EncoderConfig,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    norm: Option<(Tensor, Tensor)>,
    frozen: bool,
}

impl ConvFeatureEncoder {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        Self::with_init(config, |fan_in, n| init::kaiming_uniform(rng, fan_in, n))
    }

    fn with_init(config: EncoderConfig, mut fill: impl FnMut(usize, usize) -> Vec<f64>) -> Result<Self> {
        config.validate()?;
        let c = config.channels();
        let mut c_in = 1;
        let mut weights = Vec::with_capacity(config.layers());
        let mut biases = Vec::new();
        for &k in &config.kernels {
            let data = fill(c_in * k, c * c_in * k);
            weights.push(Tensor::param(vec![c, c_in, k], data)?);
            if config.use_bias {
                biases.push(Tensor::param(vec![c], vec![0.0; c])?);
            }
            c_in = c;
        }
        let norm = config.first_block_norm.then(|| {
            (
                Tensor::param(vec![c], vec![1.0; c]).expect("c >= 1"),
                Tensor::param(vec![c], vec![0.0; c]).expect("c >= 1"),
            )
        });
        Ok(Self {
            config,
            weights,
            biases,
            norm,
            frozen: false,
        })
    }

    /// Rebuilds an encoder from named tensors, validating every shape.
    pub fn from_named(config: EncoderConfig, prefix: &str, mut get: impl FnMut(&str) -> Option<Tensor>) -> Result<Self> {
        let mut enc = Self::with_init(config, |_, n| vec![0.0; n])?;
        let names: Vec<String> = enc
            .named_tensors()
            .into_iter()
            .map(|(n, _)| format!("{prefix}{n}"))
            .collect();
        for (name, slot) in names.iter().zip(enc.tensors_mut()) {
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
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn channels(&self) -> usize {
        self.config.channels()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Stops all weights from receiving gradients.
    pub fn freeze(&mut self) {
        self.frozen = true;
        self.set_trainable(false);
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
        self.set_trainable(true);
    }

    /// Applies the stack to `samples: 1×N`; `vars` come from [`Module::bind`].
    pub fn forward<'a>(&self, tape: &mut Tape<'a>, vars: &[Var], samples: Var) -> Result<Var> {
        let n = tape.shape(samples)[1];
        if self.config.output_frames(n).is_none() {
            return Err(Error::TooShort {
                op: "encode",
                required: self.config.min_samples(),
                got: n,
            });
        }
        let layers = self.config.layers();
        let bias_at = layers;
        let norm_at = layers + self.biases.len();
        let mut x = samples;
        for l in 0..layers {
            x = tape.conv1d(x, vars[l], self.config.strides[l], 1, false)?;
            if self.config.use_bias {
                x = tape.add_bias(x, vars[bias_at + l])?;
            }
            if l == 0 && self.norm.is_some() {
                x = tape.instance_norm(x, vars[norm_at], vars[norm_at + 1], NORM_EPS)?;
            }
            x = tape.gelu(x);
        }
        Ok(x)
    }

    /// Inference-only encoding of a clip.
    pub fn encode(&self, clip: &AudioClip) -> Result<FeatureMap> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.constant(vec![1, clip.len()], clip.samples().to_vec())?;
        let z = self.forward(&mut tape, &vars, x)?;
        let (c, t) = (tape.shape(z)[0], tape.shape(z)[1]);
        FeatureMap::new(c, t, tape.value(z).to_vec(), self.config.frame_rate_hz())
    }
}

impl Module for ConvFeatureEncoder {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .weights
            .iter()
            .enumerate()
            .map(|(l, w)| (format!("conv.{l}.weight"), w))
            .collect();
        out.extend(
            self.biases
                .iter()
                .enumerate()
                .map(|(l, b)| (format!("conv.{l}.bias"), b)),
        );
        if let Some((s, b)) = &self.norm {
            out.push(("norm.scale".into(), s));
            out.push(("norm.shift".into(), b));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.weights.iter_mut().collect();
        out.extend(self.biases.iter_mut());
        if let Some((s, b)) = &mut self.norm {
            out.push(s);
            out.push(b);
        }
        out
    }
}
