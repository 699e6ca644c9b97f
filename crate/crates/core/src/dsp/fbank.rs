use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::features::FeatureMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbankConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub fft_size: usize,
    pub preemphasis: f64,
    pub log_floor: f64,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            hop_ms: 10.0,
            n_mels: 40,
            fft_size: 512,
            preemphasis: 0.97,
            log_floor: 1e-10,
            low_hz: 20.0,
            high_hz: 7600.0,
        }
    }
}

impl FbankConfig {
    pub fn window_len(&self) -> usize {
        (self.window_ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
    }

    pub fn frame_rate_hz(&self) -> f64 {
        SAMPLE_RATE as f64 / self.hop_len() as f64
    }

    /// Frames produced for a clip of `n` samples, `None` below one window.
    pub fn num_frames(&self, n: usize) -> Option<usize> {
        let w = self.window_len();
        (n >= w).then(|| 1 + (n - w) / self.hop_len())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_ms > self.hop_ms && self.hop_ms > 0.0) {
            return Err(Error::Config(format!(
                "fbank needs window_ms > hop_ms > 0, got {} / {}",
                self.window_ms, self.hop_ms
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("fbank n_mels must be >= 1".into()));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < self.window_len() {
            return Err(Error::Config(format!(
                "fft_size {} must be a power of two >= the {}-sample window",
                self.fft_size,
                self.window_len()
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        if !(0.0 <= self.low_hz && self.low_hz < self.high_hz && self.high_hz <= SAMPLE_RATE as f64 / 2.0)
        {
            return Err(Error::Config(format!(
                "mel band [{}, {}] Hz is not inside [0, Nyquist]",
                self.low_hz, self.high_hz
            )));
        }
        Ok(())
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Reusable filterbank: window, triangular mel weights and an FFT plan.
pub struct FbankExtractor {
    cfg: FbankConfig,
    window: Vec<f64>,
    /// `n_mels` rows of `(first_bin, weights)`.
    filters: Vec<(usize, Vec<f64>)>,
    fft: Arc<dyn Fft<f64>>,
}

impl FbankExtractor {
    pub fn new(cfg: &FbankConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.window_len();
        let window = (0..n)
            .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
            .collect();

        let n_bins = cfg.fft_size / 2 + 1;
        let bin_hz = SAMPLE_RATE as f64 / cfg.fft_size as f64;
        let (lo, hi) = (hz_to_mel(cfg.low_hz), hz_to_mel(cfg.high_hz));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        // Triangles are linear in Hz between adjacent mel-spaced edges.
        let filters = (0..cfg.n_mels)
            .map(|m| {
                let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
                let weights: Vec<f64> = (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f > left && f <= center {
                            (f - left) / (center - left)
                        } else if f > center && f < right {
                            (right - f) / (right - center)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let first = weights.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                (first, weights[first..=last.max(first)].to_vec())
            })
            .collect();

        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            cfg: cfg.clone(),
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &FbankConfig {
        &self.cfg
    }

    /// `n_mels × T` log-Mel energies, `T = 1 + ⌊(len − window)/hop⌋`.
    pub fn compute(&self, clip: &AudioClip) -> Result<FeatureMap> {
        let cfg = &self.cfg;
        let x = clip.samples();
        let frames = cfg.num_frames(x.len()).ok_or(Error::TooShort {
            op: "fbank",
            required: cfg.window_len(),
            got: x.len(),
        })?;

        let mut emph = Vec::with_capacity(x.len());
        emph.push(x[0]);
        emph.extend(x.windows(2).map(|w| w[1] - cfg.preemphasis * w[0]));

        let (win, hop) = (cfg.window_len(), cfg.hop_len());
        let mut out = vec![0.0; cfg.n_mels * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        let mut power = vec![0.0; cfg.fft_size / 2 + 1];
        for t in 0..frames {
            let seg = &emph[t * hop..t * hop + win];
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < win {
                    Complex::new(seg[i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            for (m, (first, weights)) in self.filters.iter().enumerate() {
                let e: f64 = weights
                    .iter()
                    .zip(&power[*first..])
                    .map(|(w, p)| w * p)
                    .sum();
                out[m * frames + t] = e.max(cfg.log_floor).ln();
            }
        }
        FeatureMap::new(cfg.n_mels, frames, out, cfg.frame_rate_hz())
    }
}

/// One-shot convenience over [`FbankExtractor`].
pub fn fbank(clip: &AudioClip, cfg: &FbankConfig) -> Result<FeatureMap> {
    FbankExtractor::new(cfg)?.compute(clip)
}
