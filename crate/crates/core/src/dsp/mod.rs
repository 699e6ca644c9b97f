//! Audio container, log-Mel filterbank frontend, energy VAD and WAV I/O.

mod fbank;
mod vad;
pub mod wav;

pub use fbank::{fbank, hz_to_mel, mel_to_hz, FbankConfig, FbankExtractor};
pub use vad::{vad_endpoint, vad_segments, VadConfig};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono 16 kHz audio with samples in `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("audio clip must hold at least one sample"));
        }
        if let Some(i) = samples
            .iter()
            .position(|s| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::invalid(format!(
                "sample {i} is {} (must be finite and within [-1, 1])",
                samples[i]
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// `len` samples ending just before sample index `end`, zero-filled on
    /// the left when the range starts before the clip.
    pub fn segment_ending_at(&self, end: usize, len: usize) -> AudioClip {
        let mut out = vec![0.0; len];
        let first = end as isize - len as isize;
        for (j, o) in out.iter_mut().enumerate() {
            let src = first + j as isize;
            if src >= 0 && (src as usize) < self.samples.len() {
                *o = self.samples[src as usize];
            }
        }
        AudioClip { samples: out }
    }
}

/// Round-trips a sample through 16-bit PCM.
pub fn quantize_pcm16(x: f64) -> f64 {
    wav::pcm16_from_f64(x) as f64 / 32768.0
}
