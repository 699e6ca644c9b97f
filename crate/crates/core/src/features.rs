use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `channels × frames` matrix of per-frame features, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    channels: usize,
    frames: usize,
    values: Vec<f64>,
    frame_rate_hz: f64,
}

impl FeatureMap {
    pub fn new(channels: usize, frames: usize, values: Vec<f64>, frame_rate_hz: f64) -> Result<Self> {
        if channels == 0 || frames == 0 {
            return Err(Error::invalid(format!(
                "feature map needs C, T >= 1, got {channels}x{frames}"
            )));
        }
        if values.len() != channels * frames {
            return Err(Error::ShapeMismatch {
                op: "FeatureMap::new",
                expected: vec![channels, frames],
                got: vec![values.len()],
            });
        }
        Ok(Self {
            channels,
            frames,
            values,
            frame_rate_hz,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.channels, self.frames]
    }

    pub fn get(&self, channel: usize, frame: usize) -> f64 {
        self.values[channel * self.frames + frame]
    }

    pub fn row(&self, channel: usize) -> &[f64] {
        &self.values[channel * self.frames..(channel + 1) * self.frames]
    }

    /// Frames `end + 1 − len ..= end`, zero-filled where that range starts
    /// before frame 0.
    pub fn window_ending_at(&self, end: usize, len: usize) -> FeatureMap {
        assert!(end < self.frames && len > 0);
        let mut values = vec![0.0; self.channels * len];
        let first = end as isize + 1 - len as isize;
        for c in 0..self.channels {
            let row = self.row(c);
            for j in 0..len {
                let src = first + j as isize;
                if src >= 0 {
                    values[c * len + j] = row[src as usize];
                }
            }
        }
        FeatureMap {
            channels: self.channels,
            frames: len,
            values,
            frame_rate_hz: self.frame_rate_hz,
        }
    }
}
