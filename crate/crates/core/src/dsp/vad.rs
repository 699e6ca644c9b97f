//! Energy VAD used to locate wake-word end-points.
//!
//! Frames are non-overlapping 10 ms blocks. A frame is active when its mean
//! energy exceeds `min(noise_floor · ratio, peak · peak_fraction)`, where the
//! noise floor is a low percentile of the clip's own frame energies. Both
//! terms scale with the clip's energy, so the decision is gain-invariant.
//! Active runs separated by at most `hangover` inactive frames are merged.

use serde::{Deserialize, Serialize};

use super::{AudioClip, SAMPLE_RATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VadConfig {
    pub frame_ms: f64,
    pub noise_percentile: f64,
    pub ratio: f64,
    pub peak_fraction: f64,
    pub hangover: usize,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_ms: 10.0,
            noise_percentile: 0.10,
            ratio: 20.0,
            peak_fraction: 0.5,
            hangover: 5,
        }
    }
}

impl VadConfig {
    fn frame_len(&self) -> usize {
        (self.frame_ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
    }
}

fn frame_energies(clip: &AudioClip, frame_len: usize) -> Vec<f64> {
    clip.samples()
        .chunks_exact(frame_len)
        .map(|f| f.iter().map(|s| s * s).sum::<f64>() / frame_len as f64)
        .collect()
}

/// Merged active segments as inclusive `(first, last)` frame ranges.
pub fn vad_segments(clip: &AudioClip, cfg: &VadConfig) -> Vec<(usize, usize)> {
    let energies = frame_energies(clip, cfg.frame_len());
    if energies.is_empty() {
        return Vec::new();
    }
    let mut sorted = energies.clone();
    sorted.sort_by(f64::total_cmp);
    let idx = ((sorted.len() - 1) as f64 * cfg.noise_percentile).round() as usize;
    let floor = sorted[idx];
    let peak = sorted[sorted.len() - 1];
    let threshold = (floor * cfg.ratio).min(peak * cfg.peak_fraction);

    let mut segments: Vec<(usize, usize)> = Vec::new();
    for (j, &e) in energies.iter().enumerate() {
        if e <= threshold {
            continue;
        }
        match segments.last_mut() {
            Some((_, last)) if j - *last <= cfg.hangover + 1 => *last = j,
            _ => segments.push((j, j)),
        }
    }
    segments
}

/// Last active 10 ms frame, `None` when nothing exceeds the threshold.
pub fn vad_endpoint(clip: &AudioClip) -> Option<usize> {
    vad_segments(clip, &VadConfig::default())
        .last()
        .map(|&(_, end)| end)
}
