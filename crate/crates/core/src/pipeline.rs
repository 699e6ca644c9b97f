//! Front-end plus detector head, scored causally over a stream.

use crate::dsp::{AudioClip, FbankConfig, FbankExtractor, SAMPLE_RATE};
use crate::encoder::ConvFeatureEncoder;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::tensor::Module;
use crate::wwd::DilatedConvHead;

/// Seconds of context the head sees for each decision.
pub const DEFAULT_WINDOW_S: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub enum Frontend {
    Fbank(FbankConfig),
    LiteFew(ConvFeatureEncoder),
}

impl Frontend {
    pub fn frame_rate_hz(&self) -> f64 {
        match self {
            Frontend::Fbank(c) => c.frame_rate_hz(),
            Frontend::LiteFew(e) => e.config().frame_rate_hz(),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Frontend::Fbank(c) => c.n_mels,
            Frontend::LiteFew(e) => e.channels(),
        }
    }

    /// Frames in a window of `window_s` seconds.
    pub fn window_frames(&self, window_s: f64) -> usize {
        let n = (window_s * SAMPLE_RATE as f64).round() as usize;
        match self {
            Frontend::Fbank(c) => (window_s * c.frame_rate_hz()).round() as usize,
            Frontend::LiteFew(e) => e.config().output_frames(n).unwrap_or(1),
        }
    }

    /// Frames the front-end emits for a clip of `n` samples.
    pub fn frames_for(&self, n: usize) -> Option<usize> {
        match self {
            Frontend::Fbank(c) => c.num_frames(n),
            Frontend::LiteFew(e) => e.config().output_frames(n),
        }
    }

    /// Sample index just past the end of frame `t`.
    pub fn frame_end_sample(&self, t: usize) -> usize {
        match self {
            Frontend::Fbank(c) => t * c.hop_len() + c.window_len(),
            Frontend::LiteFew(e) => {
                let cfg = e.config();
                t * cfg.total_stride() + cfg.min_samples()
            }
        }
    }

    /// Whole-clip features; only meaningful for front-ends without
    /// window-level statistics.
    pub fn features(&self, clip: &AudioClip) -> Result<FeatureMap> {
        match self {
            Frontend::Fbank(c) => FbankExtractor::new(c)?.compute(clip),
            Frontend::LiteFew(e) => e.encode(clip),
        }
    }
}

/// Fixed per-channel standardisation of stream features, fitted once on
/// training audio. Raw log-mel energies sit far from zero, which a head
/// without normalisation layers cannot absorb.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    /// Mean and inverse standard deviation of every channel over all
    /// frames of `maps`.
    pub fn fit<'m>(maps: impl IntoIterator<Item = &'m FeatureMap>) -> Result<Self> {
        let (mut sum, mut sq, mut n) = (Vec::new(), Vec::new(), 0usize);
        for m in maps {
            if sum.is_empty() {
                sum = vec![0.0; m.channels()];
                sq = vec![0.0; m.channels()];
            } else if m.channels() != sum.len() {
                return Err(Error::ShapeMismatch {
                    op: "InputNorm::fit",
                    expected: vec![sum.len()],
                    got: vec![m.channels()],
                });
            }
            for c in 0..m.channels() {
                for &v in m.row(c) {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += m.frames();
        }
        if n == 0 {
            return Err(Error::invalid("InputNorm::fit needs at least one frame"));
        }
        let n = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| 1.0 / (q / n - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, f: &FeatureMap) -> Result<FeatureMap> {
        if f.channels() != self.mean.len() {
            return Err(Error::ShapeMismatch {
                op: "InputNorm::apply",
                expected: vec![self.mean.len()],
                got: vec![f.channels()],
            });
        }
        let t = f.frames();
        let mut v = f.values().to_vec();
        for (c, row) in v.chunks_mut(t.max(1)).enumerate().take(f.channels()) {
            row.iter_mut().for_each(|x| *x = (*x - self.mean[c]) * self.scale[c]);
        }
        FeatureMap::new(f.channels(), t, v, f.frame_rate_hz())
    }
}

/// Front-end and detector head.
#[derive(Debug, Clone, PartialEq)]
pub struct WwdModel {
    pub frontend: Frontend,
    /// Only used with the Fbank front-end.
    pub input_norm: Option<InputNorm>,
    pub head: DilatedConvHead,
    pub window_s: f64,
}

impl WwdModel {
    pub fn new(frontend: Frontend, head: DilatedConvHead, window_s: f64) -> Result<Self> {
        if frontend.channels() != head.config().input_channels {
            return Err(Error::ShapeMismatch {
                op: "WwdModel",
                expected: vec![frontend.channels()],
                got: vec![head.config().input_channels],
            });
        }
        if !(window_s > 0.0) {
            return Err(Error::Config(format!("window_s must be > 0, got {window_s}")));
        }
        Ok(Self {
            frontend,
            input_norm: None,
            head,
            window_s,
        })
    }

    /// Attaches a fitted input normalisation; Fbank front-end only.
    pub fn with_input_norm(mut self, norm: InputNorm) -> Result<Self> {
        if !matches!(self.frontend, Frontend::Fbank(_)) {
            return Err(Error::Config("input normalisation applies to the Fbank front-end only".into()));
        }
        if norm.mean.len() != self.frontend.channels() || norm.scale.len() != norm.mean.len() {
            return Err(Error::ShapeMismatch {
                op: "with_input_norm",
                expected: vec![self.frontend.channels()],
                got: vec![norm.mean.len(), norm.scale.len()],
            });
        }
        self.input_norm = Some(norm);
        Ok(self)
    }

    /// Whole-clip normalised features for front-ends that can be computed
    /// once per stream (Fbank); `None` for the windowed encoder.
    pub fn stream_features(&self, clip: &AudioClip) -> Result<Option<FeatureMap>> {
        match &self.frontend {
            Frontend::Fbank(_) => {
                let f = self.frontend.features(clip)?;
                Ok(Some(match &self.input_norm {
                    Some(n) => n.apply(&f)?,
                    None => f,
                }))
            }
            Frontend::LiteFew(_) => Ok(None),
        }
    }

    pub fn window_frames(&self) -> usize {
        self.frontend.window_frames(self.window_s)
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frontend.frame_rate_hz()
    }

    /// Audio samples feeding one encoder window.
    pub fn window_samples(&self) -> usize {
        match &self.frontend {
            Frontend::LiteFew(e) => e.config().samples_for_frames(self.window_frames()),
            Frontend::Fbank(_) => (self.window_s * SAMPLE_RATE as f64).round() as usize,
        }
    }

    /// Features of the window whose last frame is stream frame `end`.
    /// `stream` must come from [`WwdModel::stream_features`].
    pub fn window_features(&self, clip: &AudioClip, stream: Option<&FeatureMap>, end: usize) -> Result<FeatureMap> {
        let w = self.window_frames();
        match (&self.frontend, stream) {
            (Frontend::Fbank(_), Some(f)) => Ok(f.window_ending_at(end, w)),
            (Frontend::Fbank(_), None) => Ok(self
                .stream_features(clip)?
                .expect("fbank stream")
                .window_ending_at(end, w)),
            (Frontend::LiteFew(e), _) => {
                let seg = clip.segment_ending_at(self.frontend.frame_end_sample(end), self.window_samples());
                e.encode(&seg)
            }
        }
    }

    /// Posterior of the last frame of each causal window, one per stream
    /// frame.
    pub fn stream_posteriors(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        self.stream_posteriors_every(clip, 1)
    }

    /// Like [`Self::stream_posteriors`] but only for frames `0, hop, 2 hop, ..`,
    /// so the trace runs at `frame_rate_hz() / hop`.
    pub fn stream_posteriors_every(&self, clip: &AudioClip, hop: usize) -> Result<Vec<f64>> {
        if hop == 0 {
            return Err(Error::Config("posterior hop must be >= 1".into()));
        }
        let total = self.frontend.frames_for(clip.len()).ok_or(Error::TooShort {
            op: "stream_posteriors",
            required: self.frontend.frame_end_sample(0),
            got: clip.len(),
        })?;
        let stream = self.stream_features(clip)?;
        (0..total)
            .step_by(hop)
            .map(|t| {
                let f = self.window_features(clip, stream.as_ref(), t)?;
                let out = self.head.infer(&f)?;
                Ok(*out.posteriors.last().expect("non-empty window"))
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        let enc = match &self.frontend {
            Frontend::LiteFew(e) => e.num_params(),
            Frontend::Fbank(_) => 0,
        };
        enc + self.head.num_params()
    }
}
