//! Run configuration: one strict JSON document covering every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::CorpusParams;
use crate::dsp::FbankConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::pipeline::DEFAULT_WINDOW_S;
use crate::training::{DistillConfig, FinetuneConfig};
use crate::wwd::DilatedConvConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus_dir: PathBuf,
    /// Full-width teacher archive; a pseudo-teacher is drawn when absent.
    pub teacher_checkpoint: Option<PathBuf>,
    pub distilled_checkpoint: Option<PathBuf>,
    /// Fine-tuned Fbank detector supplying hidden outputs for ResK/Both.
    pub teacher_pipeline_checkpoint: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus_dir: PathBuf::from("corpus"),
            teacher_checkpoint: None,
            distilled_checkpoint: None,
            teacher_pipeline_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    /// Detector head; `input_channels` is replaced by the front-end width.
    pub head: DilatedConvConfig,
    pub fbank: FbankConfig,
    pub distill: DistillConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
    pub corpus: CorpusParams,
    /// Decision window in seconds.
    pub window_s: f64,
    /// Width multipliers listed by the `params` command.
    pub param_alphas: Vec<f64>,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            encoder: EncoderConfig::default(),
            head: DilatedConvConfig::default(),
            fbank: FbankConfig::default(),
            distill: DistillConfig::default(),
            finetune: FinetuneConfig::default(),
            eval: EvalConfig::default(),
            corpus: CorpusParams::default(),
            window_s: DEFAULT_WINDOW_S,
            param_alphas: vec![1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0],
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Sets the global seed and every stage seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.distill.seed = seed;
        self.finetune.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.fbank.validate()?;
        self.distill.validate()?;
        self.finetune.validate()?;
        self.eval.validate()?;
        self.corpus.validate()?;
        self.head_for(1).validate()?;
        if !(self.window_s > 0.0) {
            return Err(Error::Config(format!("window_s must be > 0, got {}", self.window_s)));
        }
        if self.param_alphas.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::Config("param_alphas must be positive".into()));
        }
        Ok(())
    }

    /// Head geometry for a front-end emitting `channels` channels.
    pub fn head_for(&self, channels: usize) -> DilatedConvConfig {
        DilatedConvConfig {
            input_channels: channels,
            ..self.head.clone()
        }
    }
}
