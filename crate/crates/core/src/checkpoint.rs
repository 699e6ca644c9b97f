//! `LFEW1` named-tensor archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LFEW1" | u32 version | u8 stage | u64 seed | u32 len + config JSON
//! u32 tensor count
//! per tensor: u16 len + name | u8 dtype (1 = f64) | u8 ndim | u64 dims… | f64 data…
//! ```
//!
//! A teacher archive holds the full-width encoder under `encoder.conv.{l}.weight`
//! (shape `[C, C_in, K]`, layer 0 has `C_in = 1`), plus `encoder.norm.scale`
//! and `encoder.norm.shift` (shape `[C]`) for the first block's norm and
//! `encoder.conv.{l}.bias` when biases are enabled.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::FbankConfig;
use crate::encoder::{AutoEncoder, ConvFeatureEncoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::pipeline::{Frontend, InputNorm, WwdModel};
use crate::tensor::{Module, Tensor};
use crate::training::FinetuneMode;
use crate::wwd::{DilatedConvConfig, DilatedConvHead};

pub const MAGIC: &[u8; 5] = b"LFEW1";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub const ENCODER_PREFIX: &str = "encoder.";
pub const AUTOENCODER_PREFIX: &str = "ae.";
pub const HEAD_PREFIX: &str = "head.";
const NORM_MEAN: &str = "input_norm.mean";
const NORM_SCALE: &str = "input_norm.scale";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Teacher,
    Distilled,
    Finetuned,
}

impl Stage {
    fn tag(self) -> u8 {
        match self {
            Stage::Teacher => 0,
            Stage::Distilled => 1,
            Stage::Finetuned => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Stage::Teacher),
            1 => Ok(Stage::Distilled),
            2 => Ok(Stage::Finetuned),
            _ => Err(Error::Checkpoint(format!("unknown stage tag {t}"))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Teacher => "teacher",
            Stage::Distilled => "distilled",
            Stage::Finetuned => "finetuned",
        })
    }
}

/// Which front-end a detector checkpoint uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontendKind {
    Fbank,
    LiteFew,
}

/// Architecture recorded in a checkpoint's config snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub encoder: Option<EncoderConfig>,
    /// Bottleneck width of the distillation auto-encoder.
    pub autoencoder_teacher_channels: Option<usize>,
    pub frontend: Option<FrontendKind>,
    pub fbank: Option<FbankConfig>,
    pub head: Option<DilatedConvConfig>,
    pub window_s: Option<f64>,
    pub mode: Option<FinetuneMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub seed: u64,
    /// JSON snapshot stored verbatim.
    pub config_json: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(stage: Stage, seed: u64, spec: &ModelSpec) -> Result<Self> {
        Ok(Self {
            stage,
            seed,
            config_json: serde_json::to_string(spec)?,
            tensors: Vec::new(),
        })
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        serde_json::from_str(&self.config_json)
            .map_err(|e| Error::Checkpoint(format!("config snapshot: {e}")))
    }

    pub fn add_module(&mut self, prefix: &str, m: &dyn Module) {
        for (name, t) in m.named_tensors() {
            let plain = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor");
            self.tensors.push((format!("{prefix}{name}"), plain));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn lookup(&self) -> impl FnMut(&str) -> Option<Tensor> + '_ {
        |name| self.get(name).cloned()
    }

    pub fn expect_stage(&self, stage: Stage) -> Result<()> {
        if self.stage != stage {
            return Err(Error::Checkpoint(format!(
                "expected a {stage} checkpoint, found {}",
                self.stage
            )));
        }
        Ok(())
    }

    /// Encoder stored under [`ENCODER_PREFIX`], shape-checked against
    /// `config`. Comes back frozen.
    pub fn encoder(&self, config: &EncoderConfig) -> Result<ConvFeatureEncoder> {
        let mut e = ConvFeatureEncoder::from_named(config.clone(), ENCODER_PREFIX, self.lookup())?;
        e.freeze();
        Ok(e)
    }

    pub fn teacher(encoder: &ConvFeatureEncoder, seed: u64) -> Result<Self> {
        let spec = ModelSpec {
            encoder: Some(encoder.config().clone()),
            ..ModelSpec::empty()
        };
        let mut c = Self::new(Stage::Teacher, seed, &spec)?;
        c.add_module(ENCODER_PREFIX, encoder);
        Ok(c)
    }

    pub fn distilled(student: &ConvFeatureEncoder, ae: &AutoEncoder, seed: u64) -> Result<Self> {
        let spec = ModelSpec {
            encoder: Some(student.config().clone()),
            autoencoder_teacher_channels: Some(ae.teacher_channels()),
            ..ModelSpec::empty()
        };
        let mut c = Self::new(Stage::Distilled, seed, &spec)?;
        c.add_module(ENCODER_PREFIX, student);
        c.add_module(AUTOENCODER_PREFIX, ae);
        Ok(c)
    }

    pub fn finetuned(model: &WwdModel, mode: Option<FinetuneMode>, seed: u64) -> Result<Self> {
        let (kind, encoder, fbank) = match &model.frontend {
            Frontend::Fbank(f) => (FrontendKind::Fbank, None, Some(f.clone())),
            Frontend::LiteFew(e) => (FrontendKind::LiteFew, Some(e.config().clone()), None),
        };
        let spec = ModelSpec {
            encoder,
            frontend: Some(kind),
            fbank,
            head: Some(model.head.config().clone()),
            window_s: Some(model.window_s),
            mode,
            ..ModelSpec::empty()
        };
        let mut c = Self::new(Stage::Finetuned, seed, &spec)?;
        if let Frontend::LiteFew(e) = &model.frontend {
            c.add_module(ENCODER_PREFIX, e);
        }
        c.add_module(HEAD_PREFIX, &model.head);
        if let Some(n) = &model.input_norm {
            let k = n.mean.len();
            c.tensors.push((NORM_MEAN.into(), Tensor::new(vec![k], n.mean.clone())?));
            c.tensors.push((NORM_SCALE.into(), Tensor::new(vec![k], n.scale.clone())?));
        }
        Ok(c)
    }

    /// Rebuilds a detector from a finetuned checkpoint.
    pub fn model(&self) -> Result<WwdModel> {
        self.expect_stage(Stage::Finetuned)?;
        let spec = self.spec()?;
        let missing = |f: &str| Error::Checkpoint(format!("config snapshot lacks {f}"));
        let frontend = match spec.frontend.ok_or_else(|| missing("frontend"))? {
            FrontendKind::Fbank => Frontend::Fbank(spec.fbank.ok_or_else(|| missing("fbank"))?),
            FrontendKind::LiteFew => Frontend::LiteFew(self.encoder(spec.encoder.as_ref().ok_or_else(|| missing("encoder"))?)?),
        };
        let head = DilatedConvHead::from_named(spec.head.ok_or_else(|| missing("head"))?, HEAD_PREFIX, self.lookup())?;
        let model = WwdModel::new(frontend, head, spec.window_s.ok_or_else(|| missing("window_s"))?)?;
        match (self.get(NORM_MEAN), self.get(NORM_SCALE)) {
            (Some(m), Some(s)) => model.with_input_norm(InputNorm {
                mean: m.data().to_vec(),
                scale: s.data().to_vec(),
            }),
            (None, None) => Ok(model),
            _ => Err(Error::Checkpoint("input normalisation needs both mean and scale".into())),
        }
    }

    /// Student encoder of a distilled checkpoint, frozen.
    pub fn distilled_encoder(&self) -> Result<ConvFeatureEncoder> {
        self.expect_stage(Stage::Distilled)?;
        let spec = self.spec()?;
        let cfg = spec
            .encoder
            .ok_or_else(|| Error::Checkpoint("config snapshot lacks encoder".into()))?;
        self.encoder(&cfg)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.push(self.stage.tag());
        b.extend_from_slice(&self.seed.to_le_bytes());
        let cfg = self.config_json.as_bytes();
        b.extend_from_slice(&u32::try_from(cfg.len()).map_err(|_| Error::Checkpoint("config too large".into()))?.to_le_bytes());
        b.extend_from_slice(cfg);
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let n = name.as_bytes();
            let len = u16::try_from(n.len()).map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
            b.extend_from_slice(&len.to_le_bytes());
            b.extend_from_slice(n);
            b.push(DTYPE_F64);
            b.push(t.shape().len() as u8);
            for &d in t.shape() {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(b)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5)? != MAGIC {
            return Err(Error::Checkpoint("not an LFEW1 archive (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let stage = Stage::from_tag(r.u8()?)?;
        let seed = r.u64()?;
        let cfg_len = r.u32()? as usize;
        let config_json = String::from_utf8(r.take(cfg_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("config snapshot is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let dtype = r.u8()?;
            if dtype != DTYPE_F64 {
                return Err(Error::Checkpoint(format!("tensor {name}: unsupported dtype {dtype}")));
            }
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name}: truncated data")))?;
            let data = r
                .take(numel * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            stage,
            seed,
            config_json,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl ModelSpec {
    pub fn empty() -> Self {
        Self {
            encoder: None,
            autoencoder_teacher_channels: None,
            frontend: None,
            fbank: None,
            head: None,
            window_s: None,
            mode: None,
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint(format!(
                "truncated archive: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
