//! End-to-end stages driven by a [`RunConfig`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::LabeledClip;
use crate::dsp::AudioClip;
use crate::encoder::{AutoEncoder, ConvFeatureEncoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::init::derive_seed;
use crate::pipeline::{Frontend, InputNorm, WwdModel};
use crate::training::{run_distillation, run_finetune, DistillReport, FinetuneConfig, FinetuneMode, FinetuneReport};
use crate::wwd::DilatedConvHead;

/// Seed streams so each stage draws independent numbers from one run seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    Teacher = 1,
    Student = 2,
    AutoEncoder = 3,
    ScratchEncoder = 4,
    Head = 5,
    TeacherHead = 6,
}

fn rng(seed: u64, s: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, s as u64))
}

/// Randomly initialised, frozen full-width encoder standing in for a
/// pretrained teacher.
pub fn pseudo_teacher(cfg: &RunConfig, seed: u64) -> Result<ConvFeatureEncoder> {
    let tcfg = EncoderConfig {
        alpha: 1.0,
        ..cfg.encoder.clone()
    };
    let mut t = ConvFeatureEncoder::new(tcfg, &mut rng(seed, Stream::Teacher))?;
    t.freeze();
    Ok(t)
}

/// Distils a fresh student of width `cfg.encoder` from `teacher`.
pub fn distill(cfg: &RunConfig, teacher: &ConvFeatureEncoder, clips: &[AudioClip]) -> Result<(ConvFeatureEncoder, AutoEncoder, DistillReport)> {
    let seed = cfg.distill.seed;
    let mut student = ConvFeatureEncoder::new(cfg.encoder.clone(), &mut rng(seed, Stream::Student))?;
    let mut ae = AutoEncoder::new(teacher.channels(), student.channels(), &mut rng(seed, Stream::AutoEncoder))?;
    let report = run_distillation(teacher, &mut student, &mut ae, clips, &cfg.distill)?;
    student.freeze();
    Ok((student, ae, report))
}

fn head(cfg: &RunConfig, channels: usize, seed: u64, stream: Stream) -> Result<DilatedConvHead> {
    DilatedConvHead::new(cfg.head_for(channels), &mut rng(seed, stream))
}

/// Fbank detector, with input normalisation fitted on `clips`, trained
/// from scratch; serves as the response
/// teacher for ResK and Both.
pub fn train_teacher_pipeline(cfg: &RunConfig, clips: &[&LabeledClip]) -> Result<(WwdModel, FinetuneReport)> {
    let seed = cfg.finetune.seed;
    let frontend = Frontend::Fbank(cfg.fbank.clone());
    let h = head(cfg, frontend.channels(), seed, Stream::TeacherHead)?;
    let streams = clips
        .iter()
        .filter(|c| c.is_usable())
        .map(|c| frontend.features(&c.clip))
        .collect::<Result<Vec<_>>>()?;
    let norm = InputNorm::fit(&streams)?;
    let mut model = WwdModel::new(frontend, h, cfg.window_s)?.with_input_norm(norm)?;
    let ft = FinetuneConfig {
        mode: FinetuneMode::Scratch,
        ..cfg.finetune.clone()
    };
    let report = run_finetune(&mut model, clips, &ft, None)?;
    Ok((model, report))
}

/// Builds the detector for `mode` and fine-tunes it. FeaK and Both need
/// the distilled encoder; ResK and Both need the teacher pipeline.
pub fn finetune(
    cfg: &RunConfig,
    mode: FinetuneMode,
    distilled: Option<&ConvFeatureEncoder>,
    teacher_pipeline: Option<&WwdModel>,
    clips: &[&LabeledClip],
) -> Result<(WwdModel, FinetuneReport)> {
    let seed = cfg.finetune.seed;
    let encoder = if mode.needs_distilled_encoder() {
        distilled
            .cloned()
            .ok_or_else(|| Error::Config(format!("mode {mode} needs a distilled encoder")))?
    } else {
        ConvFeatureEncoder::new(cfg.encoder.clone(), &mut rng(seed, Stream::ScratchEncoder))?
    };
    if mode.uses_teacher() && teacher_pipeline.is_none() {
        return Err(Error::Config(format!("mode {mode} needs a teacher pipeline")));
    }
    let h = head(cfg, encoder.channels(), seed, Stream::Head)?;
    let mut model = WwdModel::new(Frontend::LiteFew(encoder), h, cfg.window_s)?;
    let ft = FinetuneConfig {
        mode,
        ..cfg.finetune.clone()
    };
    let report = run_finetune(&mut model, clips, &ft, teacher_pipeline)?;
    Ok((model, report))
}
