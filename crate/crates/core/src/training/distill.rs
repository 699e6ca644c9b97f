use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::losses::distill_loss_tape;
use super::{exp_decay_lr, AdamState, DistillConfig, TraceRow};
use crate::dsp::{AudioClip, SAMPLE_RATE};
use crate::encoder::{AutoEncoder, ConvFeatureEncoder};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::tensor::{Module, Tape};

/// Outcome of the distillation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillReport {
    pub trace: Vec<TraceRow>,
    /// `(l_recon, l_distill)` averaged over the very first batch, before any
    /// update.
    pub first_batch: (f64, f64),
}

fn check_pair(teacher: &ConvFeatureEncoder, student: &ConvFeatureEncoder, ae: &AutoEncoder) -> Result<()> {
    if !teacher.is_frozen() {
        return Err(Error::invalid("teacher encoder must be frozen before distillation"));
    }
    if student.channels() >= teacher.channels() {
        return Err(Error::Config(format!(
            "student width {} must be narrower than teacher width {}",
            student.channels(),
            teacher.channels()
        )));
    }
    let (t, s) = (teacher.config(), student.config());
    if t.strides != s.strides || t.kernels != s.kernels {
        return Err(Error::Config("student and teacher conv geometry differ".into()));
    }
    if ae.teacher_channels() != teacher.channels() || ae.student_channels() != student.channels() {
        return Err(Error::ShapeMismatch {
            op: "run_distillation",
            expected: vec![teacher.channels(), student.channels()],
            got: vec![ae.teacher_channels(), ae.student_channels()],
        });
    }
    Ok(())
}

/// Fixed crop of every clip, chosen once from the seed.
fn crops(clips: &[AudioClip], crop_s: f64, min_samples: usize, rng: &mut ChaCha8Rng) -> Result<Vec<AudioClip>> {
    let want = (crop_s * SAMPLE_RATE as f64).round() as usize;
    clips
        .iter()
        .map(|c| {
            if c.len() < min_samples {
                return Err(Error::TooShort {
                    op: "run_distillation",
                    required: min_samples,
                    got: c.len(),
                });
            }
            if c.len() <= want {
                return Ok(c.clone());
            }
            let start = rng.random_range(0..=c.len() - want);
            Ok(c.segment_ending_at(start + want, want))
        })
        .collect()
}

/// Jointly trains `student` and `ae` against the frozen `teacher`.
pub fn run_distillation(
    teacher: &ConvFeatureEncoder,
    student: &mut ConvFeatureEncoder,
    ae: &mut AutoEncoder,
    clips: &[AudioClip],
    cfg: &DistillConfig,
) -> Result<DistillReport> {
    cfg.validate()?;
    check_pair(teacher, student, ae)?;
    if clips.is_empty() {
        return Err(Error::invalid("distillation corpus is empty"));
    }
    student.unfreeze();
    ae.set_trainable(true);
    student.zero_grad();
    ae.zero_grad();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inputs = crops(clips, cfg.crop_s, student.config().min_samples(), &mut rng)?;
    let targets: Vec<FeatureMap> = inputs.iter().map(|c| teacher.encode(c)).collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut adam_student = AdamState::new();
    let mut adam_ae = AdamState::new();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut first_batch = None;
    for epoch in 0..cfg.epochs {
        let lr = exp_decay_lr(epoch, cfg.lr0, cfg.lr_decay);
        order.shuffle(&mut rng);
        let (mut sum_r, mut sum_d) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let inv = 1.0 / batch.len() as f64;
            let (mut br, mut bd) = (0.0, 0.0);
            for &i in batch {
                let (r, d) = distill_step(student, ae, &inputs[i], &targets[i], cfg.lambda, inv)?;
                br += r;
                bd += d;
            }
            first_batch.get_or_insert((br * inv, bd * inv));
            sum_r += br;
            sum_d += bd;
            adam_student.step(student.tensors_mut(), lr)?;
            adam_ae.step(ae.tensors_mut(), lr)?;
            student.zero_grad();
            ae.zero_grad();
        }
        let n = inputs.len() as f64;
        trace.push(TraceRow {
            epoch,
            lr,
            l_recon: sum_r / n,
            l_distill: sum_d / n,
            l_wwd: 0.0,
            l_resk: 0.0,
        });
    }
    Ok(DistillReport {
        trace,
        first_batch: first_batch.expect("at least one batch"),
    })
}

/// Forward and backward for one clip; gradients scaled by `weight` are
/// added to the student and auto-encoder buffers.
fn distill_step(
    student: &mut ConvFeatureEncoder,
    ae: &mut AutoEncoder,
    clip: &AudioClip,
    z_t: &FeatureMap,
    lambda: f64,
    weight: f64,
) -> Result<(f64, f64)> {
    let (grads, s_vars, a_vars, r, d) = {
        let mut tape = Tape::new();
        let s_vars = student.bind(&mut tape);
        let a_vars = ae.bind(&mut tape);
        let x = tape.constant(vec![1, clip.len()], clip.samples().to_vec())?;
        let z_s = student.forward(&mut tape, &s_vars, x)?;
        let zt = tape.constant(z_t.shape(), z_t.values().to_vec())?;
        let (z_r, z_hat) = ae.forward(&mut tape, &a_vars, zt)?;
        let terms = distill_loss_tape(&mut tape, zt, z_hat, z_r, z_s, lambda)?;
        let loss = tape.scale(terms.total, weight);
        let grads = tape.backward(loss)?;
        (grads, s_vars, a_vars, tape.scalar(terms.recon), tape.scalar(terms.distill))
    };
    student.accumulate_grads(&s_vars, &grads);
    ae.accumulate_grads(&a_vars, &grads);
    Ok((r, d))
}
