use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::losses::resk_loss_tape;
use super::{AdamState, FinetuneConfig, FinetuneMode, TraceRow};
use crate::data::{label_frames_at, LabeledClip};
use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::pipeline::{Frontend, WwdModel};
use crate::tensor::{Module, Tape, Var};

/// One training window: the clip it comes from and the stream frame it
/// ends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub clip: usize,
    pub end: usize,
}

/// Outcome of the fine-tuning stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    pub trace: Vec<TraceRow>,
    pub windows: usize,
}

/// Training windows for every usable clip. Positive windows end between the
/// end-point and a quarter window past the label span so the labelled
/// region always sits near the causal edge; negative windows end anywhere.
pub fn plan_windows(model: &WwdModel, clips: &[&LabeledClip], cfg: &FinetuneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<WindowSpec>> {
    let rate = model.frame_rate_hz();
    let w = model.window_frames();
    let half = label_frames_at(cfg.label_frames, rate) / 2;
    let per_clip = cfg.windows_per_clip;
    let mut out = Vec::new();
    for (i, c) in clips.iter().enumerate() {
        if !c.is_usable() {
            continue;
        }
        let total = model.frontend.frames_for(c.clip.len()).ok_or(Error::TooShort {
            op: "plan_windows",
            required: model.frontend.frame_end_sample(0),
            got: c.clip.len(),
        })?;
        for _ in 0..per_clip {
            let end = match c.endpoint_frame(rate) {
                Some(e) => {
                    let lo = e.min(total - 1);
                    let hi = (e + half + w / 4).min(total - 1);
                    rng.random_range(lo..=hi)
                }
                None => rng.random_range(0..total),
            };
            out.push(WindowSpec { clip: i, end });
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("no usable training clips"));
    }
    Ok(out)
}

/// Materialised input of one window.
enum Input {
    Features(FeatureMap),
    Audio(AudioClip),
}

struct Prepared {
    input: Input,
    targets: Vec<bool>,
    teacher_hidden: Option<Vec<f64>>,
}

fn check_mode(model: &WwdModel, mode: FinetuneMode, teacher: Option<&WwdModel>) -> Result<()> {
    if mode.uses_teacher() && teacher.is_none() {
        return Err(Error::Config(format!("mode {mode} needs a teacher pipeline")));
    }
    if mode.needs_distilled_encoder() && !matches!(model.frontend, Frontend::LiteFew(_)) {
        return Err(Error::Config(format!("mode {mode} needs a distilled encoder front-end")));
    }
    Ok(())
}

/// Teacher hidden logits aligned to the student window ending at `end`.
/// Student frame `t` maps to the teacher frame that ends on the same
/// sample.
fn teacher_targets(model: &WwdModel, teacher: &WwdModel, clip: &AudioClip, stream: Option<&FeatureMap>, end: usize) -> Result<Vec<f64>> {
    let w = model.window_frames();
    let tw = teacher.window_frames();
    let t_frame = |t: isize| -> isize {
        let end_sample = model.frontend.frame_end_sample(0) as isize + t * stride(&model.frontend) as isize;
        (end_sample - teacher.frontend.frame_end_sample(0) as isize).div_euclid(stride(&teacher.frontend) as isize)
    };
    let t_end = t_frame(end as isize).max(0);
    let feats = teacher.window_features(clip, stream, t_end as usize)?;
    let out = teacher.head.infer(&feats)?;
    let first = t_end - tw as isize + 1;
    let mut rows = vec![0.0; 2 * w];
    for i in 0..w {
        let s = end as isize - (w - 1 - i) as isize;
        let j = t_frame(s) - first;
        if j < 0 || j >= tw as isize {
            return Err(Error::Config(format!(
                "teacher window of {tw} frames cannot cover a {w}-frame student window"
            )));
        }
        let h = out.hidden[j as usize];
        rows[i] = h[0];
        rows[w + i] = h[1];
    }
    Ok(rows)
}

fn stride(f: &Frontend) -> usize {
    f.frame_end_sample(1) - f.frame_end_sample(0)
}

fn prepare(
    model: &WwdModel,
    clips: &[&LabeledClip],
    plan: &[WindowSpec],
    teacher: Option<&WwdModel>,
    encoder_trainable: bool,
    label_n: usize,
) -> Result<Vec<Prepared>> {
    let w = model.window_frames();
    let rate = model.frame_rate_hz();
    let mut out = Vec::with_capacity(plan.len());
    let mut cached: Option<(usize, Option<FeatureMap>, Option<FeatureMap>, Vec<bool>)> = None;
    for spec in plan {
        let lc = clips[spec.clip];
        if cached.as_ref().map(|c| c.0) != Some(spec.clip) {
            let total = model.frontend.frames_for(lc.clip.len()).expect("planned clip");
            cached = Some((
                spec.clip,
                model.stream_features(&lc.clip)?,
                match teacher {
                    Some(t) => t.stream_features(&lc.clip)?,
                    None => None,
                },
                lc.targets(rate, total, label_n)?,
            ));
        }
        let (_, stream, t_stream, targets) = cached.as_ref().expect("cached clip");
        let padded = (w - 1).saturating_sub(spec.end);
        let mut y = vec![false; padded];
        y.extend_from_slice(&targets[spec.end + 1 + padded - w..=spec.end]);
        let input = match &model.frontend {
            Frontend::LiteFew(_) if encoder_trainable => Input::Audio(
                lc.clip
                    .segment_ending_at(model.frontend.frame_end_sample(spec.end), model.window_samples()),
            ),
            _ => Input::Features(model.window_features(&lc.clip, stream.as_ref(), spec.end)?),
        };
        let teacher_hidden = match teacher {
            Some(t) => Some(teacher_targets(model, t, &lc.clip, t_stream.as_ref(), spec.end)?),
            None => None,
        };
        out.push(Prepared {
            input,
            targets: y,
            teacher_hidden,
        });
    }
    Ok(out)
}

/// Trains the detector head (and, in Scratch/ResK, the encoder) on windows
/// cut from `clips`.
pub fn run_finetune(model: &mut WwdModel, clips: &[&LabeledClip], cfg: &FinetuneConfig, teacher: Option<&WwdModel>) -> Result<FinetuneReport> {
    cfg.validate()?;
    check_mode(model, cfg.mode, teacher)?;
    let use_resk = cfg.mode.uses_teacher() && cfg.resk_weight > 0.0;
    let encoder_trainable = cfg.mode.encoder_trainable();
    if let Frontend::LiteFew(enc) = &mut model.frontend {
        if encoder_trainable {
            enc.unfreeze();
        } else {
            enc.freeze();
        }
    }
    model.head.set_trainable(true);
    model.head.zero_grad();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plan = plan_windows(model, clips, cfg, &mut rng)?;
    let data = prepare(model, clips, &plan, teacher.filter(|_| use_resk), encoder_trainable, cfg.label_frames)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut adam_head = AdamState::new();
    let mut adam_enc = AdamState::new();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        order.shuffle(&mut rng);
        let (mut sum_wwd, mut sum_resk) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let (l_wwd, l_resk) = window_step(model, &data[i], cfg, use_resk, inv)?;
                sum_wwd += l_wwd;
                sum_resk += l_resk;
            }
            adam_head.step(model.head.tensors_mut(), lr)?;
            model.head.zero_grad();
            if let (Frontend::LiteFew(enc), true) = (&mut model.frontend, encoder_trainable) {
                adam_enc.step(enc.tensors_mut(), lr)?;
                enc.zero_grad();
            }
        }
        let n = data.len() as f64;
        trace.push(TraceRow {
            epoch,
            lr,
            l_recon: 0.0,
            l_distill: 0.0,
            l_wwd: sum_wwd / n,
            l_resk: sum_resk / n,
        });
    }
    Ok(FinetuneReport {
        trace,
        windows: data.len(),
    })
}

fn window_step(model: &mut WwdModel, item: &Prepared, cfg: &FinetuneConfig, use_resk: bool, weight: f64) -> Result<(f64, f64)> {
    let w = model.window_frames();
    let (grads, head_vars, enc_vars, l_wwd, l_resk) = {
        let mut tape = Tape::new();
        let head_vars = model.head.bind(&mut tape);
        let (features, enc_vars): (Var, Vec<Var>) = match (&item.input, &model.frontend) {
            (Input::Features(f), _) => (tape.constant(f.shape(), f.values().to_vec())?, Vec::new()),
            (Input::Audio(a), Frontend::LiteFew(enc)) => {
                let vars = enc.bind(&mut tape);
                let x = tape.constant(vec![1, a.len()], a.samples().to_vec())?;
                (enc.forward(&mut tape, &vars, x)?, vars)
            }
            (Input::Audio(_), Frontend::Fbank(_)) => unreachable!("fbank windows are precomputed"),
        };
        let h = model.head.forward(&mut tape, &head_vars, features)?;
        let p = tape.posterior(h)?;
        let wwd = tape.focal(p, &item.targets, cfg.gamma)?;
        let mut loss = wwd;
        let mut l_resk = 0.0;
        if use_resk {
            let rows = item.teacher_hidden.as_ref().expect("teacher targets prepared");
            let ht = tape.constant(vec![2, w], rows.clone())?;
            let resk = resk_loss_tape(&mut tape, ht, h)?;
            l_resk = tape.scalar(resk);
            let scaled = tape.scale(resk, cfg.resk_weight);
            loss = tape.add(wwd, scaled)?;
        }
        let loss = tape.scale(loss, weight);
        let grads = tape.backward(loss)?;
        (grads, head_vars, enc_vars, tape.scalar(wwd), l_resk)
    };
    model.head.accumulate_grads(&head_vars, &grads);
    if let (Frontend::LiteFew(enc), false) = (&mut model.frontend, enc_vars.is_empty()) {
        enc.accumulate_grads(&enc_vars, &grads);
    }
    Ok((l_wwd, l_resk))
}
