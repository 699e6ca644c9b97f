//! Streaming detection and FRR at a false-alarm-per-hour budget.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabeledClip;
use crate::error::{Error, Result};
use crate::pipeline::WwdModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Firing threshold on the smoothed posterior.
    pub detect_threshold: f64,
    pub smooth_frames: usize,
    pub refractory_s: f64,
    /// Half-width of the window around the end-point in which an event
    /// counts as a hit.
    pub hit_window_s: f64,
    pub target_fa_per_hour: f64,
    pub det_budgets: Vec<f64>,
    /// Score every `hop_frames`-th frame only; 1 scores every frame.
    pub hop_frames: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            detect_threshold: 0.5,
            smooth_frames: 5,
            refractory_s: 1.0,
            hit_window_s: 0.75,
            target_fa_per_hour: 0.2,
            det_budgets: vec![0.2, 0.5, 1.0, 2.0, 5.0, 10.0],
            hop_frames: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.detect_threshold > 0.0 && self.detect_threshold < 1.0) {
            return Err(Error::Config(format!(
                "detect_threshold must be in (0, 1), got {}",
                self.detect_threshold
            )));
        }
        if self.smooth_frames == 0 || self.hop_frames == 0 {
            return Err(Error::Config("smooth_frames and hop_frames must be >= 1".into()));
        }
        if !(self.refractory_s >= 0.0) || !(self.hit_window_s >= 0.0) {
            return Err(Error::Config("refractory_s and hit_window_s must be >= 0".into()));
        }
        if !(self.target_fa_per_hour > 0.0) {
            return Err(Error::Config(format!(
                "target_fa_per_hour must be > 0, got {}",
                self.target_fa_per_hour
            )));
        }
        check_budgets(&self.det_budgets)
    }
}

fn check_budgets(budgets: &[f64]) -> Result<()> {
    if budgets.is_empty() || budgets.iter().any(|&b| !(b > 0.0)) || budgets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!(
            "DET budgets must be strictly increasing positive numbers, got {budgets:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub time_s: f64,
    pub score: f64,
}

/// Trailing moving average over up to `n` frames.
pub fn smooth(p: &[f64], n: usize) -> Vec<f64> {
    let n = n.max(1);
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(p.len());
    for (t, &v) in p.iter().enumerate() {
        acc += v;
        if t >= n {
            acc -= p[t - n];
        }
        out.push(acc / (t + 1).min(n) as f64);
    }
    out
}

/// Events fire where the smoothed posterior rises through `threshold`.
/// Each event suppresses further firing for `refractory_s`; its score is
/// the peak smoothed posterior over that span.
pub fn detect(posteriors: &[f64], frame_rate_hz: f64, threshold: f64, smooth_frames: usize, refractory_s: f64) -> Vec<DetectionEvent> {
    let s = smooth(posteriors, smooth_frames);
    let lock = (refractory_s * frame_rate_hz).round() as usize;
    let mut events = Vec::new();
    let mut t = 0;
    while t < s.len() {
        let prev_below = t == 0 || s[t - 1] < threshold;
        if s[t] >= threshold && prev_below {
            let until = (t + lock.max(1)).min(s.len());
            let score = s[t..until].iter().copied().fold(f64::MIN, f64::max);
            events.push(DetectionEvent {
                time_s: t as f64 / frame_rate_hz,
                score,
            });
            t = until;
            continue;
        }
        t += 1;
    }
    events
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frr: f64,
    pub target_fa_per_hour: f64,
    pub achieved_fa_per_hour: f64,
    pub threshold: f64,
    /// `(fa_per_hour budget, frr)` pairs.
    pub det_points: Vec<(f64, f64)>,
    pub negative_hours: f64,
    pub n_positives: usize,
}

/// Relative FRR improvement of `b` over the baseline `a`. `None` when the
/// baseline FRR is zero.
pub fn relative_improvement(frr_a: f64, frr_b: f64) -> Option<f64> {
    (frr_a > 0.0).then(|| (frr_a - frr_b) / frr_a)
}

/// Threshold that lies above every score.
fn above_all(positive_scores: &[f64], negative_scores: &[f64]) -> f64 {
    let max = positive_scores
        .iter()
        .chain(negative_scores)
        .copied()
        .fold(1.0, f64::max);
    max.next_up()
}

/// Largest count `k` with `k / hours <= budget`, exact in floating point.
fn allowed_false_alarms(budget: f64, hours: f64) -> usize {
    let mut k = (budget * hours).floor().max(0.0) as usize;
    while k > 0 && k as f64 / hours > budget {
        k -= 1;
    }
    while (k + 1) as f64 / hours <= budget {
        k += 1;
    }
    k
}

struct Operating {
    frr: f64,
    fa_per_hour: f64,
    threshold: f64,
}

fn operating_point(pos: &[f64], neg: &[f64], hours: f64, budget: f64) -> Operating {
    // Negative scores sorted descending: the FA count at θ is the length of
    // the prefix with score ≥ θ.
    let mut neg_sorted = neg.to_vec();
    neg_sorted.sort_by(|a, b| b.total_cmp(a));
    let allowed = allowed_false_alarms(budget, hours);
    let threshold = if allowed >= neg_sorted.len() {
        // Every event may fire: the smallest candidate wins.
        pos.iter()
            .chain(&neg_sorted)
            .copied()
            .filter(|&s| s > 0.0)
            .fold(f64::INFINITY, f64::min)
            .min(above_all(pos, neg))
    } else {
        // θ must exceed the (allowed+1)-th highest negative score.
        let bar = neg_sorted[allowed];
        pos.iter()
            .chain(&neg_sorted)
            .copied()
            .filter(|&s| s > bar)
            .fold(above_all(pos, neg), f64::min)
    };
    let fa = neg.iter().filter(|&&s| s >= threshold).count();
    let missed = pos.iter().filter(|&&s| s < threshold).count();
    Operating {
        frr: missed as f64 / pos.len() as f64,
        fa_per_hour: fa as f64 / hours,
        threshold,
    }
}

fn check_inputs(pos: &[f64], hours: f64) -> Result<()> {
    if pos.is_empty() {
        return Err(Error::invalid("FRR needs at least one positive clip"));
    }
    if !(hours > 0.0) {
        return Err(Error::invalid(format!("negative_hours must be > 0, got {hours}")));
    }
    Ok(())
}

/// FRR at the smallest threshold whose false alarms per hour stay within
/// `target_fa_per_hour`. Positive scores of 0 mean "no event".
pub fn frr_at_fa(positive_scores: &[f64], negative_scores: &[f64], negative_hours: f64, target_fa_per_hour: f64) -> Result<EvalReport> {
    check_inputs(positive_scores, negative_hours)?;
    let op = operating_point(positive_scores, negative_scores, negative_hours, target_fa_per_hour);
    Ok(EvalReport {
        frr: op.frr,
        target_fa_per_hour,
        achieved_fa_per_hour: op.fa_per_hour,
        threshold: op.threshold,
        det_points: vec![(target_fa_per_hour, op.frr)],
        negative_hours,
        n_positives: positive_scores.len(),
    })
}

/// FRR at each budget.
pub fn det_sweep(positive_scores: &[f64], negative_scores: &[f64], negative_hours: f64, budgets: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_inputs(positive_scores, negative_hours)?;
    check_budgets(budgets)?;
    Ok(budgets
        .iter()
        .map(|&b| (b, operating_point(positive_scores, negative_scores, negative_hours, b).frr))
        .collect())
}

/// Per-clip scores gathered from streaming a model over a labelled set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoredSet {
    /// Best hit score per positive clip, 0 when nothing fired in the hit
    /// window.
    pub positive_scores: Vec<f64>,
    /// Every event on negative clips.
    pub negative_scores: Vec<f64>,
    pub negative_hours: f64,
}

impl ScoredSet {
    /// Adds one clip's posterior trace.
    pub fn push(&mut self, clip: &LabeledClip, posteriors: &[f64], frame_rate_hz: f64, cfg: &EvalConfig) {
        let events = detect(
            posteriors,
            frame_rate_hz,
            cfg.detect_threshold,
            cfg.smooth_frames,
            cfg.refractory_s,
        );
        if clip.is_positive {
            let Some(end) = clip.endpoint_s() else {
                return;
            };
            let best = events
                .iter()
                .filter(|e| (e.time_s - end).abs() <= cfg.hit_window_s)
                .map(|e| e.score)
                .fold(0.0, f64::max);
            self.positive_scores.push(best);
        } else {
            self.negative_scores.extend(events.iter().map(|e| e.score));
            self.negative_hours += clip.clip.duration_s() / 3600.0;
        }
    }

    pub fn report(&self, cfg: &EvalConfig) -> Result<EvalReport> {
        let mut r = frr_at_fa(
            &self.positive_scores,
            &self.negative_scores,
            self.negative_hours,
            cfg.target_fa_per_hour,
        )?;
        r.det_points = det_sweep(
            &self.positive_scores,
            &self.negative_scores,
            self.negative_hours,
            &cfg.det_budgets,
        )?;
        Ok(r)
    }
}

/// Streams every clip through `model` and scores the result.
pub fn score_clips(model: &WwdModel, clips: &[&LabeledClip], cfg: &EvalConfig) -> Result<ScoredSet> {
    cfg.validate()?;
    let mut set = ScoredSet::default();
    for c in clips {
        if !c.is_usable() {
            continue;
        }
        let p = model.stream_posteriors_every(&c.clip, cfg.hop_frames)?;
        set.push(c, &p, model.frame_rate_hz() / cfg.hop_frames as f64, cfg);
    }
    Ok(set)
}

pub fn evaluate(model: &WwdModel, clips: &[&LabeledClip], cfg: &EvalConfig) -> Result<EvalReport> {
    score_clips(model, clips, cfg)?.report(cfg)
}

pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<()> {
    let s = serde_json::to_string_pretty(report)?;
    std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

pub fn det_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("fa_per_hour,frr\n");
    for (fa, frr) in points {
        s.push_str(&format!("{fa},{frr}\n"));
    }
    s
}

pub fn write_det_csv(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    std::fs::write(path, det_csv(points)).map_err(|e| Error::io(path, e))
}
