//! Optimiser, schedules, losses and the two training stages.

mod adam;
mod distill;
mod finetune;
mod losses;

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use distill::{run_distillation, DistillReport};
pub use finetune::{plan_windows, run_finetune, FinetuneReport, WindowSpec};
pub use losses::{distill_loss, distill_loss_tape, pairs_to_rows, resk_loss, resk_loss_tape, DistillTerms};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    /// Length of the fixed crops taken from each clip.
    pub crop_s: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            epochs: 5,
            batch_size: 32,
            lr0: 1e-3,
            lr_decay: 0.95,
            crop_s: 1.0,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        losses::check_lambda(self.lambda)?;
        check_loop(self.epochs, self.batch_size, self.lr0)?;
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if !(self.crop_s > 0.0) {
            return Err(Error::Config(format!("crop_s must be > 0, got {}", self.crop_s)));
        }
        Ok(())
    }
}

fn check_loop(epochs: usize, batch_size: usize, lr0: f64) -> Result<()> {
    if epochs == 0 || batch_size == 0 {
        return Err(Error::Config("epochs and batch_size must be >= 1".into()));
    }
    if !(lr0 > 0.0 && lr0.is_finite()) {
        return Err(Error::Config(format!("lr0 must be a positive number, got {lr0}")));
    }
    Ok(())
}

/// Which knowledge the fine-tuning stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FinetuneMode {
    /// Random encoder trained jointly with the head.
    Scratch,
    /// Random trainable encoder plus a teacher pipeline's hidden outputs.
    ResK,
    /// Distilled frozen encoder.
    FeaK,
    /// Distilled frozen encoder plus the teacher pipeline's hidden outputs.
    Both,
}

impl FinetuneMode {
    pub const ALL: [FinetuneMode; 4] = [Self::Scratch, Self::ResK, Self::FeaK, Self::Both];

    pub fn uses_teacher(self) -> bool {
        matches!(self, Self::ResK | Self::Both)
    }

    pub fn encoder_trainable(self) -> bool {
        matches!(self, Self::Scratch | Self::ResK)
    }

    pub fn needs_distilled_encoder(self) -> bool {
        !self.encoder_trainable()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Scratch => "Scratch",
            Self::ResK => "ResK",
            Self::FeaK => "FeaK",
            Self::Both => "Both",
        }
    }
}

impl fmt::Display for FinetuneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FinetuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown fine-tuning mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub mode: FinetuneMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub sgdr_t0: usize,
    pub sgdr_tmult: usize,
    pub gamma: f64,
    pub resk_weight: f64,
    /// Training windows drawn from each clip.
    pub windows_per_clip: usize,
    /// Frames labelled positive around the end-point, counted at 10 ms.
    pub label_frames: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            mode: FinetuneMode::FeaK,
            epochs: 50,
            batch_size: 32,
            lr0: 1e-3,
            sgdr_t0: 2,
            sgdr_tmult: 2,
            gamma: crate::wwd::FOCAL_GAMMA,
            resk_weight: 1.0,
            windows_per_clip: 1,
            label_frames: crate::data::LABEL_FRAMES,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        check_loop(self.epochs, self.batch_size, self.lr0)?;
        if self.sgdr_t0 == 0 || self.sgdr_tmult == 0 {
            return Err(Error::Config("sgdr_t0 and sgdr_tmult must be >= 1".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.resk_weight >= 0.0) {
            return Err(Error::Config(format!("resk_weight must be >= 0, got {}", self.resk_weight)));
        }
        if self.label_frames % 2 == 0 {
            return Err(Error::Config(format!("label_frames must be odd, got {}", self.label_frames)));
        }
        if self.windows_per_clip == 0 {
            return Err(Error::Config("windows_per_clip must be >= 1".into()));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        sgdr_lr(epoch, self.lr0, self.sgdr_t0, self.sgdr_tmult)
    }
}

/// `lr0·decay^epoch`.
pub fn exp_decay_lr(epoch: usize, lr0: f64, decay: f64) -> f64 {
    lr0 * decay.powi(epoch as i32)
}

/// Cosine annealing with warm restarts, evaluated per epoch with a zero
/// floor. Cycle `i` lasts `t0·tmult^i` epochs.
pub fn sgdr_lr(epoch: usize, lr0: f64, t0: usize, tmult: usize) -> f64 {
    let (t0, tmult) = (t0.max(1), tmult.max(1));
    let mut start = 0;
    let mut len = t0;
    while epoch >= start + len {
        start += len;
        len *= tmult;
    }
    let t_cur = (epoch - start) as f64;
    0.5 * lr0 * (1.0 + (PI * t_cur / len as f64).cos())
}

/// Per-epoch means of every loss term. Terms a stage does not use are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub lr: f64,
    pub l_recon: f64,
    pub l_distill: f64,
    pub l_wwd: f64,
    pub l_resk: f64,
}

pub const TRACE_HEADER: &str = "epoch,lr,l_recon,l_distill,l_wwd,l_resk";

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e}\n",
            r.epoch, r.lr, r.l_recon, r.l_distill, r.l_wwd, r.l_resk
        ));
    }
    s
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(trace_csv(rows).as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_decay_examples() {
        assert_eq!(exp_decay_lr(0, 1e-3, 0.95), 1e-3);
        assert!((exp_decay_lr(3, 1e-3, 0.95) - 8.57375e-4).abs() < 1e-15);
    }

    #[test]
    fn sgdr_examples() {
        assert_eq!(sgdr_lr(0, 1e-3, 2, 2), 1e-3);
        assert!((sgdr_lr(1, 1e-3, 2, 2) - 5e-4).abs() < 1e-12);
        for restart in [2, 6, 14, 30, 62] {
            assert_eq!(sgdr_lr(restart, 1e-3, 2, 2), 1e-3, "epoch {restart}");
        }
        assert!((sgdr_lr(4, 1e-3, 2, 2) - 5e-4).abs() < 1e-12);
    }

    #[test]
    fn sgdr_stays_in_range() {
        for e in 0..200 {
            let lr = sgdr_lr(e, 1e-3, 2, 2);
            assert!(lr > 0.0 && lr <= 1e-3, "epoch {e}: {lr}");
        }
        // Constant cycle length when tmult = 1.
        assert_eq!(sgdr_lr(3, 1.0, 3, 1), 1.0);
    }

    #[test]
    fn mode_parsing_and_roles() {
        for m in FinetuneMode::ALL {
            assert_eq!(m.as_str().parse::<FinetuneMode>().unwrap(), m);
        }
        assert_eq!("feak".parse::<FinetuneMode>().unwrap(), FinetuneMode::FeaK);
        assert!("Distill".parse::<FinetuneMode>().is_err());
        assert!(FinetuneMode::Both.uses_teacher() && !FinetuneMode::Both.encoder_trainable());
        assert!(FinetuneMode::Scratch.encoder_trainable() && !FinetuneMode::Scratch.uses_teacher());
    }

    #[test]
    fn config_validation() {
        assert!(DistillConfig::default().validate().is_ok());
        assert!(FinetuneConfig::default().validate().is_ok());
        let c = DistillConfig {
            lambda: 2.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = FinetuneConfig {
            resk_weight: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = FinetuneConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = [TraceRow {
            epoch: 0,
            lr: 1e-3,
            l_recon: 0.5,
            l_distill: 0.25,
            l_wwd: 0.0,
            l_resk: 0.0,
        }];
        let s = trace_csv(&rows);
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some(TRACE_HEADER));
        assert_eq!(lines.next().unwrap().split(',').count(), 6);
    }
}
