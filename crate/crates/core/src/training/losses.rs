use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::tensor::{Tape, Var};

/// Loss nodes of one distillation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistillTerms {
    pub total: Var,
    pub recon: Var,
    pub distill: Var,
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must be in [0, 1], got {lambda}")));
    }
    Ok(())
}

/// `λ·mse(z_t, z_hat) + (1−λ)·mse(z_r, z_s)` on the tape.
pub fn distill_loss_tape(tape: &mut Tape<'_>, z_t: Var, z_hat: Var, z_r: Var, z_s: Var, lambda: f64) -> Result<DistillTerms> {
    check_lambda(lambda)?;
    let recon = tape.mse(z_t, z_hat)?;
    let distill = tape.mse(z_r, z_s)?;
    let a = tape.scale(recon, lambda);
    let b = tape.scale(distill, 1.0 - lambda);
    let total = tape.add(a, b)?;
    Ok(DistillTerms { total, recon, distill })
}

/// Value form of [`distill_loss_tape`]: `(total, l_recon, l_distill)`.
pub fn distill_loss(z_t: &FeatureMap, z_hat: &FeatureMap, z_r: &FeatureMap, z_s: &FeatureMap, lambda: f64) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let mut put = |f: &FeatureMap| tape.constant(f.shape(), f.values().to_vec());
    let (a, b, c, d) = (put(z_t)?, put(z_hat)?, put(z_r)?, put(z_s)?);
    for (x, y) in [(z_t, z_hat), (z_r, z_s)] {
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch {
                op: "distill_loss",
                expected: x.shape(),
                got: y.shape(),
            });
        }
    }
    let t = distill_loss_tape(&mut tape, a, b, c, d, lambda)?;
    Ok((tape.scalar(t.total), tape.scalar(t.recon), tape.scalar(t.distill)))
}

/// Mean squared error between two `2×T` hidden-logit nodes.
pub fn resk_loss_tape(tape: &mut Tape<'_>, h_t: Var, h_s: Var) -> Result<Var> {
    if tape.shape(h_t) != tape.shape(h_s) || tape.shape(h_t).first() != Some(&2) {
        return Err(Error::ShapeMismatch {
            op: "resk_loss",
            expected: tape.shape(h_t).to_vec(),
            got: tape.shape(h_s).to_vec(),
        });
    }
    tape.mse(h_t, h_s)
}

/// MSE over all frames and both logits of two hidden sequences.
pub fn resk_loss(h_t: &[[f64; 2]], h_s: &[[f64; 2]]) -> Result<f64> {
    if h_t.len() != h_s.len() || h_t.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "resk_loss",
            expected: vec![h_t.len(), 2],
            got: vec![h_s.len(), 2],
        });
    }
    let sum: f64 = h_t
        .iter()
        .zip(h_s)
        .flat_map(|(a, b)| [(a[0] - b[0]).powi(2), (a[1] - b[1]).powi(2)])
        .sum();
    Ok(sum / (2 * h_t.len()) as f64)
}

/// Channel-major `2×T` buffer from per-frame pairs.
pub fn pairs_to_rows(h: &[[f64; 2]]) -> Vec<f64> {
    h.iter().map(|p| p[0]).chain(h.iter().map(|p| p[1])).collect()
}
