use crate::error::{Error, Result};
use crate::features::FeatureMap;

/// Binary targets with `n` ones centred on `endpoint_frame`, clipped to the
/// clip.
pub fn assign_labels(endpoint_frame: usize, total_frames: usize, n: usize) -> Result<Vec<bool>> {
    if endpoint_frame >= total_frames {
        return Err(Error::invalid(format!(
            "end-point frame {endpoint_frame} outside clip of {total_frames} frames"
        )));
    }
    if n % 2 == 0 {
        return Err(Error::invalid(format!("label window n={n} must be odd")));
    }
    let half = n / 2;
    let lo = endpoint_frame.saturating_sub(half);
    let hi = (endpoint_frame + half).min(total_frames - 1);
    Ok((0..total_frames).map(|t| (lo..=hi).contains(&t)).collect())
}

/// Odd label-window length holding `duration_s` around the end-point at
/// `frame_rate_hz` (41 frames at 100 Hz, 21 at 50 Hz for 0.4 s).
pub fn label_frames(duration_s: f64, frame_rate_hz: f64) -> usize {
    2 * (duration_s / 2.0 * frame_rate_hz).round() as usize + 1
}

/// One causal window of a feature stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamWindow {
    /// Stream frame the window ends on.
    pub end: usize,
    pub features: FeatureMap,
    pub targets: Vec<bool>,
    /// Leading frames that precede the stream and were zero-filled.
    pub padded: usize,
}

/// Windows ending at every frame of `features`, each holding the
/// `window_frames` frames up to and including that frame.
pub fn window_stream(features: &FeatureMap, targets: &[bool], window_frames: usize) -> Result<Vec<StreamWindow>> {
    if window_frames == 0 {
        return Err(Error::invalid("window_frames must be >= 1"));
    }
    if targets.len() != features.frames() {
        return Err(Error::ShapeMismatch {
            op: "window_stream",
            expected: vec![features.frames()],
            got: vec![targets.len()],
        });
    }
    Ok((0..features.frames())
        .map(|end| {
            let padded = (window_frames - 1).saturating_sub(end);
            let first = end + 1 + padded - window_frames;
            let mut t = vec![false; padded];
            t.extend_from_slice(&targets[first..=end]);
            StreamWindow {
                end,
                features: features.window_ending_at(end, window_frames),
                targets: t,
                padded,
            }
        })
        .collect())
}
