//! 16 kHz mono PCM16 WAV files.

use std::path::Path;

use super::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

pub(crate) fn pcm16_from_f64(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn spec() -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::AudioFormat {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let mut w = hound::WavWriter::create(path, spec()).map_err(|e| map_hound(path, e))?;
    for &s in clip.samples() {
        w.write_sample(pcm16_from_f64(s))
            .map_err(|e| map_hound(path, e))?;
    }
    w.finalize().map_err(|e| map_hound(path, e))
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let s = reader.spec();
    let bad = |reason: String| Error::AudioFormat {
        path: path.to_path_buf(),
        reason,
    };
    if s.channels != 1 {
        return Err(bad(format!("expected mono, found {} channels", s.channels)));
    }
    if s.sample_rate != SAMPLE_RATE {
        return Err(bad(format!("expected 16000 Hz, found {} Hz", s.sample_rate)));
    }
    if s.bits_per_sample != 16 || s.sample_format != hound::SampleFormat::Int {
        return Err(bad(format!(
            "expected 16-bit integer PCM, found {}-bit {:?}",
            s.bits_per_sample, s.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|r| r.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| map_hound(path, e))?;
    AudioClip::new(samples).map_err(|e| bad(e.to_string()))
}
