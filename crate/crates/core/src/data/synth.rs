use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::{quantize_pcm16, AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

/// A linear chirp with a second harmonic.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Chirp {
    f_start: f64,
    f_end: f64,
    dur_s: f64,
}

/// The three-segment keyword template.
const KEYWORD: [Chirp; 3] = [
    Chirp {
        f_start: 500.0,
        f_end: 900.0,
        dur_s: 0.14,
    },
    Chirp {
        f_start: 1400.0,
        f_end: 1000.0,
        dur_s: 0.12,
    },
    Chirp {
        f_start: 700.0,
        f_end: 1600.0,
        dur_s: 0.16,
    },
];
const SEGMENT_GAP_S: f64 = 0.06;
const BASE_AMPLITUDE: f64 = 0.25;
const HARMONIC_GAIN: f64 = 0.3;
const TAPER_S: f64 = 0.01;
/// Silence kept between separate distractor sequences so that partial
/// keywords never run together into the full order.
const DISTRACTOR_SEPARATION_S: f64 = 0.3;

/// Parameters of the synthetic keyword corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusParams {
    pub n_positives: usize,
    pub negative_hours: f64,
    pub clip_seconds: f64,
    pub snr_db: [f64; 2],
    pub pitch_jitter: f64,
    pub tempo_jitter: f64,
    pub gain_db: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            n_positives: 100,
            negative_hours: 0.5,
            clip_seconds: 3.0,
            snr_db: [5.0, 20.0],
            pitch_jitter: 0.10,
            tempo_jitter: 0.15,
            gain_db: 6.0,
        }
    }
}

impl CorpusParams {
    /// Number of negative clips covering `negative_hours`.
    pub fn n_negatives(&self) -> usize {
        (self.negative_hours * 3600.0 / self.clip_seconds).round() as usize
    }

    pub fn clip_samples(&self) -> usize {
        (self.clip_seconds * SAMPLE_RATE as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_positives == 0 {
            return bad("corpus needs at least one positive".into());
        }
        if !(self.negative_hours > 0.0) {
            return bad(format!("negative_hours must be > 0, got {}", self.negative_hours));
        }
        if self.n_negatives() == 0 {
            return bad("negative_hours shorter than one clip".into());
        }
        // Longest keyword (slowest tempo) plus margins must fit.
        let longest = keyword_duration_s(1.0 / (1.0 - self.tempo_jitter.min(0.5)));
        if !(self.clip_seconds >= longest + 0.5) {
            return bad(format!(
                "clip_seconds {} too short for a {longest:.2} s keyword",
                self.clip_seconds
            ));
        }
        if !(self.snr_db[0] <= self.snr_db[1]) || !self.snr_db.iter().all(|v| v.is_finite()) {
            return bad(format!("snr_db range {:?} invalid", self.snr_db));
        }
        for (name, v) in [
            ("pitch_jitter", self.pitch_jitter),
            ("tempo_jitter", self.tempo_jitter),
        ] {
            if !(0.0..0.5).contains(&v) {
                return bad(format!("{name} must be in [0, 0.5), got {v}"));
            }
        }
        if !(0.0..=12.0).contains(&self.gain_db) {
            return bad(format!("gain_db must be in [0, 12], got {}", self.gain_db));
        }
        Ok(())
    }
}

fn keyword_duration_s(stretch: f64) -> f64 {
    (KEYWORD.iter().map(|c| c.dur_s).sum::<f64>() + 2.0 * SEGMENT_GAP_S) * stretch
}

/// Per-clip seed derived from the corpus seed and the clip index.
pub fn clip_seed(seed: u64, index: usize) -> u64 {
    crate::init::derive_seed(seed, index as u64)
}

/// Adds `chirp` into `out` from `start`, scaled by `amp`.
fn render_chirp(out: &mut [f64], start: usize, chirp: Chirp, amp: f64) {
    let sr = SAMPLE_RATE as f64;
    let n = (chirp.dur_s * sr).round() as usize;
    let taper = (TAPER_S * sr) as usize;
    let slope = (chirp.f_end - chirp.f_start) / chirp.dur_s;
    for i in 0..n.min(out.len().saturating_sub(start)) {
        let t = i as f64 / sr;
        let phase = 2.0 * PI * (chirp.f_start * t + 0.5 * slope * t * t);
        let edge = i.min(n - 1 - i);
        let env = if edge < taper {
            0.5 - 0.5 * (PI * edge as f64 / taper as f64).cos()
        } else {
            1.0
        };
        let v = amp * env * (phase.sin() + HARMONIC_GAIN * (2.0 * phase).sin());
        out[start + i] += v;
    }
}

fn segment_samples(chirp: Chirp) -> usize {
    (chirp.dur_s * SAMPLE_RATE as f64).round() as usize
}

/// Renders segments separated by the inter-segment gap; returns the sample
/// just past the last one.
fn render_sequence(out: &mut [f64], start: usize, seq: &[Chirp], amp: f64) -> usize {
    let gap = (SEGMENT_GAP_S * SAMPLE_RATE as f64).round() as usize;
    let mut pos = start;
    for (i, c) in seq.iter().enumerate() {
        if i > 0 {
            pos += gap;
        }
        render_chirp(out, pos, *c, amp);
        pos += segment_samples(*c);
    }
    pos
}

fn sequence_len(seq: &[Chirp]) -> usize {
    let gap = (SEGMENT_GAP_S * SAMPLE_RATE as f64).round() as usize;
    seq.iter().map(|c| segment_samples(*c)).sum::<usize>() + gap * seq.len().saturating_sub(1)
}

fn jitter(c: Chirp, pitch: f64, stretch: f64) -> Chirp {
    Chirp {
        f_start: c.f_start * pitch,
        f_end: c.f_end * pitch,
        dur_s: c.dur_s * stretch,
    }
}

struct Voice {
    pitch: f64,
    stretch: f64,
    amp: f64,
    noise_std: f64,
}

fn draw_voice(rng: &mut ChaCha8Rng, p: &CorpusParams) -> Voice {
    let pitch = 1.0 + rng.random_range(-p.pitch_jitter..=p.pitch_jitter);
    let tempo = 1.0 + rng.random_range(-p.tempo_jitter..=p.tempo_jitter);
    let gain_db = rng.random_range(-p.gain_db..=p.gain_db);
    let snr_db = rng.random_range(p.snr_db[0]..=p.snr_db[1]);
    let amp = BASE_AMPLITUDE * 10f64.powf(gain_db / 20.0);
    // Active-signal power of a chirp with the harmonic, ignoring tapers.
    let signal_power = amp * amp * (1.0 + HARMONIC_GAIN * HARMONIC_GAIN) / 2.0;
    let noise_std = (signal_power / 10f64.powf(snr_db / 10.0)).sqrt();
    Voice {
        pitch,
        stretch: 1.0 / tempo,
        amp,
        noise_std,
    }
}

fn finish(mut samples: Vec<f64>, rng: &mut ChaCha8Rng, noise_std: f64) -> Result<AudioClip> {
    let normal = Normal::new(0.0, noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    for s in &mut samples {
        // Quantised so an in-memory clip equals its 16-bit WAV round trip.
        *s = quantize_pcm16((*s + normal.sample(rng)).clamp(-1.0, 1.0));
    }
    AudioClip::new(samples)
}

/// A rendered clip and, for positives, the keyword's sample span.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub clip: AudioClip,
    pub keyword_span: Option<(usize, usize)>,
}

/// One synthetic clip. Positives hold a single keyword at a random
/// position; negatives hold noise plus distractor sequences that never
/// form the keyword order.
pub fn synthesize_clip(clip_seed: u64, is_positive: bool, params: &CorpusParams) -> Result<Synthesized> {
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed);
    let n = params.clip_samples();
    let margin = (0.25 * SAMPLE_RATE as f64) as usize;
    let mut out = vec![0.0; n];
    let voice = draw_voice(&mut rng, params);
    let mut keyword_span = None;
    if is_positive {
        let seq: Vec<Chirp> = KEYWORD.iter().map(|c| jitter(*c, voice.pitch, voice.stretch)).collect();
        let len = sequence_len(&seq);
        let start = rng.random_range(margin..=n - len - margin);
        keyword_span = Some((start, render_sequence(&mut out, start, &seq, voice.amp)));
    } else {
        let sep = (DISTRACTOR_SEPARATION_S * SAMPLE_RATE as f64) as usize;
        let count = rng.random_range(0..=3usize);
        let mut cursor = margin;
        for _ in 0..count {
            let seq = draw_distractor(&mut rng, &voice);
            let len = sequence_len(&seq);
            let room = n.saturating_sub(margin + len);
            if cursor > room {
                break;
            }
            let start = rng.random_range(cursor..=cursor + (room - cursor) / 2);
            let end = render_sequence(&mut out, start, &seq, voice.amp);
            cursor = end + sep;
        }
    }
    Ok(Synthesized {
        clip: finish(out, &mut rng, voice.noise_std)?,
        keyword_span,
    })
}

/// One to three segments, each a keyword segment or a random chirp, never
/// two consecutive keyword segments in template order.
fn draw_distractor(rng: &mut ChaCha8Rng, voice: &Voice) -> Vec<Chirp> {
    loop {
        let len = rng.random_range(1..=3usize);
        let picks: Vec<Option<usize>> = (0..len)
            .map(|_| {
                if rng.random::<f64>() < 0.7 {
                    Some(rng.random_range(0..3usize))
                } else {
                    None
                }
            })
            .collect();
        // Any two keyword segments in template order would make the
        // distractor indistinguishable from the keyword over part of the
        // label span, which starts before the final segment has ended.
        if picks.windows(2).any(|w| matches!(w, [Some(a), Some(b)] if *b == *a + 1)) {
            continue;
        }
        return picks
            .into_iter()
            .map(|p| match p {
                Some(i) => jitter(KEYWORD[i], voice.pitch, voice.stretch),
                None => Chirp {
                    f_start: rng.random_range(300.0..2000.0),
                    f_end: rng.random_range(300.0..2000.0),
                    dur_s: rng.random_range(0.08..0.2),
                },
            })
            .collect();
    }
}
