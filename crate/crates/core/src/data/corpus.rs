use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::labels::{assign_labels, label_frames};
use super::synth::{clip_seed, synthesize_clip, CorpusParams};
use crate::dsp::wav::{read_wav, write_wav};
use crate::dsp::{vad_endpoint, AudioClip};
use crate::error::{Error, Result};

/// Frames labelled positive around the end-point at the 10 ms rate.
pub const LABEL_FRAMES: usize = 41;

/// Label-window length on a grid at `frame_rate_hz` covering the same
/// duration as `n_10ms` frames at 100 Hz.
pub fn label_frames_at(n_10ms: usize, frame_rate_hz: f64) -> usize {
    label_frames(n_10ms.saturating_sub(1) as f64 * 0.01, frame_rate_hz)
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CORPUS_FILE: &str = "corpus.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    /// Eight of every ten clips of each class train, one is dev, one test.
    pub fn for_index(class_index: usize) -> Self {
        match class_index % 10 {
            8 => Split::Dev,
            9 => Split::Test,
            _ => Split::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    /// Relative to the corpus directory.
    pub path: PathBuf,
    pub split: Split,
    pub is_positive: bool,
    pub duration_s: f64,
    pub clip_seed: u64,
}

/// Generator settings stored next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusInfo {
    pub seed: u64,
    pub params: CorpusParams,
}

/// A clip with its class and, when the VAD finds one, its keyword
/// end-point in 10 ms frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub name: String,
    pub split: Split,
    pub is_positive: bool,
    pub clip: AudioClip,
    pub endpoint: Option<usize>,
}

impl LabeledClip {
    pub fn new(name: String, split: Split, is_positive: bool, clip: AudioClip) -> Self {
        let endpoint = if is_positive { vad_endpoint(&clip) } else { None };
        Self {
            name,
            split,
            is_positive,
            clip,
            endpoint,
        }
    }

    /// End-point in seconds (end of its 10 ms frame).
    pub fn endpoint_s(&self) -> Option<f64> {
        self.endpoint.map(|e| (e + 1) as f64 * 0.01)
    }

    /// End-point frame on a grid running at `frame_rate_hz`.
    pub fn endpoint_frame(&self, frame_rate_hz: f64) -> Option<usize> {
        self.endpoint
            .map(|e| (e as f64 * frame_rate_hz / 100.0).floor() as usize)
    }

    /// Per-frame targets for `total_frames` frames at `frame_rate_hz`, with
    /// `n_10ms` label frames at the 10 ms rate. All false for negatives.
    pub fn targets(&self, frame_rate_hz: f64, total_frames: usize, n_10ms: usize) -> Result<Vec<bool>> {
        match self.endpoint_frame(frame_rate_hz) {
            Some(e) => assign_labels(
                e.min(total_frames - 1),
                total_frames,
                label_frames_at(n_10ms, frame_rate_hz),
            ),
            None => Ok(vec![false; total_frames]),
        }
    }

    /// Positives whose end-point could not be found carry no usable label.
    pub fn is_usable(&self) -> bool {
        !self.is_positive || self.endpoint.is_some()
    }
}

/// A labelled corpus held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub info: CorpusInfo,
    pub clips: Vec<LabeledClip>,
}

impl Corpus {
    /// Renders every clip without touching the filesystem.
    pub fn synthesize(seed: u64, params: &CorpusParams) -> Result<Self> {
        params.validate()?;
        let clips = corpus_plan(seed, params)
            .into_iter()
            .map(|(rec, name)| {
                let s = synthesize_clip(rec.clip_seed, rec.is_positive, params)?;
                Ok(LabeledClip::new(name, rec.split, rec.is_positive, s.clip))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            info: CorpusInfo {
                seed,
                params: params.clone(),
            },
            clips,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&LabeledClip> {
        self.clips.iter().filter(|c| c.split == split).collect()
    }

    /// Hours of negative audio in `split`.
    pub fn negative_hours(&self, split: Split) -> f64 {
        self.clips
            .iter()
            .filter(|c| c.split == split && !c.is_positive)
            .map(|c| c.clip.duration_s())
            .sum::<f64>()
            / 3600.0
    }

    /// Writes WAVs, the JSONL manifest and the generator settings.
    pub fn write(&self, dir: &Path) -> Result<Vec<ManifestRecord>> {
        let wav_dir = dir.join("wav");
        fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
        let plan = corpus_plan(self.info.seed, &self.info.params);
        let mut records = Vec::with_capacity(plan.len());
        for ((rec, _), clip) in plan.into_iter().zip(&self.clips) {
            write_wav(&dir.join(&rec.path), &clip.clip)?;
            records.push(rec);
        }
        write_manifest(&dir.join(MANIFEST_FILE), &records)?;
        let info_path = dir.join(CORPUS_FILE);
        let json = serde_json::to_string_pretty(&self.info)?;
        fs::write(&info_path, json).map_err(|e| Error::io(&info_path, e))?;
        Ok(records)
    }

    /// Loads a corpus written by [`Corpus::write`].
    pub fn load(dir: &Path) -> Result<Self> {
        let info_path = dir.join(CORPUS_FILE);
        let text = fs::read_to_string(&info_path).map_err(|e| Error::io(&info_path, e))?;
        let info: CorpusInfo = serde_json::from_str(&text)?;
        let records = read_manifest(&dir.join(MANIFEST_FILE))?;
        let clips = records
            .iter()
            .map(|r| {
                let clip = read_wav(&dir.join(&r.path))?;
                let name = r
                    .path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok(LabeledClip::new(name, r.split, r.is_positive, clip))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { info, clips })
    }
}

/// Manifest entries in a fixed order: positives, then negatives.
fn corpus_plan(seed: u64, params: &CorpusParams) -> Vec<(ManifestRecord, String)> {
    let n_pos = params.n_positives;
    let classes = [(true, n_pos, "pos"), (false, params.n_negatives(), "neg")];
    let mut out = Vec::new();
    let mut global = 0;
    for (is_positive, count, tag) in classes {
        for i in 0..count {
            let name = format!("{tag}_{i:05}");
            out.push((
                ManifestRecord {
                    path: PathBuf::from("wav").join(format!("{name}.wav")),
                    split: Split::for_index(i),
                    is_positive,
                    duration_s: params.clip_seconds,
                    clip_seed: clip_seed(seed, global),
                },
                name,
            ));
            global += 1;
        }
    }
    out
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusParams {
        CorpusParams {
            n_positives: 10,
            negative_hours: 20.0 * 3.0 / 3600.0,
            ..Default::default()
        }
    }

    #[test]
    fn splits_by_index() {
        let s: Vec<Split> = (0..10).map(Split::for_index).collect();
        assert_eq!(s.iter().filter(|&&x| x == Split::Train).count(), 8);
        assert_eq!(s[8], Split::Dev);
        assert_eq!(s[9], Split::Test);
    }

    #[test]
    fn synthesized_corpus_layout() {
        let c = Corpus::synthesize(3, &small()).unwrap();
        assert_eq!(c.clips.len(), 30);
        assert_eq!(c.clips.iter().filter(|c| c.is_positive).count(), 10);
        assert_eq!(c.split(Split::Test).len(), 3);
        assert!((c.negative_hours(Split::Train) - 16.0 * 3.0 / 3600.0).abs() < 1e-12);
        assert!(c.clips.iter().all(|c| c.is_usable()));
    }

    #[test]
    fn write_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::synthesize(5, &small()).unwrap();
        let recs = c.write(dir.path()).unwrap();
        assert_eq!(recs.len(), 30);
        let back = Corpus::load(dir.path()).unwrap();
        assert_eq!(back, c);
        let lines = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(lines.lines().count(), 30);
    }

    #[test]
    fn targets_follow_endpoint() {
        let clip = AudioClip::new(vec![0.0; 48_000]).unwrap();
        let mut lc = LabeledClip::new("x".into(), Split::Train, true, clip);
        assert_eq!(lc.endpoint, None);
        assert!(!lc.is_usable());
        lc.endpoint = Some(100);
        let y = lc.targets(100.0, 298, LABEL_FRAMES).unwrap();
        assert_eq!(y.iter().filter(|&&b| b).count(), 41);
        assert!(y[80] && y[120] && !y[79] && !y[121]);
        let y = lc.targets(50.0, 149, LABEL_FRAMES).unwrap();
        assert_eq!(y.iter().filter(|&&b| b).count(), 21);
        assert!(y[40] && y[60] && !y[39] && !y[61]);
    }

    #[test]
    fn label_lengths_per_rate() {
        assert_eq!(label_frames_at(41, 100.0), 41);
        assert_eq!(label_frames_at(41, 50.0), 21);
        assert_eq!(label_frames_at(1, 50.0), 1);
    }

    #[test]
    fn load_missing_dir_is_io() {
        let err = Corpus::load(Path::new("/nonexistent/corpus")).unwrap_err();
        assert!(err.is_io());
    }
}
