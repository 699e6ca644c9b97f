use std::collections::HashSet;

use litefew_core::data::{read_manifest, Corpus, CorpusParams, Split, MANIFEST_FILE};
use litefew_core::dsp::{vad_endpoint, FbankConfig, FbankExtractor};
use litefew_core::FeatureMap;

fn small() -> CorpusParams {
    CorpusParams {
        n_positives: 40,
        negative_hours: 0.04,
        ..CorpusParams::default()
    }
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_writes_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    Corpus::synthesize(3, &small()).unwrap().write(a.path()).unwrap();
    Corpus::synthesize(3, &small()).unwrap().write(b.path()).unwrap();
    let (x, y) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert!(x.len() > 40);
    assert_eq!(x, y);
    let c = tempfile::tempdir().unwrap();
    Corpus::synthesize(4, &small()).unwrap().write(c.path()).unwrap();
    assert_ne!(x, dir_bytes(c.path()));
}

#[test]
fn reference_sizes_and_endpoints() {
    let params = CorpusParams::default();
    let corpus = Corpus::synthesize(11, &params).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let records = corpus.write(dir.path()).unwrap();
    assert_eq!(records, read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap());
    assert_eq!(records.iter().filter(|r| r.is_positive).count(), 100);
    let neg_s: f64 = records.iter().filter(|r| !r.is_positive).map(|r| r.duration_s).sum();
    assert!((neg_s - 1800.0).abs() <= 5.0, "negatives total {neg_s} s");
    let paths: HashSet<_> = records.iter().map(|r| &r.path).collect();
    assert_eq!(paths.len(), records.len());

    // Independent VAD pass over the positives.
    for c in corpus.clips.iter().filter(|c| c.is_positive) {
        assert!(vad_endpoint(&c.clip).is_some(), "{}", c.name);
    }
}

#[test]
fn test_perturbation_seeds_never_train() {
    let corpus = Corpus::synthesize(5, &small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let records = corpus.write(dir.path()).unwrap();
    let seeds = |s: Split| records.iter().filter(|r| r.split == s).map(|r| r.clip_seed).collect::<HashSet<_>>();
    let (train, dev, test) = (seeds(Split::Train), seeds(Split::Dev), seeds(Split::Test));
    assert!(!test.is_empty() && !dev.is_empty());
    assert!(train.is_disjoint(&test) && train.is_disjoint(&dev) && dev.is_disjoint(&test));
}

/// Mean-removed log-mel patch of `len` frames ending at `end`.
fn patch(f: &FeatureMap, end: usize, len: usize) -> Vec<f64> {
    let w = f.window_ending_at(end, len);
    let v = w.values();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-12)
}

#[test]
fn energy_template_separates_classes() {
    let corpus = Corpus::synthesize(8, &CorpusParams { n_positives: 60, negative_hours: 0.05, ..CorpusParams::default() }).unwrap();
    let fx = FbankExtractor::new(&FbankConfig::default()).unwrap();
    let len = 60;
    let mut template = vec![0.0; 40 * len];
    let mut n = 0.0;
    for c in corpus.split(Split::Train).into_iter().filter(|c| c.is_positive) {
        let f = fx.compute(&c.clip).unwrap();
        let e = c.endpoint_frame(100.0).unwrap().min(f.frames() - 1);
        for (t, v) in template.iter_mut().zip(patch(&f, e, len)) {
            *t += v;
        }
        n += 1.0;
    }
    template.iter_mut().for_each(|t| *t /= n);
    let score = |c: &litefew_core::data::LabeledClip| {
        let f = fx.compute(&c.clip).unwrap();
        (len - 1..f.frames()).map(|e| cosine(&patch(&f, e, len), &template)).fold(f64::MIN, f64::max)
    };
    let held_out: Vec<_> = corpus.clips.iter().filter(|c| c.split != Split::Train).collect();
    let mean = |pos: bool| {
        let s: Vec<f64> = held_out.iter().filter(|c| c.is_positive == pos).map(|c| score(c)).collect();
        s.iter().sum::<f64>() / s.len() as f64
    };
    let (mp, mn) = (mean(true), mean(false));
    assert!(mp - mn > 0.0, "positive mean {mp}, negative mean {mn}");
}
