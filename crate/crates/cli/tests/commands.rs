use std::path::Path;
use std::process::Command;

use litefew_cli::*;
use litefew_core::checkpoint::{Checkpoint, Stage};
use litefew_core::config::RunConfig;
use litefew_core::data::{read_manifest, CorpusParams, MANIFEST_FILE};
use litefew_core::dsp::wav::write_wav;
use litefew_core::dsp::{AudioClip, FbankConfig};
use litefew_core::encoder::{ConvFeatureEncoder, EncoderConfig};
use litefew_core::pipeline::{Frontend, WwdModel};
use litefew_core::tensor::{Module, Tensor};
use litefew_core::training::FinetuneMode;
use litefew_core::wwd::{DilatedConvConfig, DilatedConvHead};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(corpus_dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.corpus = CorpusParams {
        n_positives: 10,
        negative_hours: 20.0 / 3600.0,
        clip_seconds: 2.0,
        ..CorpusParams::default()
    };
    cfg.distill.batch_size = 4;
    cfg.finetune.batch_size = 4;
    cfg.finetune.epochs = 3;
    cfg.head = DilatedConvConfig::with_blocks(4, 1);
    cfg.paths.corpus_dir = corpus_dir.to_path_buf();
    cfg
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_litefew"))
}

#[test]
fn synth_defaults_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let records = cmd_synth(&RunConfig::default(), &dir.path().join("c")).unwrap();
    assert_eq!(records.iter().filter(|r| r.is_positive).count(), 100);
    let neg: f64 = records.iter().filter(|r| !r.is_positive).map(|r| r.duration_s).sum();
    assert!((neg - 1800.0).abs() <= 5.0);

    let cfg = tiny(dir.path());
    cmd_synth(&cfg, &dir.path().join("a")).unwrap();
    cmd_synth(&cfg, &dir.path().join("b")).unwrap();
    let m = |d: &str| std::fs::read(dir.path().join(d).join(MANIFEST_FILE)).unwrap();
    assert_eq!(m("a"), m("b"));
    assert_eq!(read_manifest(&dir.path().join("a").join(MANIFEST_FILE)).unwrap().len(), 20);
}

#[test]
fn synth_missing_parent_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("absent").join("corpus");
    let err = cmd_synth(&tiny(dir.path()), &out).unwrap_err();
    assert!(err.to_string().contains("absent"), "{err}");
    assert_eq!(exit_code(&err), 2);
    let status = bin().args(["synth", "--out"]).arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"distill": {"lamda": 0.1}}"#).unwrap();
    assert_eq!(bin().arg("params").arg("--config").arg(&bad).status().unwrap().code(), Some(1));
    assert_eq!(bin().args(["finetune", "--mode", "Nope"]).status().unwrap().code(), Some(1));
    assert_eq!(bin().arg("bogus").status().unwrap().code(), Some(1));
    let missing = dir.path().join("nope.json");
    assert_eq!(bin().arg("params").arg("--config").arg(&missing).status().unwrap().code(), Some(2));
    let ok = bin().arg("params").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8(ok.stdout).unwrap().contains("66176"));
}

#[test]
fn params_table_values() {
    let rows = cmd_params(&RunConfig::default()).unwrap();
    let get = |a: f64| rows.iter().find(|r| r.alpha == a).unwrap();
    assert_eq!(get(0.125).weights, 66_176);
    assert_eq!(get(1.0).weights, 4_199_424);
    // First-block norm affine adds 2·C.
    assert_eq!(get(0.125).encoder, 66_176 + 128);
    for r in &rows {
        assert_eq!(r.total(), r.encoder + r.head);
    }
}

#[test]
fn seeded_commands_reproduce_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let base = dir.path().join(tag);
        std::fs::create_dir(&base).unwrap();
        let cfg_path = base.join("cfg.json");
        let mut cfg = tiny(&base.join("corpus"));
        cfg.distill.epochs = 1;
        std::fs::write(&cfg_path, cfg.to_json().unwrap()).unwrap();
        for cmd in [&["synth", "--out"][..], &["distill", "--out"][..]] {
            let target = if cmd[0] == "synth" { base.join("corpus") } else { base.join("d") };
            let st = bin().args(cmd).arg(&target).arg("--config").arg(&cfg_path).args(["--seed", "9"]).status().unwrap();
            assert!(st.success());
        }
        [DISTILLED_FILE, TEACHER_FILE, DISTILL_TRACE_FILE].map(|f| std::fs::read(base.join("d").join(f)).unwrap())
    };
    assert_eq!(run("x"), run("y"));
}

#[test]
fn distill_stage_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(&dir.path().join("corpus"));
    cfg.set_seed(7);
    cmd_synth(&cfg, &cfg.paths.corpus_dir).unwrap();
    let out = dir.path().join("d");
    let report = cmd_distill(&cfg, &out).unwrap();
    let ck = Checkpoint::load(&out.join(DISTILLED_FILE)).unwrap();
    assert_eq!(ck.stage, Stage::Distilled);
    let l: Vec<f64> = std::iter::once(report.first_batch.1).chain(report.trace.iter().map(|r| r.l_distill)).collect();
    assert!(l.iter().all(|&v| v > 0.0));
    let drops = l.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(drops >= 4, "l_distill {l:?}");

    // Teacher archive with one tensor of the wrong shape.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = ConvFeatureEncoder::new(EncoderConfig::with_alpha(1.0), &mut rng).unwrap();
    let mut ck = Checkpoint::teacher(&t, 1).unwrap();
    let name = ck.tensors[2].0.clone();
    ck.tensors[2].1 = Tensor::new(vec![3], vec![0.0; 3]).unwrap();
    let bad = dir.path().join("bad_teacher.lfew");
    ck.save(&bad).unwrap();
    let mut c2 = cfg.clone();
    c2.paths.teacher_checkpoint = Some(bad);
    let err = cmd_distill(&c2, &dir.path().join("d2")).unwrap_err();
    assert!(err.to_string().contains(&name), "{err}");

    let mut c3 = cfg.clone();
    c3.encoder.alpha = 1.0;
    assert!(cmd_distill(&c3, &dir.path().join("d3")).is_err());
}

#[test]
fn finetune_modes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(&dir.path().join("corpus"));
    cmd_synth(&cfg, &cfg.paths.corpus_dir).unwrap();

    cfg.finetune.mode = FinetuneMode::FeaK;
    let err = cmd_finetune(&cfg, &dir.path().join("f"), false).unwrap_err();
    assert!(err.to_string().contains("FeaK"), "{err}");
    assert_eq!(exit_code(&err), 1);

    cfg.finetune.mode = FinetuneMode::Scratch;
    cfg.finetune.epochs = 50;
    let trace = cmd_finetune(&cfg, &dir.path().join("s"), false).unwrap();
    assert_eq!(trace.len(), 50);
    assert!(trace.iter().all(|r| r.l_wwd.is_finite()));

    cfg.finetune.epochs = 2;
    cfg.distill.epochs = 1;
    cmd_distill(&cfg, &dir.path().join("d")).unwrap();
    cmd_finetune(&cfg, &dir.path().join("t"), true).unwrap();
    cfg.paths.distilled_checkpoint = Some(dir.path().join("d").join(DISTILLED_FILE));
    cfg.paths.teacher_pipeline_checkpoint = Some(dir.path().join("t").join(TEACHER_PIPELINE_FILE));
    cfg.finetune.mode = FinetuneMode::Both;
    let trace = cmd_finetune(&cfg, &dir.path().join("b"), false).unwrap();
    assert!(trace.iter().all(|r| r.l_resk > 0.0));
    let ck = Checkpoint::load(&dir.path().join("b").join(FINETUNED_FILE)).unwrap();
    assert_eq!(ck.spec().unwrap().mode, Some(FinetuneMode::Both));
}

/// Detector whose logit difference is `gain·(mean log-mel − mid)`.
fn energy_detector(mid: f64, gain: f64) -> WwdModel {
    let fb = FbankConfig::default();
    let mut head = DilatedConvHead::zeros(DilatedConvConfig::with_blocks(1, fb.n_mels)).unwrap();
    {
        let mut ts = head.tensors_mut();
        let n = ts.len();
        for c in 0..fb.n_mels {
            ts[0].data_mut()[c] = 1.0 / fb.n_mels as f64;
        }
        let r = DilatedConvConfig::default().residual_channels;
        ts[n - 2].data_mut()[r] = gain;
        ts[n - 1].data_mut()[1] = -gain * mid;
    }
    WwdModel::new(Frontend::Fbank(fb), head, 1.5).unwrap()
}

#[test]
fn eval_on_separable_toy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&dir.path().join("corpus"));
    let records = cmd_synth(&cfg, &cfg.paths.corpus_dir).unwrap();
    // Replace the audio: tone bursts for positives, silence for negatives.
    for r in &records {
        let n = (r.duration_s * 16_000.0).round() as usize;
        let mut s = vec![0.0; n];
        if r.is_positive {
            for (i, v) in s[16_000..22_400].iter_mut().enumerate() {
                *v = 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16_000.0).sin();
            }
        }
        write_wav(&cfg.paths.corpus_dir.join(&r.path), &AudioClip::new(s).unwrap()).unwrap();
    }
    let ckpt = dir.path().join("toy.lfew");
    Checkpoint::finetuned(&energy_detector(-15.0, 2.0), None, 0).unwrap().save(&ckpt).unwrap();
    let a = cmd_eval(&cfg, &ckpt, &dir.path().join("e1")).unwrap();
    assert_eq!(a.frr, 0.0);
    assert!(a.det_points.iter().all(|&(_, frr)| frr == 0.0));
    assert!(a.achieved_fa_per_hour <= a.target_fa_per_hour);
    cmd_eval(&cfg, &ckpt, &dir.path().join("e2")).unwrap();
    let read = |d: &str| std::fs::read(dir.path().join(d).join(REPORT_FILE)).unwrap();
    assert_eq!(read("e1"), read("e2"));
    let det = cmd_sweep(&cfg, &ckpt, &dir.path().join("s")).unwrap();
    assert_eq!(det, a.det_points);
}

#[test]
fn eval_requires_test_split() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(&dir.path().join("corpus"));
    cfg.corpus.n_positives = 3;
    cmd_synth(&cfg, &cfg.paths.corpus_dir).unwrap();
    let ckpt = dir.path().join("toy.lfew");
    Checkpoint::finetuned(&energy_detector(-15.0, 2.0), None, 0).unwrap().save(&ckpt).unwrap();
    let err = cmd_eval(&cfg, &ckpt, &dir.path().join("e")).unwrap_err();
    assert!(err.to_string().contains("test split"), "{err}");
}
