//! Commands behind the `litefew` binary. Each one reads a [`RunConfig`],
//! writes its artifacts under an output directory and returns what it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use litefew_core::checkpoint::{Checkpoint, Stage};
use litefew_core::config::RunConfig;
use litefew_core::data::{Corpus, LabeledClip, ManifestRecord, Split};
use litefew_core::encoder::{param_count, EncoderConfig};
use litefew_core::eval::{det_sweep, evaluate, score_clips, write_det_csv, write_report_json, EvalReport};
use litefew_core::pipeline::WwdModel;
use litefew_core::training::{write_trace_csv, DistillReport, FinetuneMode, TraceRow};
use litefew_core::wwd::head_param_count;
use litefew_core::{workflow, Error, Result};

pub const TEACHER_FILE: &str = "teacher.lfew";
pub const DISTILLED_FILE: &str = "distilled.lfew";
pub const DISTILL_TRACE_FILE: &str = "distill_trace.csv";
pub const FINETUNED_FILE: &str = "finetuned.lfew";
pub const FINETUNE_TRACE_FILE: &str = "finetune_trace.csv";
pub const TEACHER_PIPELINE_FILE: &str = "teacher_pipeline.lfew";
pub const TEACHER_PIPELINE_TRACE_FILE: &str = "teacher_pipeline_trace.csv";
pub const REPORT_FILE: &str = "eval_report.json";
pub const DET_FILE: &str = "det.csv";
pub const SWEEP_FILE: &str = "det_sweep.csv";

/// Process exit code for a failed command: 2 for I/O, 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        2
    } else {
        1
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            return Err(Error::Io {
                path: parent.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "parent directory does not exist"),
            });
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    Corpus::load(&cfg.paths.corpus_dir)
}

fn required<'p>(path: &'p Option<PathBuf>, what: &str, mode: FinetuneMode) -> Result<&'p Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("mode {mode} needs a {what} checkpoint")))
}

/// Synthesises the corpus into `out` and returns its manifest.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Vec<ManifestRecord>> {
    ensure_dir(out)?;
    Corpus::synthesize(cfg.seed, &cfg.corpus)?.write(out)
}

/// Distils a student from the configured teacher archive, or from a
/// pseudo-teacher drawn from the run seed when none is configured.
pub fn cmd_distill(cfg: &RunConfig, out: &Path) -> Result<DistillReport> {
    let corpus = load_corpus(cfg)?;
    ensure_dir(out)?;
    let teacher_cfg = EncoderConfig {
        alpha: 1.0,
        ..cfg.encoder.clone()
    };
    let teacher = match &cfg.paths.teacher_checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            ck.expect_stage(Stage::Teacher)?;
            ck.encoder(&teacher_cfg)?
        }
        None => {
            let t = workflow::pseudo_teacher(cfg, cfg.seed)?;
            Checkpoint::teacher(&t, cfg.seed)?.save(&out.join(TEACHER_FILE))?;
            t
        }
    };
    let clips: Vec<_> = corpus.split(Split::Train).into_iter().map(|c| c.clip.clone()).collect();
    let (student, ae, report) = workflow::distill(cfg, &teacher, &clips)?;
    Checkpoint::distilled(&student, &ae, cfg.distill.seed)?.save(&out.join(DISTILLED_FILE))?;
    write_trace_csv(&out.join(DISTILL_TRACE_FILE), &report.trace)?;
    Ok(report)
}

fn load_finetuned(path: &Path) -> Result<WwdModel> {
    Checkpoint::load(path)?.model()
}

/// Fine-tunes a detector in `cfg.finetune.mode`. With `fbank_teacher` it
/// instead trains the Fbank detector that serves as the ResK teacher.
pub fn cmd_finetune(cfg: &RunConfig, out: &Path, fbank_teacher: bool) -> Result<Vec<TraceRow>> {
    let corpus = load_corpus(cfg)?;
    let train = corpus.split(Split::Train);
    let mode = cfg.finetune.mode;
    if fbank_teacher {
        ensure_dir(out)?;
        let (model, report) = workflow::train_teacher_pipeline(cfg, &train)?;
        Checkpoint::finetuned(&model, Some(FinetuneMode::Scratch), cfg.finetune.seed)?.save(&out.join(TEACHER_PIPELINE_FILE))?;
        write_trace_csv(&out.join(TEACHER_PIPELINE_TRACE_FILE), &report.trace)?;
        return Ok(report.trace);
    }
    let distilled = if mode.needs_distilled_encoder() {
        let p = required(&cfg.paths.distilled_checkpoint, "distilled", mode)?;
        Some(Checkpoint::load(p)?.distilled_encoder()?)
    } else {
        None
    };
    let teacher = if mode.uses_teacher() {
        Some(load_finetuned(required(&cfg.paths.teacher_pipeline_checkpoint, "teacher pipeline", mode)?)?)
    } else {
        None
    };
    ensure_dir(out)?;
    let (model, report) = workflow::finetune(cfg, mode, distilled.as_ref(), teacher.as_ref(), &train)?;
    Checkpoint::finetuned(&model, Some(mode), cfg.finetune.seed)?.save(&out.join(FINETUNED_FILE))?;
    write_trace_csv(&out.join(FINETUNE_TRACE_FILE), &report.trace)?;
    Ok(report.trace)
}

/// Test split; it needs both classes for an FRR at a FA budget.
fn test_clips<'c>(cfg: &RunConfig, corpus: &'c Corpus) -> Result<Vec<&'c LabeledClip>> {
    let test = corpus.split(Split::Test);
    if !test.iter().any(|c| c.is_positive) || !test.iter().any(|c| !c.is_positive) {
        return Err(Error::Config(format!(
            "corpus at {} has no test split with both classes",
            cfg.paths.corpus_dir.display()
        )));
    }
    Ok(test)
}

/// Streams the test split through the checkpointed detector.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<EvalReport> {
    let model = load_finetuned(checkpoint)?;
    let corpus = load_corpus(cfg)?;
    let test = test_clips(cfg, &corpus)?;
    ensure_dir(out)?;
    let report = evaluate(&model, &test, &cfg.eval)?;
    write_report_json(&out.join(REPORT_FILE), &report)?;
    write_det_csv(&out.join(DET_FILE), &report.det_points)?;
    Ok(report)
}

/// FRR at every configured FA budget.
pub fn cmd_sweep(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<Vec<(f64, f64)>> {
    let model = load_finetuned(checkpoint)?;
    let corpus = load_corpus(cfg)?;
    let test = test_clips(cfg, &corpus)?;
    ensure_dir(out)?;
    let scores = score_clips(&model, &test, &cfg.eval)?;
    let det = det_sweep(&scores.positive_scores, &scores.negative_scores, scores.negative_hours, &cfg.eval.det_budgets)?;
    write_det_csv(&out.join(SWEEP_FILE), &det)?;
    Ok(det)
}

/// One row of the parameter table.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRow {
    pub alpha: f64,
    /// Conv weights only, the figure width tables usually quote.
    pub weights: usize,
    /// Every encoder parameter, including biases and norm affine.
    pub encoder: usize,
    pub head: usize,
}

impl ParamRow {
    pub fn total(&self) -> usize {
        self.encoder + self.head
    }
}

/// Encoder and detector-head counts for every configured width.
pub fn cmd_params(cfg: &RunConfig) -> Result<Vec<ParamRow>> {
    cfg.param_alphas
        .iter()
        .map(|&alpha| {
            let enc = EncoderConfig {
                alpha,
                ..cfg.encoder.clone()
            };
            enc.validate()?;
            let bare = EncoderConfig {
                use_bias: false,
                first_block_norm: false,
                ..enc.clone()
            };
            Ok(ParamRow {
                alpha,
                weights: param_count(&bare),
                encoder: param_count(&enc),
                head: head_param_count(&cfg.head_for(enc.channels())),
            })
        })
        .collect()
}

/// Fixed-width table of [`ParamRow`]s plus the Fbank detector, which has
/// no encoder.
pub fn params_table(rows: &[ParamRow], fbank_head: usize) -> String {
    let mut s = format!("{:>8} {:>10} {:>10} {:>8} {:>10}\n", "alpha", "weights", "encoder", "head", "total");
    for r in rows {
        s.push_str(&format!(
            "{:>8.4} {:>10} {:>10} {:>8} {:>10}\n",
            r.alpha,
            r.weights,
            r.encoder,
            r.head,
            r.total()
        ));
    }
    s.push_str(&format!("{:>8} {:>10} {:>10} {:>8} {:>10}\n", "fbank", 0, 0, fbank_head, fbank_head));
    s
}
