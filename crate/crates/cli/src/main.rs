use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use litefew_cli as cli;
use litefew_core::config::RunConfig;
use litefew_core::wwd::head_param_count;

// Keeps freed pages mapped; training allocates many short-lived buffers.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "litefew", version, about = "Distilled conv feature encoder and wake-word detection toolkit")]
struct Args {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed and every stage seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise the keyword corpus into --out.
    Synth,
    /// Distil the student encoder from the teacher.
    Distill {
        /// Corpus directory; overrides paths.corpus_dir.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Teacher archive; a pseudo-teacher is drawn from the seed when absent.
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Fine-tune a detector.
    Finetune {
        /// Corpus directory; overrides paths.corpus_dir.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Scratch, ResK, FeaK or Both.
        #[arg(long)]
        mode: Option<String>,
        /// Distilled checkpoint, required by FeaK and Both.
        #[arg(long)]
        distilled: Option<PathBuf>,
        /// Fine-tuned Fbank detector, required by ResK and Both.
        #[arg(long)]
        teacher_pipeline: Option<PathBuf>,
        /// Train the Fbank detector used as the ResK teacher instead.
        #[arg(long)]
        fbank_teacher: bool,
    },
    /// FRR at the configured FA budget on the test split.
    Eval {
        /// Corpus directory; overrides paths.corpus_dir.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Fine-tuned detector checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Encoder and head parameter counts.
    Params,
    /// FRR across every configured FA budget.
    Sweep {
        /// Corpus directory; overrides paths.corpus_dir.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Fine-tuned detector checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn run(args: Args) -> litefew_core::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.set_seed(s);
    }
    let set = |slot: &mut PathBuf, v: &Option<PathBuf>| {
        if let Some(v) = v {
            *slot = v.clone();
        }
    };
    let out = &args.out;
    match args.command {
        Command::Synth => {
            let records = cli::cmd_synth(&cfg, out)?;
            let pos = records.iter().filter(|r| r.is_positive).count();
            println!("wrote {} clips ({pos} positive) to {}", records.len(), out.display());
        }
        Command::Distill { corpus, teacher } => {
            set(&mut cfg.paths.corpus_dir, &corpus);
            if teacher.is_some() {
                cfg.paths.teacher_checkpoint = teacher;
            }
            let report = cli::cmd_distill(&cfg, out)?;
            if let Some(r) = report.trace.last() {
                println!("epoch {}: l_recon {:.6} l_distill {:.6}", r.epoch, r.l_recon, r.l_distill);
            }
        }
        Command::Finetune {
            corpus,
            mode,
            distilled,
            teacher_pipeline,
            fbank_teacher,
        } => {
            set(&mut cfg.paths.corpus_dir, &corpus);
            if let Some(m) = mode {
                cfg.finetune.mode = m.parse()?;
            }
            if distilled.is_some() {
                cfg.paths.distilled_checkpoint = distilled;
            }
            if teacher_pipeline.is_some() {
                cfg.paths.teacher_pipeline_checkpoint = teacher_pipeline;
            }
            let trace = cli::cmd_finetune(&cfg, out, fbank_teacher)?;
            if let Some(r) = trace.last() {
                println!("epoch {}: l_wwd {:.6} l_resk {:.6}", r.epoch, r.l_wwd, r.l_resk);
            }
        }
        Command::Eval { corpus, checkpoint } => {
            set(&mut cfg.paths.corpus_dir, &corpus);
            let r = cli::cmd_eval(&cfg, &checkpoint, out)?;
            println!(
                "FRR {:.4} at {} FA/h (achieved {:.4}, threshold {:.4}, {:.3} h negatives)",
                r.frr, r.target_fa_per_hour, r.achieved_fa_per_hour, r.threshold, r.negative_hours
            );
        }
        Command::Params => {
            let rows = cli::cmd_params(&cfg)?;
            print!("{}", cli::params_table(&rows, head_param_count(&cfg.head_for(cfg.fbank.n_mels))));
        }
        Command::Sweep { corpus, checkpoint } => {
            set(&mut cfg.paths.corpus_dir, &corpus);
            for (fa, frr) in cli::cmd_sweep(&cfg, &checkpoint, out)? {
                println!("{fa:>8} FA/h  FRR {frr:.4}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
