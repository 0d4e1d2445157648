use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phonodiff_cli::{
    evaluate_checkpoint, gen_corpus, parse_tokens, run_ablation, synthesize, train, AblationAxis, SynthRequest,
    SynthSource, TrainOptions,
};
use phonodiff_core::config::RunConfig;
use phonodiff_core::{Error, Result};

#[derive(Parser)]
#[command(name = "phonodiff", version, about = "Token-to-waveform diffusion synthesis at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; built-in desk defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for synth).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus and its manifest.
    GenCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model, checkpointing into the output directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Number of optimizer steps (overrides train.steps).
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, conflicts_with = "force")]
        resume: bool,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        skip_eval: bool,
    },
    /// Synthesize a waveform from a checkpoint.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Token ids, comma separated.
        #[arg(long, conflicts_with = "index", required_unless_present = "index")]
        tokens: Option<String>,
        /// Holdout utterance index.
        #[arg(long)]
        index: Option<usize>,
        /// Reverse-diffusion step counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        steps: Vec<usize>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the holdout split and print the report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Reverse-diffusion step counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        steps: Vec<usize>,
    },
    /// Train or evaluate the variants of one ablation axis.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// window, size, mask, multitask or steps.
        #[arg(long)]
        axis: String,
        /// Checkpoint for the steps axis.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Training steps per variant (overrides train.steps).
        #[arg(long)]
        train_steps: Option<u64>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus { common } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            let (path, digest) = gen_corpus(&cfg, &cfg.out)?;
            println!("{} {digest}", path.display());
        }
        Command::Train {
            common,
            steps,
            corpus,
            resume,
            force,
            skip_eval,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            let outcome = train(
                &cfg,
                &TrainOptions {
                    corpus,
                    resume,
                    force,
                    skip_eval,
                },
            )?;
            println!("trained to step {} in {}", outcome.final_step, outcome.out.display());
            if let Some(r) = outcome.report {
                println!("{}", r.to_json());
            }
        }
        Command::Synth {
            common,
            checkpoint,
            tokens,
            index,
            steps,
            corpus,
        } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            let source = match (tokens, index) {
                (Some(t), _) => SynthSource::Tokens(parse_tokens(&t)?),
                (None, Some(i)) => SynthSource::Holdout(i),
                (None, None) => return Err(Error::config("--tokens", "give --tokens or --index")),
            };
            let steps = if steps.is_empty() { vec![cfg.schedule.steps] } else { steps };
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("synth.wav"));
            let sidecar = synthesize(
                &cfg,
                &SynthRequest {
                    checkpoint,
                    source,
                    steps,
                    out,
                    corpus,
                },
            )?;
            for f in &sidecar.files {
                println!("{} ({} steps, {} samples)", f.path.display(), f.steps, f.samples);
            }
        }
        Command::Evaluate {
            common,
            checkpoint,
            corpus,
            steps,
        } => {
            let mut cfg = load_config(&common)?;
            if !steps.is_empty() {
                cfg.train.eval_steps = steps;
            }
            let report = evaluate_checkpoint(&cfg, &checkpoint, corpus.as_deref())?;
            let json = report.to_json();
            if let Some(o) = &common.out {
                std::fs::create_dir_all(o)?;
                std::fs::write(o.join(phonodiff_cli::commands::EVAL_FILE), &json)?;
            }
            println!("{json}");
        }
        Command::Ablate {
            common,
            axis,
            checkpoint,
            corpus,
            train_steps,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = train_steps {
                cfg.train.steps = s;
            }
            let axis: AblationAxis = axis.parse()?;
            let table = run_ablation(&cfg, axis, checkpoint.as_deref(), corpus.as_deref())?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
