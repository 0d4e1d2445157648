use std::path::{Path, PathBuf};

use log::info;
use phonodiff_core::config::{Precision, RunConfig};
use phonodiff_core::data::{generate_corpus, read_corpus, write_corpus, Corpus};
use phonodiff_core::model::{Example, Model};
use phonodiff_core::train::{evaluate, example_from, waveform_distance, EvalOptions, EvalReport, MetricsLog, StepMetrics, Trainer};
use phonodiff_core::{checkpoint, rng, Error, Real, Result};
use serde::Serialize;

pub const CORPUS_FILE: &str = "corpus.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const EVAL_FILE: &str = "eval.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Generates the corpus described by `cfg` into `out/corpus.bin` (plus its
/// manifest) and returns the file path and digest.
pub fn gen_corpus(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, String)> {
    cfg.validate()?;
    let corpus = generate_corpus(&cfg.data, cfg.seed)?;
    std::fs::create_dir_all(out)?;
    let path = out.join(CORPUS_FILE);
    let digest = write_corpus(&corpus, &path)?;
    info!(
        "wrote {} ({} train + {} holdout utterances, sha256 {digest})",
        path.display(),
        corpus.train.len(),
        corpus.holdout.len()
    );
    Ok((path, digest))
}

fn check_corpus(cfg: &RunConfig, corpus: &Corpus) -> Result<()> {
    if corpus.config.samples_per_frame != cfg.model.samples_per_frame {
        return Err(Error::config(
            "data.samples_per_frame",
            format!(
                "corpus uses {} samples per frame, model expects {}",
                corpus.config.samples_per_frame, cfg.model.samples_per_frame
            ),
        ));
    }
    if corpus.config.vocab_size() > cfg.model.vocab_size {
        return Err(Error::config(
            "model.vocab_size",
            format!("corpus vocabulary {} exceeds model vocabulary", corpus.config.vocab_size()),
        ));
    }
    if corpus.config.sample_rate != cfg.mel.sample_rate {
        return Err(Error::config("mel.sample_rate", "differs from the corpus sample rate"));
    }
    Ok(())
}

/// Reads `path` if given; otherwise regenerates the configured corpus in
/// memory (generation is deterministic in the seed).
pub fn load_or_generate_corpus(cfg: &RunConfig, path: Option<&Path>) -> Result<Corpus> {
    let corpus = match path {
        Some(p) => read_corpus(p)?,
        None => generate_corpus(&cfg.data, cfg.seed)?,
    };
    check_corpus(cfg, &corpus)?;
    Ok(corpus)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub corpus: Option<PathBuf>,
    pub resume: bool,
    pub force: bool,
    /// Skip the final evaluation report.
    pub skip_eval: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub out: PathBuf,
    pub final_step: u64,
    pub last: Option<StepMetrics>,
    pub report: Option<EvalReport>,
}

fn checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("step-{step:08}.ckpt"))
}

fn save_checkpoint<T: Real>(out: &Path, model: &Model, state: &phonodiff_core::train::TrainState<T>) -> Result<()> {
    checkpoint::save(&checkpoint_path(out, state.step), model, state)?;
    checkpoint::save(&out.join(LATEST_CHECKPOINT), model, state)
}

pub fn eval_options(cfg: &RunConfig) -> EvalOptions {
    EvalOptions {
        steps_list: cfg.train.eval_steps.clone(),
        utterances: cfg.train.eval_utterances,
        seed: rng::derive_seed(cfg.seed, "evaluate", 0),
        ..EvalOptions::default()
    }
}

/// Trains per `cfg` into `cfg.out`: periodic checkpoints, metrics CSV and
/// a final evaluation report.
pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, opts),
        Precision::F64 => train_typed::<f64>(cfg, opts),
    }
}

fn train_typed<T: Real>(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    let out = cfg.out.clone();
    let latest = out.join(LATEST_CHECKPOINT);
    let metrics_path = out.join(METRICS_FILE);
    let has_run = latest.exists() || metrics_path.exists();
    if has_run && !opts.resume && !opts.force {
        return Err(Error::config(
            "--out",
            format!("{} already holds a run; pass --resume to continue or --force to overwrite", out.display()),
        ));
    }
    if opts.resume && !latest.exists() {
        return Err(Error::config("--resume", format!("no checkpoint at {}", latest.display())));
    }
    let corpus = load_or_generate_corpus(cfg, opts.corpus.as_deref())?;
    let mel_cfg = cfg.model.multitask.then_some(&cfg.mel);
    let examples = corpus
        .train
        .iter()
        .map(|u| example_from::<T>(u, mel_cfg))
        .collect::<Result<Vec<Example<T>>>>()?;
    let schedule = cfg.schedule.build()?;

    if opts.force && !opts.resume {
        for p in [&latest, &metrics_path, &out.join(EVAL_FILE)] {
            if p.exists() {
                std::fs::remove_file(p)?;
            }
        }
        if out.join(CHECKPOINT_DIR).exists() {
            std::fs::remove_dir_all(out.join(CHECKPOINT_DIR))?;
        }
    }
    std::fs::create_dir_all(out.join(CHECKPOINT_DIR))?;
    std::fs::write(out.join(CONFIG_FILE), cfg.to_toml())?;

    let (model, mut trainer, mut log) = if opts.resume {
        let (model, state) = checkpoint::load::<T>(&latest)?;
        if model.config != cfg.model {
            return Err(Error::config("model", "differs from the checkpoint being resumed"));
        }
        info!("resuming at step {}", state.step);
        let step = state.step;
        let trainer = Trainer::new(model.clone(), state.params.clone(), schedule.clone(), cfg.train.clone(), cfg.seed, examples)?
            .with_state(state);
        (model, trainer, MetricsLog::resume(&metrics_path, step)?)
    } else {
        let (model, params) = Model::from_seed::<T>(cfg.model.clone(), rng::derive_seed(cfg.seed, "init", 0))?;
        let trainer = Trainer::new(model.clone(), params, schedule.clone(), cfg.train.clone(), cfg.seed, examples)?;
        save_checkpoint(&out, &model, &trainer.state)?;
        (model, trainer, MetricsLog::create(&metrics_path)?)
    };

    let mut last = None;
    while trainer.state.step < cfg.train.steps {
        let m = trainer.train_step()?;
        log.append(&m)?;
        if m.step % 100 == 0 {
            info!("step {} eps {:.4} dur {:.3} mel {:.3} |g| {:.3}", m.step, m.eps_loss, m.dur_loss, m.mel_loss, m.grad_norm);
        }
        last = Some(m);
        let every = cfg.train.checkpoint_every;
        if every > 0 && trainer.state.step % every == 0 {
            log.flush()?;
            save_checkpoint(&out, &model, &trainer.state)?;
        }
    }
    log.flush()?;
    save_checkpoint(&out, &model, &trainer.state)?;

    let report = if cfg.train.steps == 0 || opts.skip_eval {
        None
    } else {
        let r = evaluate(&model, &trainer.state.ema, &corpus.holdout, &schedule, &cfg.mel, &eval_options(cfg))?;
        std::fs::write(out.join(EVAL_FILE), r.to_json())?;
        Some(r)
    };
    Ok(TrainOutcome {
        out,
        final_step: trainer.state.step,
        last,
        report,
    })
}

/// Evaluates a checkpoint on the holdout split.
pub fn evaluate_checkpoint(cfg: &RunConfig, checkpoint_path: &Path, corpus: Option<&Path>) -> Result<EvalReport> {
    cfg.validate()?;
    let corpus = load_or_generate_corpus(cfg, corpus)?;
    let schedule = cfg.schedule.build()?;
    match cfg.precision {
        Precision::F32 => {
            let (model, st) = checkpoint::load::<f32>(checkpoint_path)?;
            evaluate(&model, &st.ema, &corpus.holdout, &schedule, &cfg.mel, &eval_options(cfg))
        }
        Precision::F64 => {
            let (model, st) = checkpoint::load::<f64>(checkpoint_path)?;
            evaluate(&model, &st.ema, &corpus.holdout, &schedule, &cfg.mel, &eval_options(cfg))
        }
    }
}

/// Comma- or space-separated token ids.
pub fn parse_tokens(text: &str) -> Result<Vec<usize>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::config("--tokens", format!("`{s}` is not a token id")))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub enum SynthSource {
    Tokens(Vec<usize>),
    /// Index into the holdout split.
    Holdout(usize),
}

#[derive(Debug, Clone)]
pub struct SynthRequest {
    pub checkpoint: PathBuf,
    pub source: SynthSource,
    pub steps: Vec<usize>,
    pub out: PathBuf,
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthFile {
    pub steps: usize,
    pub path: PathBuf,
    pub samples: usize,
    /// Log-mel L2 to the holdout reference, when synthesizing one.
    pub distance_to_reference: Option<f64>,
    /// Log-mel L2 to the output with the most steps.
    pub distance_to_full: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSidecar {
    pub tokens: Vec<usize>,
    pub predicted_durations: Vec<f64>,
    pub seed: u64,
    pub files: Vec<SynthFile>,
}

fn wav_path(out: &Path, steps: usize, many: bool) -> PathBuf {
    if !many {
        return out.to_path_buf();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("synth");
    out.with_file_name(format!("{stem}.steps{steps}.wav"))
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("distances.json")
}

/// Synthesizes with predicted durations over the full frame sequence and
/// writes one WAV per step count plus a distances sidecar.
pub fn synthesize(cfg: &RunConfig, req: &SynthRequest) -> Result<SynthSidecar> {
    cfg.validate()?;
    if req.steps.is_empty() || req.steps.contains(&0) {
        return Err(Error::config("--steps", "every step count must be ≥ 1"));
    }
    match cfg.precision {
        Precision::F32 => synth_typed::<f32>(cfg, req),
        Precision::F64 => synth_typed::<f64>(cfg, req),
    }
}

fn synth_typed<T: Real>(cfg: &RunConfig, req: &SynthRequest) -> Result<SynthSidecar> {
    let (model, state) = checkpoint::load::<T>(&req.checkpoint)?;
    let (tokens, reference) = match &req.source {
        SynthSource::Tokens(t) => (t.clone(), None),
        SynthSource::Holdout(i) => {
            let corpus = load_or_generate_corpus(cfg, req.corpus.as_deref())?;
            let u = corpus
                .holdout
                .get(*i)
                .ok_or_else(|| Error::config("--index", format!("holdout has {} utterances", corpus.holdout.len())))?
                .clone();
            (u.tokens.clone(), Some(u))
        }
    };
    if let Some(&bad) = tokens.iter().find(|&&t| t >= model.config.vocab_size) {
        return Err(Error::UnknownToken {
            id: bad,
            vocab: model.config.vocab_size,
        });
    }
    let schedule = cfg.schedule.build()?;
    let mut steps = req.steps.clone();
    steps.sort_unstable();
    steps.dedup();
    let many = steps.len() > 1;
    if let Some(dir) = req.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut waves = Vec::new();
    let mut predicted = Vec::new();
    for &s in &steps {
        let sched = schedule.inference_schedule(s)?;
        let mut r = rng::stream(cfg.seed, "synth", s as u64);
        let syn = model.synthesize(&state.ema, &tokens, None, &sched, &mut r)?;
        predicted = syn.predicted_durations.iter().map(|d| d.f64()).collect();
        let wave: Vec<f64> = syn.waveform.iter().map(|v| v.f64().clamp(-1.0, 1.0)).collect();
        let path = wav_path(&req.out, s, many);
        crate::wav::write_wav(&path, &wave, cfg.data.sample_rate)?;
        info!("wrote {} ({} samples, {s} steps)", path.display(), wave.len());
        waves.push((s, path, wave));
    }
    let full: Vec<f32> = waves.last().expect("at least one").2.iter().map(|&v| v as f32).collect();
    let files = waves
        .into_iter()
        .map(|(s, path, wave)| {
            Ok(SynthFile {
                steps: s,
                samples: wave.len(),
                distance_to_reference: match &reference {
                    Some(u) => Some(waveform_distance(&wave, &u.waveform, &cfg.mel)?),
                    None => None,
                },
                distance_to_full: waveform_distance(&wave, &full, &cfg.mel)?,
                path,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sidecar = SynthSidecar {
        tokens,
        predicted_durations: predicted,
        seed: cfg.seed,
        files,
    };
    std::fs::write(
        sidecar_path(&req.out),
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )?;
    Ok(sidecar)
}
