use serde::{Deserialize, Serialize};

use super::example_from;
use crate::data::{frame_aligned_log_mel, log_mel_distance, MelConfig, Utterance};
use crate::model::Model;
use crate::nn::ParamStore;
use crate::{rng, NoiseSchedule, Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub steps_list: Vec<usize>,
    /// Holdout utterances to use (0 = all).
    pub utterances: usize,
    pub seed: u64,
    /// Random windows per utterance for the ε validation loss.
    pub validation_draws: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            steps_list: vec![5, 100],
            utterances: 0,
            seed: 0,
            validation_draws: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub steps: usize,
    /// Mean log-mel L2 with ground-truth durations.
    pub log_mel_teacher: f64,
    /// Mean log-mel L2 with predicted durations (common frame prefix).
    pub log_mel_predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub utterances: usize,
    pub eps_validation_loss: f64,
    /// Per-token MSE of predicted durations.
    pub duration_mse: f64,
    /// MSE of predicting every token with the mean holdout duration.
    pub duration_mean_baseline: f64,
    /// Mean absolute error of the total predicted length, in frames.
    pub total_duration_error: f64,
    /// Mean log-mel L2 between clipped N(0, 1) noise and the references.
    pub noise_baseline: f64,
    pub rows: Vec<StepRow>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn row(&self, steps: usize) -> Option<&StepRow> {
        self.rows.iter().find(|r| r.steps == steps)
    }
}

fn clipped_f64<T: Real>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| v.f64().clamp(-1.0, 1.0)).collect()
}

/// Log-mel distance between a waveform (clipped to [−1, 1]) and a reference.
pub fn waveform_distance<T: Real>(wave: &[T], reference: &[f32], mel: &MelConfig) -> Result<f64> {
    let a = frame_aligned_log_mel(&clipped_f64(wave), mel)?;
    let r: Vec<f64> = reference.iter().map(|&v| v as f64).collect();
    let b = frame_aligned_log_mel(&r, mel)?;
    log_mel_distance(&a, &b)
}

/// Mean log-mel distance of clipped standard-normal noise to each reference.
pub fn noise_baseline(holdout: &[Utterance], mel: &MelConfig, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for (i, u) in holdout.iter().enumerate() {
        let mut r = rng::stream(seed, "noise-baseline", i as u64);
        let noise: Vec<f64> = rng::normal_vec(&mut r, u.waveform.len());
        total += waveform_distance(&noise, &u.waveform, mel)?;
    }
    Ok(total / holdout.len().max(1) as f64)
}

/// Objective evaluation on holdout utterances; deterministic given
/// `opts.seed`.
pub fn evaluate<T: Real>(
    model: &Model,
    params: &ParamStore<T>,
    holdout: &[Utterance],
    schedule: &NoiseSchedule,
    mel: &MelConfig,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let n = if opts.utterances == 0 {
        holdout.len()
    } else {
        opts.utterances.min(holdout.len())
    };
    let utts = &holdout[..n];

    let mut eps_total = 0.0;
    let mut eps_count = 0usize;
    let mut sq_err = 0.0;
    let mut tokens = 0usize;
    let mut total_err = 0.0;
    let all_durations: Vec<f64> = utts.iter().flat_map(|u| u.durations.iter().map(|&d| d as f64)).collect();
    let mean = all_durations.iter().sum::<f64>() / all_durations.len().max(1) as f64;
    let baseline = all_durations.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / all_durations.len().max(1) as f64;

    for (i, u) in utts.iter().enumerate() {
        let ex = example_from::<T>(u, None)?;
        let mut r = rng::stream(opts.seed, "eval-eps", i as u64);
        for _ in 0..opts.validation_draws {
            eps_total += model.validation_eps_loss(params, &ex, schedule, &mut r)?;
            eps_count += 1;
        }
        let cond = model.condition(params, &u.tokens, None)?;
        for (p, &t) in cond.predicted_durations.iter().zip(&u.durations) {
            sq_err += (p.f64() - t as f64).powi(2);
        }
        tokens += u.tokens.len();
        let pred_total: f64 = cond.predicted_durations.iter().map(|d| d.f64()).sum();
        total_err += (pred_total - u.total_frames() as f64).abs();
    }

    let mut rows = Vec::new();
    for &steps in &opts.steps_list {
        let sched = schedule.inference_schedule(steps)?;
        let (mut teacher, mut predicted) = (0.0, 0.0);
        for (i, u) in utts.iter().enumerate() {
            let durations: Vec<T> = u.durations.iter().map(|&d| T::of(d as f64)).collect();
            let mut r = rng::stream(rng::derive_seed(opts.seed, "eval-teacher", steps as u64), "utterance", i as u64);
            let syn = model.synthesize(params, &u.tokens, Some(&durations), &sched, &mut r)?;
            teacher += waveform_distance(&syn.waveform, &u.waveform, mel)?;
            let mut r = rng::stream(rng::derive_seed(opts.seed, "eval-predicted", steps as u64), "utterance", i as u64);
            let syn = model.synthesize(params, &u.tokens, None, &sched, &mut r)?;
            predicted += waveform_distance(&syn.waveform, &u.waveform, mel)?;
        }
        rows.push(StepRow {
            steps,
            log_mel_teacher: teacher / n.max(1) as f64,
            log_mel_predicted: predicted / n.max(1) as f64,
        });
    }

    Ok(EvalReport {
        utterances: n,
        eps_validation_loss: eps_total / eps_count.max(1) as f64,
        duration_mse: sq_err / tokens.max(1) as f64,
        duration_mean_baseline: baseline,
        total_duration_error: total_err / n.max(1) as f64,
        noise_baseline: noise_baseline(utts, mel, opts.seed)?,
        rows,
    })
}
