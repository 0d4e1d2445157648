//! Optimisation loop: Adam, gradient clipping, batched training steps,
//! metrics logging and evaluation.

mod eval;
mod metrics;

pub use eval::{evaluate, noise_baseline, waveform_distance, EvalOptions, EvalReport, StepRow};
pub use metrics::{read_metrics, MetricsLog, METRICS_HEADER};

use std::ops::Range;
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{frame_aligned_log_mel, MelConfig, Utterance};
use crate::model::{Example, LossBreakdown, LossWeights, Model};
use crate::nn::{BatchNormUpdate, GradStore, ParamStore};
use crate::{rng, Error, NoiseSchedule, Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub warmup_steps: u64,
    pub checkpoint_every: u64,
    /// Write elapsed seconds into the metrics CSV; with `false` the column
    /// holds 0 so that reruns produce identical files.
    pub log_wallclock: bool,
    pub duration_weight: f64,
    pub mel_weight: f64,
    /// Decay of the parameter moving average used for evaluation and
    /// synthesis; 0 makes the average track the raw parameters.
    pub ema_decay: f64,
    /// Step counts evaluated after training.
    pub eval_steps: Vec<usize>,
    /// Holdout utterances used by evaluation (0 = all).
    pub eval_utterances: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 10_000,
            batch_size: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            warmup_steps: 0,
            checkpoint_every: 500,
            log_wallclock: true,
            duration_weight: 0.1,
            mel_weight: 1.0,
            ema_decay: 0.999,
            eval_steps: vec![5, 100],
            eval_utterances: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, schedule_steps: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("train.learning_rate", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("train.beta1", "Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("train.adam_eps", "must be positive"));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::config("train.clip_norm", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::config("train.ema_decay", "must lie in [0, 1)"));
        }
        if let Some(&s) = self.eval_steps.iter().find(|&&s| s == 0 || s > schedule_steps) {
            return Err(Error::config(
                "train.eval_steps",
                format!("{s} must lie in [1, {schedule_steps}]"),
            ));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            duration: self.duration_weight,
            mel: self.mel_weight,
        }
    }

    /// Learning rate at `step`, with optional linear warmup.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            self.learning_rate
        } else {
            self.learning_rate * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

/// Adam first and second moments.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: GradStore<T>,
    pub v: GradStore<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        AdamState {
            m: GradStore::zeros_like(params),
            v: GradStore::zeros_like(params),
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step over the trainable parameters.
pub fn adam_update<T: Real>(
    params: &mut ParamStore<T>,
    grads: &GradStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
    hyper: AdamHyper,
) -> Result<()> {
    if let Some(i) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {}", params.entries()[i].name)));
    }
    state.t += 1;
    let c1 = 1.0 - hyper.beta1.powf(state.t as f64);
    let c2 = 1.0 - hyper.beta2.powf(state.t as f64);
    let (b1, b2) = (T::of(hyper.beta1), T::of(hyper.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - hyper.beta1), T::of(1.0 - hyper.beta2));
    let (c1, c2) = (T::of(c1), T::of(c2));
    let (lr, eps) = (T::of(lr), T::of(hyper.eps));
    let ids: Vec<_> = params
        .entries()
        .iter()
        .filter(|e| e.trainable)
        .map(|e| params.id(&e.name).expect("registered"))
        .collect();
    for id in ids {
        let g = grads.get(id);
        let m = state.m.get_mut(id);
        ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| *m = b1 * *m + one_b1 * g);
        let v = state.v.get_mut(id);
        ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| *v = b2 * *v + one_b2 * g * g);
        let (m, v) = (state.m.get(id), state.v.get(id));
        ndarray::Zip::from(params.get_mut(id))
            .and(m)
            .and(v)
            .for_each(|p, &m, &v| *p -= lr * (m / c1) / ((v / c2).sqrt() + eps));
    }
    Ok(())
}

/// Moves every tensor of `ema` (buffers included) towards `params`. The
/// decay is capped at (1 + t) / (10 + t) so early averages are not
/// dominated by the initialisation.
pub fn update_ema<T: Real>(ema: &mut ParamStore<T>, params: &ParamStore<T>, decay: f64, t: u64) {
    let d = decay.min((1 + t) as f64 / (10 + t) as f64);
    let (d, one_d) = (T::of(d), T::of(1.0 - d));
    let ids: Vec<_> = params.entries().iter().map(|e| params.id(&e.name).expect("registered")).collect();
    for id in ids {
        ndarray::Zip::from(ema.get_mut(id))
            .and(params.get(id))
            .for_each(|a, &p| *a = d * *a + one_d * p);
    }
}

/// Scales `grads` so the global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut GradStore<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}

/// Converts a corpus utterance into a training example; the mel target is
/// computed over the whole utterance when `mel` is given.
pub fn example_from<T: Real>(u: &Utterance, mel: Option<&MelConfig>) -> Result<Example<T>> {
    let mel = match mel {
        Some(cfg) => {
            let wave: Vec<f64> = u.waveform.iter().map(|&v| v as f64).collect();
            Some(frame_aligned_log_mel(&wave, cfg)?.mapv(T::of))
        }
        None => None,
    };
    Ok(Example {
        tokens: u.tokens.clone(),
        durations: u.durations.iter().map(|&d| T::of(d as f64)).collect(),
        waveform: u.waveform.iter().map(|&v| T::of(v as f64)).collect(),
        mel,
    })
}

#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub step: u64,
    pub params: ParamStore<T>,
    pub adam: AdamState<T>,
    pub seed: u64,
    /// Exponential moving average of the ε loss (0.99 decay).
    pub eps_ema: f64,
    /// Moving average of the parameters; the weights to synthesize with.
    pub ema: ParamStore<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub eps_loss: f64,
    pub dur_loss: f64,
    pub mel_loss: f64,
    pub total: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub wallclock: f64,
}

/// Summed gradients and statistics over part of a batch.
pub struct BatchGrads<T> {
    pub grads: GradStore<T>,
    pub losses: LossBreakdown,
    pub norm_updates: Vec<BatchNormUpdate<T>>,
    pub count: usize,
}

impl<T: Real> BatchGrads<T> {
    pub fn merge(&mut self, other: BatchGrads<T>) {
        self.grads.accumulate(&other.grads);
        add_losses(&mut self.losses, &other.losses);
        sum_norm_updates(&mut self.norm_updates, other.norm_updates);
        self.count += other.count;
    }
}

fn add_losses(a: &mut LossBreakdown, b: &LossBreakdown) {
    a.eps += b.eps;
    a.duration += b.duration;
    a.mel += b.mel;
    a.total += b.total;
}

fn sum_norm_updates<T: Real>(acc: &mut Vec<BatchNormUpdate<T>>, new: Vec<BatchNormUpdate<T>>) {
    if acc.is_empty() {
        *acc = new;
        return;
    }
    for (a, b) in acc.iter_mut().zip(new) {
        a.mean += &b.mean;
        a.var += &b.var;
    }
}

pub struct Trainer<T> {
    pub model: Model,
    pub state: TrainState<T>,
    pub schedule: NoiseSchedule,
    pub config: TrainConfig,
    examples: Vec<Example<T>>,
    started: Instant,
}

impl<T: Real> Trainer<T> {
    pub fn new(
        model: Model,
        params: ParamStore<T>,
        schedule: NoiseSchedule,
        config: TrainConfig,
        seed: u64,
        examples: Vec<Example<T>>,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Degenerate("training set is empty".into()));
        }
        let adam = AdamState::new(&params);
        Ok(Trainer {
            model,
            state: TrainState {
                step: 0,
                ema: params.clone(),
                params,
                adam,
                seed,
                eps_ema: 0.0,
            },
            schedule,
            config,
            examples,
            started: Instant::now(),
        })
    }

    /// Replaces the state, e.g. after loading a checkpoint.
    pub fn with_state(mut self, state: TrainState<T>) -> Self {
        self.state = state;
        self
    }

    pub fn examples(&self) -> &[Example<T>] {
        &self.examples
    }

    /// Examples drawn for `step`: distinct indices when the set is large
    /// enough, otherwise with replacement.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let mut r = rng::stream(self.state.seed, "batch", step);
        let n = self.examples.len();
        let b = self.config.batch_size;
        if b <= n {
            sample(&mut r, n, b).into_vec()
        } else {
            use rand::Rng;
            (0..b).map(|_| r.random_range(0..n)).collect()
        }
    }

    /// Summed gradients for batch positions `positions` at the current
    /// step. Each position owns a stream derived from `(seed, step,
    /// position)`, so any sharding of the batch sums to the same result.
    pub fn batch_gradients(&self, positions: Range<usize>) -> Result<BatchGrads<T>> {
        let step = self.state.step;
        let indices = self.batch_indices(step);
        let step_seed = rng::derive_seed(self.state.seed, "step", step);
        let weights = self.config.loss_weights();
        let mut acc = BatchGrads {
            grads: GradStore::zeros_like(&self.state.params),
            losses: LossBreakdown::default(),
            norm_updates: Vec::new(),
            count: 0,
        };
        for pos in positions {
            let mut r = rng::stream(step_seed, "utterance", pos as u64);
            let ex = &self.examples[indices[pos]];
            let out = self.model.train_pass(&self.state.params, ex, &self.schedule, weights, &mut r)?;
            if !out.losses.total.is_finite() {
                let name = match out.grads.first_non_finite() {
                    Some(i) => self.state.params.entries()[i].name.clone(),
                    None => "loss".into(),
                };
                return Err(Error::NonFinite(format!(
                    "step {step}, batch position {pos}: loss {:?}, first non-finite tensor {name}",
                    out.losses
                )));
            }
            acc.merge(BatchGrads {
                grads: out.grads,
                losses: out.losses,
                norm_updates: out.norm_updates,
                count: 1,
            });
        }
        Ok(acc)
    }

    /// Averages accumulated gradients, clips, updates and advances the step.
    pub fn apply(&mut self, mut batch: BatchGrads<T>) -> Result<StepMetrics> {
        if batch.count == 0 {
            return Err(Error::Degenerate("empty batch".into()));
        }
        let n = batch.count as f64;
        batch.grads.scale(T::of(1.0 / n));
        if let Some(i) = batch.grads.first_non_finite() {
            return Err(Error::NonFinite(format!(
                "step {}: gradient of {}",
                self.state.step,
                self.state.params.entries()[i].name
            )));
        }
        let grad_norm = clip_grad_norm(&mut batch.grads, self.config.clip_norm);
        let lr = self.config.lr_at(self.state.step);
        let hyper = AdamHyper {
            beta1: self.config.beta1,
            beta2: self.config.beta2,
            eps: self.config.adam_eps,
        };
        adam_update(&mut self.state.params, &batch.grads, &mut self.state.adam, lr, hyper)?;
        let inv = T::of(1.0 / n);
        for mut u in batch.norm_updates {
            u.mean.mapv_inplace(|v| v * inv);
            u.var.mapv_inplace(|v| v * inv);
            u.apply(&mut self.state.params);
        }
        update_ema(&mut self.state.ema, &self.state.params, self.config.ema_decay, self.state.step);
        let losses = LossBreakdown {
            eps: batch.losses.eps / n,
            duration: batch.losses.duration / n,
            mel: batch.losses.mel / n,
            total: batch.losses.total / n,
        };
        self.state.eps_ema = if self.state.step == 0 {
            losses.eps
        } else {
            0.99 * self.state.eps_ema + 0.01 * losses.eps
        };
        let metrics = StepMetrics {
            step: self.state.step,
            eps_loss: losses.eps,
            dur_loss: losses.duration,
            mel_loss: losses.mel,
            total: losses.total,
            lr,
            grad_norm,
            wallclock: if self.config.log_wallclock {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        self.state.step += 1;
        Ok(metrics)
    }

    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let batch = self.batch_gradients(0..self.config.batch_size)?;
        self.apply(batch)
    }
}
