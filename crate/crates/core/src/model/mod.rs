//! Full pipeline: encoder, duration/range predictor, Gaussian resampler,
//! block masking, ε decoder and the optional mel head.

mod decoder;
mod duration;
mod encoder;
mod masking;
mod mel_head;

pub use decoder::{Decoder, DecoderCache};
pub use duration::{DurationCache, DurationOutput, DurationPredictor};
pub use encoder::{Encoder, EncoderCache, EncoderOutput};
pub use masking::{mask_blocks, masked_probability};
pub use mel_head::{mel_loss, mel_loss_grad, MelHead, MelHeadCache};

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::align::{self, duration_loss, duration_loss_grad, gaussian_upsample, gaussian_upsample_backward, Alignment};
use crate::diffusion::{self, epsilon_loss, epsilon_loss_grad, forward_diffuse};
use crate::nn::{BatchNormUpdate, GradStore, LayerKind, LayerSpec, ParamStore};
use crate::{rng, Error, FrameMatrix, NoiseSchedule, Real, Result, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub channels: usize,
    pub factor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub encoder_channels: Vec<usize>,
    pub encoder_kernel: usize,
    pub lstm_units: usize,
    pub dropout: f64,
    pub zoneout: f64,
    pub batchnorm_momentum: f64,
    pub duration_channels: usize,
    pub min_range: f64,
    pub init_duration: f64,
    pub init_range: f64,
    pub decoder_input_channels: usize,
    pub ublocks: Vec<BlockConfig>,
    pub wave_input_channels: usize,
    /// Output channels of each DBlock, in the order they are applied.
    pub dblock_channels: Vec<usize>,
    pub ublock_dilations: [usize; 4],
    pub dblock_dilations: [usize; 2],
    pub samples_per_frame: usize,
    pub window_frames: usize,
    pub masking: bool,
    pub mask_block_len: usize,
    pub mask_count: usize,
    pub multitask: bool,
    pub mel_bins: usize,
    pub mel_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        ModelConfig {
            vocab_size: 14,
            embedding_dim: 32,
            encoder_channels: vec![32, 32, 32],
            encoder_kernel: 5,
            lstm_units: 64,
            dropout: 0.1,
            zoneout: 0.1,
            batchnorm_momentum: 0.99,
            duration_channels: 32,
            min_range: 0.1,
            init_duration: 6.5,
            init_range: 2.0,
            decoder_input_channels: 64,
            ublocks: vec![
                BlockConfig { channels: 64, factor: 5 },
                BlockConfig { channels: 48, factor: 2 },
                BlockConfig { channels: 32, factor: 2 },
                BlockConfig { channels: 32, factor: 2 },
            ],
            wave_input_channels: 16,
            dblock_channels: vec![32, 32, 64],
            ublock_dilations: [1, 2, 4, 8],
            dblock_dilations: [1, 2],
            samples_per_frame: 40,
            window_frames: 16,
            masking: false,
            mask_block_len: 32,
            mask_count: 2,
            multitask: false,
            mel_bins: 32,
            mel_channels: 32,
        }
    }

    /// Layer widths and factors of the full-size decoder (300× upsampling).
    pub fn full_scale() -> Self {
        ModelConfig {
            embedding_dim: 512,
            encoder_channels: vec![512, 512, 512],
            lstm_units: 256,
            duration_channels: 256,
            decoder_input_channels: 768,
            ublocks: vec![
                BlockConfig { channels: 512, factor: 5 },
                BlockConfig { channels: 512, factor: 5 },
                BlockConfig { channels: 256, factor: 3 },
                BlockConfig { channels: 128, factor: 2 },
                BlockConfig { channels: 128, factor: 2 },
            ],
            wave_input_channels: 32,
            dblock_channels: vec![128, 128, 256, 512],
            samples_per_frame: 300,
            window_frames: 64,
            mel_bins: 128,
            mel_channels: 128,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.vocab_size", self.vocab_size),
            ("model.embedding_dim", self.embedding_dim),
            ("model.lstm_units", self.lstm_units),
            ("model.duration_channels", self.duration_channels),
            ("model.decoder_input_channels", self.decoder_input_channels),
            ("model.samples_per_frame", self.samples_per_frame),
            ("model.window_frames", self.window_frames),
            ("model.mel_bins", self.mel_bins),
            ("model.mel_channels", self.mel_channels),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(Error::config("model.encoder_channels", "needs positive widths"));
        }
        if self.encoder_kernel.is_multiple_of(2) {
            return Err(Error::config("model.encoder_kernel", "must be odd"));
        }
        if self.ublocks.is_empty() {
            return Err(Error::config("model.ublocks", "needs at least one block"));
        }
        for (i, b) in self.ublocks.iter().enumerate() {
            if b.channels == 0 || b.factor == 0 {
                return Err(Error::config(format!("model.ublocks[{i}]"), "channels and factor must be positive"));
            }
        }
        let product: usize = self.ublocks.iter().map(|b| b.factor).product();
        if product != self.samples_per_frame {
            return Err(Error::config(
                "model.ublocks",
                format!("factor product {product} differs from samples_per_frame {}", self.samples_per_frame),
            ));
        }
        if self.dblock_channels.len() + 1 != self.ublocks.len() {
            return Err(Error::config(
                "model.dblock_channels",
                format!("expected {} entries (one fewer than ublocks)", self.ublocks.len() - 1),
            ));
        }
        if self.wave_input_channels == 0 || !self.wave_input_channels.is_multiple_of(2) {
            return Err(Error::config("model.wave_input_channels", "must be even and positive"));
        }
        if let Some(i) = self.dblock_channels.iter().position(|&c| c == 0 || c % 2 != 0) {
            return Err(Error::config(format!("model.dblock_channels[{i}]"), "must be even and positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("model.dropout", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.zoneout) {
            return Err(Error::config("model.zoneout", "must lie in [0, 1)"));
        }
        if !(self.min_range > 0.0) {
            return Err(Error::config("model.min_range", "must be positive"));
        }
        Ok(())
    }
}

/// Relative weights of the auxiliary losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub duration: f64,
    pub mel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { duration: 0.1, mel: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub eps: f64,
    pub duration: f64,
    pub mel: f64,
    pub total: f64,
}

/// One utterance prepared for training.
#[derive(Debug, Clone)]
pub struct Example<T> {
    pub tokens: Vec<usize>,
    pub durations: Vec<T>,
    pub waveform: Vec<T>,
    /// Frame-aligned log-mel target; required when the mel head is enabled.
    pub mel: Option<Array2<T>>,
}

pub struct PassOutput<T> {
    pub losses: LossBreakdown,
    pub grads: GradStore<T>,
    pub norm_updates: Vec<BatchNormUpdate<T>>,
    pub window: WindowSpec,
    pub sqrt_alpha_bar: f64,
}

/// Conditioning produced from tokens in evaluation mode.
#[derive(Debug, Clone)]
pub struct Conditioning<T> {
    pub hiddens: Array2<T>,
    pub predicted_durations: Vec<T>,
    pub durations: Vec<T>,
    pub ranges: Vec<T>,
    pub frames: FrameMatrix<T>,
}

#[derive(Debug, Clone)]
pub struct Synthesis<T> {
    pub waveform: Vec<T>,
    pub durations: Vec<T>,
    pub predicted_durations: Vec<T>,
    pub total_frames: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub duration: DurationPredictor,
    pub decoder: Decoder,
    pub mel_head: Option<MelHead>,
}

impl Model {
    pub fn new<T: Real>(config: ModelConfig, rng: &mut impl Rng) -> Result<(Model, ParamStore<T>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::new(
            &mut store,
            config.vocab_size,
            config.embedding_dim,
            &config.encoder_channels,
            config.encoder_kernel,
            config.lstm_units,
            config.dropout,
            config.zoneout,
            config.batchnorm_momentum,
            rng,
        );
        let duration = DurationPredictor::new(
            &mut store,
            encoder.output_dim(),
            config.duration_channels,
            config.min_range,
            config.init_duration,
            config.init_range,
            rng,
        );
        let decoder = Decoder::new(&mut store, &config, rng);
        let mel_head = config.multitask.then(|| {
            MelHead::new(
                &mut store,
                encoder.output_dim(),
                config.mel_channels,
                config.mel_bins,
                config.ublock_dilations,
                rng,
            )
        });
        Ok((
            Model {
                config,
                encoder,
                duration,
                decoder,
                mel_head,
            },
            store,
        ))
    }

    /// Deterministic construction from a seed.
    pub fn from_seed<T: Real>(config: ModelConfig, seed: u64) -> Result<(Model, ParamStore<T>)> {
        Model::new(config, &mut rng::stream(seed, "init", 0))
    }

    /// Layer manifest stored alongside checkpoints.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let c = &self.config;
        let mut specs = vec![LayerSpec::new("encoder.embedding", LayerKind::Embedding, c.embedding_dim)];
        for (i, &ch) in c.encoder_channels.iter().enumerate() {
            specs.push(LayerSpec::new(format!("encoder.conv{i}"), LayerKind::Conv1d, ch).kernel(c.encoder_kernel));
            specs.push(LayerSpec::new(format!("encoder.norm{i}"), LayerKind::Batchnorm, ch).activation("relu"));
            specs.push(LayerSpec::new(format!("encoder.dropout{i}"), LayerKind::Dropout, ch));
        }
        specs.push(LayerSpec::new("encoder.rnn", LayerKind::Birnn, 2 * c.lstm_units));
        specs.push(
            LayerSpec::new("duration.conv1", LayerKind::Conv1d, c.duration_channels)
                .kernel(3)
                .activation("relu"),
        );
        specs.push(
            LayerSpec::new("duration.conv2", LayerKind::Conv1d, c.duration_channels)
                .kernel(3)
                .activation("relu"),
        );
        specs.push(LayerSpec::new("duration.proj", LayerKind::Conv1d, 2).kernel(1).activation("softplus"));
        specs.push(LayerSpec::new("decoder.frame_input", LayerKind::Conv1d, c.decoder_input_channels).kernel(3));
        specs.push(LayerSpec::new("decoder.wave_input", LayerKind::Conv1d, c.wave_input_channels).kernel(5));
        let k = c.ublocks.len();
        for (j, &ch) in c.dblock_channels.iter().enumerate() {
            specs.push(
                LayerSpec::new(format!("decoder.dblock{j}"), LayerKind::Dblock, ch)
                    .factor(c.ublocks[k - 1 - j].factor)
                    .activation("leaky_relu"),
            );
        }
        for (i, b) in c.ublocks.iter().enumerate() {
            specs.push(LayerSpec::new(format!("decoder.film{i}"), LayerKind::Film, b.channels).kernel(3));
            specs.push(
                LayerSpec::new(format!("decoder.ublock{i}"), LayerKind::Ublock, b.channels)
                    .factor(b.factor)
                    .activation("leaky_relu"),
            );
        }
        specs.push(LayerSpec::new("decoder.output", LayerKind::Conv1d, 1).kernel(3));
        if c.multitask {
            specs.push(LayerSpec::new("mel_head.ublock", LayerKind::Ublock, c.mel_channels).factor(1));
            specs.push(LayerSpec::new("mel_head.proj", LayerKind::Conv1d, c.mel_bins).kernel(1));
        }
        specs
    }

    /// Predicted noise for a noisy waveform segment and its conditioning frames.
    pub fn eps_theta<T: Real>(
        &self,
        p: &ParamStore<T>,
        y_noisy: &[T],
        frames: ArrayView2<T>,
        sqrt_alpha_bar: f64,
    ) -> Result<Vec<T>> {
        Ok(self.decoder.forward(p, y_noisy, frames, sqrt_alpha_bar)?.0)
    }

    /// Evaluation-mode conditioning frames. With `teacher` durations the
    /// resampler uses them in place of the predicted ones; encoder outputs
    /// are the same either way.
    pub fn condition<T: Real>(&self, p: &ParamStore<T>, tokens: &[usize], teacher: Option<&[T]>) -> Result<Conditioning<T>> {
        // Evaluation mode draws no randomness.
        let mut unused = rng::seeded(0);
        let enc = self.encoder.forward(p, tokens, false, &mut unused)?;
        let (pred, _) = self.duration.forward(p, enc.hiddens.view())?;
        let durations = match teacher {
            Some(d) => {
                if d.len() != tokens.len() {
                    return Err(Error::shape("teacher durations", tokens.len(), d.len()));
                }
                d.to_vec()
            }
            None => pred.durations.clone(),
        };
        let alignment = Alignment::new(durations.clone(), pred.ranges.clone())?;
        let (frames, _) = gaussian_upsample(enc.hiddens.view(), &alignment, alignment.total_frames())?;
        Ok(Conditioning {
            hiddens: enc.hiddens,
            predicted_durations: pred.durations,
            durations,
            ranges: pred.ranges,
            frames,
        })
    }

    /// Full-sequence ancestral synthesis starting from Gaussian noise.
    pub fn synthesize<T: Real>(
        &self,
        p: &ParamStore<T>,
        tokens: &[usize],
        teacher: Option<&[T]>,
        schedule: &NoiseSchedule,
        rng: &mut impl Rng,
    ) -> Result<Synthesis<T>> {
        let cond = self.condition(p, tokens, teacher)?;
        let waveform = diffusion::sample(
            |y, x, level| self.eps_theta(p, y, x, level),
            cond.frames.view(),
            self.config.samples_per_frame,
            schedule,
            rng,
        )?;
        Ok(Synthesis {
            waveform,
            total_frames: cond.frames.nrows(),
            durations: cond.durations,
            predicted_durations: cond.predicted_durations,
        })
    }

    /// Forward and backward over one training utterance.
    ///
    /// Randomness is consumed in a fixed order: encoder dropout and zoneout,
    /// block mask, window start, noise level, noise.
    pub fn train_pass<T: Real>(
        &self,
        p: &ParamStore<T>,
        example: &Example<T>,
        schedule: &NoiseSchedule,
        weights: LossWeights,
        rng: &mut impl Rng,
    ) -> Result<PassOutput<T>> {
        let cfg = &self.config;
        let enc = self.encoder.forward(p, &example.tokens, true, rng)?;
        let hiddens = enc.hiddens.view();
        let (pred, dur_cache) = self.duration.forward(p, hiddens)?;
        let dur_loss = duration_loss(&pred.durations, &example.durations)?;

        let alignment = Alignment::new(example.durations.clone(), pred.ranges.clone())?;
        let total = alignment.total_frames();
        if total * cfg.samples_per_frame != example.waveform.len() {
            return Err(Error::shape(
                "training waveform",
                total * cfg.samples_per_frame,
                example.waveform.len(),
            ));
        }
        let (frames, up_cache) = gaussian_upsample(hiddens, &alignment, total)?;
        let (frames, masked) = if cfg.masking {
            let (f, m) = mask_blocks(&frames, rng, cfg.mask_block_len, cfg.mask_count);
            (f, Some(m))
        } else {
            (frames, None)
        };

        let mut d_frames = Array2::<T>::zeros(frames.raw_dim());
        let mut grads = GradStore::zeros_like(p);

        let mut mel_value = 0.0;
        let mel_pass = match &self.mel_head {
            Some(head) => {
                let target = example
                    .mel
                    .as_ref()
                    .ok_or_else(|| Error::config("model.multitask", "example has no mel target"))?;
                let (pred_mel, cache) = head.forward(p, frames.view())?;
                if pred_mel.dim() != target.dim() {
                    return Err(Error::shape(
                        "mel frames",
                        format!("{:?}", target.dim()),
                        format!("{:?}", pred_mel.dim()),
                    ));
                }
                mel_value = mel_loss(pred_mel.view(), target.view())?.f64();
                Some((pred_mel, cache, target))
            }
            None => None,
        };

        let (window_frames, window_wave, window) =
            align::sample_window(frames.view(), &example.waveform, cfg.window_frames, cfg.samples_per_frame, rng)?;
        let level = schedule.sample_noise_level(rng);
        let eps: Vec<T> = rng::normal_vec(rng, window_wave.len());
        let noisy = forward_diffuse(&window_wave, level, &eps)?;
        let (eps_pred, dec_cache) = self.decoder.forward(p, &noisy, window_frames.view(), level)?;
        let eps_value = epsilon_loss(&eps_pred, &eps)?.f64();

        // Backward.
        let d_eps = epsilon_loss_grad(&eps_pred, &eps);
        let d_window = self.decoder.backward(p, &dec_cache, &d_eps, &mut grads);
        {
            let mut dst = d_frames.slice_mut(s![window.start_frame..window.start_frame + window.length_frames, ..]);
            dst += &d_window;
        }
        if let (Some(head), Some((pred_mel, cache, target))) = (&self.mel_head, mel_pass) {
            let d_mel = mel_loss_grad(pred_mel.view(), target.view()) * T::of(weights.mel);
            d_frames += &head.backward(p, &cache, d_mel.view(), &mut grads);
        }
        if let Some(masked) = &masked {
            for (mut row, &m) in d_frames.rows_mut().into_iter().zip(masked) {
                if m {
                    row.fill(T::zero());
                }
            }
        }
        let up = gaussian_upsample_backward(hiddens, &alignment, &up_cache, d_frames.view());
        let d_dur: Vec<T> = duration_loss_grad(&pred.durations, &example.durations)
            .into_iter()
            .map(|v| v * T::of(weights.duration))
            .collect();
        let mut d_hiddens = up.hiddens;
        d_hiddens += &self.duration.backward(p, &dur_cache, &d_dur, &up.ranges, &mut grads);
        self.encoder.backward(p, &enc.cache, d_hiddens.view(), &mut grads);

        let dur_value = dur_loss.f64();
        let mel_weight = if self.mel_head.is_some() { weights.mel } else { 0.0 };
        Ok(PassOutput {
            losses: LossBreakdown {
                eps: eps_value,
                duration: dur_value,
                mel: mel_value,
                total: eps_value + weights.duration * dur_value + mel_weight * mel_value,
            },
            grads,
            norm_updates: enc.norm_updates,
            window,
            sqrt_alpha_bar: level,
        })
    }

    /// Evaluation-mode ε loss on one random window with teacher durations.
    pub fn validation_eps_loss<T: Real>(
        &self,
        p: &ParamStore<T>,
        example: &Example<T>,
        schedule: &NoiseSchedule,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        let cond = self.condition(p, &example.tokens, Some(&example.durations))?;
        let (frames, wave, _) = align::sample_window(
            cond.frames.view(),
            &example.waveform,
            self.config.window_frames,
            self.config.samples_per_frame,
            rng,
        )?;
        let level = schedule.sample_noise_level(rng);
        let eps: Vec<T> = rng::normal_vec(rng, wave.len());
        let noisy = forward_diffuse(&wave, level, &eps)?;
        let pred = self.eps_theta(p, &noisy, frames.view(), level)?;
        Ok(epsilon_loss(&pred, &eps)?.f64())
    }
}
