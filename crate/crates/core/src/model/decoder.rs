//! ε-predicting waveform decoder.
//!
//! The conditioning frames climb a ladder of UBlocks to the sample rate while
//! the noisy waveform descends a ladder of DBlocks. Each UBlock is modulated
//! by FiLM parameters generated from the DBlock output at the same temporal
//! resolution, so the ladders meet rung by rung.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::nn::{
    noise_embedding, Conv1d, DBlock, DBlockCache, FilmCache, FilmGenerator, GradStore, ParamStore, UBlock,
    UBlockCache,
};
use crate::{Error, Real, Result};

use super::ModelConfig;

#[derive(Debug, Clone)]
pub struct Decoder {
    pub frame_input: Conv1d,
    pub wave_input: Conv1d,
    pub ublocks: Vec<UBlock>,
    pub dblocks: Vec<DBlock>,
    /// `films[k]` modulates `ublocks[k]`.
    pub films: Vec<FilmGenerator>,
    pub output: Conv1d,
    pub samples_per_frame: usize,
}

#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    frames: Array2<T>,
    wave: Array2<T>,
    /// Downsampling ladder outputs, `rungs[0]` at the sample rate.
    rungs: Vec<Array2<T>>,
    d_caches: Vec<DBlockCache<T>>,
    film_caches: Vec<FilmCache<T>>,
    u_caches: Vec<UBlockCache<T>>,
    top: Array2<T>,
}

impl Decoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let cond_dim = 2 * cfg.lstm_units;
        let frame_input = Conv1d::new(store, "decoder.frame_input", cond_dim, cfg.decoder_input_channels, 3, 1, 1.0, rng);
        let wave_input = Conv1d::new(store, "decoder.wave_input", 1, cfg.wave_input_channels, 5, 1, 1.0, rng);
        let k = cfg.ublocks.len();
        // Rung channels along the downsampling ladder.
        let mut rung_ch = vec![cfg.wave_input_channels];
        rung_ch.extend(&cfg.dblock_channels);
        let mut dblocks = Vec::new();
        for j in 0..k - 1 {
            let factor = cfg.ublocks[k - 1 - j].factor;
            dblocks.push(DBlock::new(
                store,
                &format!("decoder.dblock{j}"),
                rung_ch[j],
                rung_ch[j + 1],
                factor,
                cfg.dblock_dilations,
                rng,
            ));
        }
        let mut ublocks = Vec::new();
        let mut films = Vec::new();
        let mut in_ch = cfg.decoder_input_channels;
        for (i, b) in cfg.ublocks.iter().enumerate() {
            ublocks.push(UBlock::new(
                store,
                &format!("decoder.ublock{i}"),
                in_ch,
                b.channels,
                b.factor,
                cfg.ublock_dilations,
                rng,
            ));
            films.push(FilmGenerator::new(store, &format!("decoder.film{i}"), rung_ch[k - 1 - i], b.channels, rng));
            in_ch = b.channels;
        }
        let output = Conv1d::new(store, "decoder.output", in_ch, 1, 3, 1, 0.1, rng);
        Decoder {
            frame_input,
            wave_input,
            ublocks,
            dblocks,
            films,
            output,
            samples_per_frame: cfg.samples_per_frame,
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        y_noisy: &[T],
        frames: ArrayView2<T>,
        sqrt_alpha_bar: f64,
    ) -> Result<(Vec<T>, DecoderCache<T>)> {
        let n_frames = frames.nrows();
        if y_noisy.len() != n_frames * self.samples_per_frame {
            return Err(Error::Resolution {
                stage: "decoder input".into(),
                detail: format!(
                    "{} samples for {} frames at {} samples per frame",
                    y_noisy.len(),
                    n_frames,
                    self.samples_per_frame
                ),
            });
        }
        let k = self.ublocks.len();
        let wave = Array2::from_shape_vec((y_noisy.len(), 1), y_noisy.to_vec()).expect("column");
        let mut rungs = vec![self.wave_input.forward(p, wave.view())?];
        let mut d_caches = Vec::with_capacity(k - 1);
        for (j, block) in self.dblocks.iter().enumerate() {
            let (out, cache) = block.forward(p, rungs[j].view())?;
            rungs.push(out);
            d_caches.push(cache);
        }
        let mut x = self.frame_input.forward(p, frames)?;
        let mut expected_len = n_frames;
        let mut film_caches = Vec::with_capacity(k);
        let mut u_caches = Vec::with_capacity(k);
        for (i, (block, film)) in self.ublocks.iter().zip(&self.films).enumerate() {
            expected_len *= block.factor;
            let rung = &rungs[k - 1 - i];
            if rung.nrows() != expected_len {
                return Err(Error::Resolution {
                    stage: format!("ublock{i} film"),
                    detail: format!("upsampling branch at {expected_len}, downsampling branch at {}", rung.nrows()),
                });
            }
            let emb = noise_embedding::<T>(sqrt_alpha_bar, film.in_ch)?;
            let (modulation, fc) = film.forward(p, rung.view(), emb.view())?;
            let (out, uc) = block.forward(p, x.view(), Some(modulation))?;
            film_caches.push(fc);
            u_caches.push(uc);
            x = out;
        }
        let eps = self.output.forward(p, x.view())?;
        Ok((
            eps.column(0).to_vec(),
            DecoderCache {
                frames: frames.to_owned(),
                wave,
                rungs,
                d_caches,
                film_caches,
                u_caches,
                top: x,
            },
        ))
    }

    /// Returns the gradient with respect to the conditioning frames. The noisy
    /// waveform input is not differentiated.
    pub fn backward<T: Real>(&self, p: &ParamStore<T>, cache: &DecoderCache<T>, d_eps: &[T], g: &mut GradStore<T>) -> Array2<T> {
        let k = self.ublocks.len();
        let d_out = Array2::from_shape_vec((d_eps.len(), 1), d_eps.to_vec()).expect("column");
        let mut dx = self.output.backward(p, cache.top.view(), d_out.view(), g);
        let mut d_rungs: Vec<Array2<T>> = cache.rungs.iter().map(|r| Array2::zeros(r.raw_dim())).collect();
        for i in (0..k).rev() {
            let grads = self.ublocks[i].backward(p, &cache.u_caches[i], dx.view(), g);
            if let Some((d_scale, d_shift)) = grads.film {
                let rung = k - 1 - i;
                let d_feat = self.films[i].backward(
                    p,
                    cache.rungs[rung].view(),
                    &cache.film_caches[i],
                    d_scale.view(),
                    d_shift.view(),
                    g,
                );
                d_rungs[rung] += &d_feat;
            }
            dx = grads.input;
        }
        let d_frames = self.frame_input.backward(p, cache.frames.view(), dx.view(), g);
        for j in (0..k - 1).rev() {
            let d_in = self.dblocks[j].backward(p, &cache.d_caches[j], d_rungs[j + 1].view(), g);
            d_rungs[j] += &d_in;
        }
        self.wave_input.backward(p, cache.wave.view(), d_rungs[0].view(), g);
        d_frames
    }
}
