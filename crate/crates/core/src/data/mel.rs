use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const LOG_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub bins: usize,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 4000,
            window: 160,
            hop: 40,
            fft_size: 256,
            bins: 32,
            low_hz: 20.0,
            high_hz: 1900.0,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window || self.window > self.fft_size {
            return Err(Error::config("mel.window", "need 0 < hop ≤ window ≤ fft_size"));
        }
        if self.bins == 0 {
            return Err(Error::config("mel.bins", "must be positive"));
        }
        if !(0.0 <= self.low_hz && self.low_hz < self.high_hz && self.high_hz <= self.sample_rate as f64 / 2.0) {
            return Err(Error::config("mel.high_hz", "need 0 ≤ low < high ≤ Nyquist"));
        }
        Ok(())
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters, `(bins, fft_size / 2 + 1)`, with peaks of height 1 at
/// centres equally spaced on the mel scale. Also returns the centre
/// frequencies.
pub fn mel_filterbank(cfg: &MelConfig) -> (Array2<f64>, Vec<f64>) {
    let n_freq = cfg.fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.low_hz), hz_to_mel(cfg.high_hz));
    let edges: Vec<f64> = (0..cfg.bins + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.bins + 1) as f64))
        .collect();
    let df = cfg.sample_rate as f64 / cfg.fft_size as f64;
    let fb = Array2::from_shape_fn((cfg.bins, n_freq), |(b, k)| {
        let f = k as f64 * df;
        let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
        if f <= l || f >= r {
            0.0
        } else if f <= c {
            (f - l) / (c - l)
        } else {
            (r - f) / (r - c)
        }
    });
    (fb, edges[1..=cfg.bins].to_vec())
}

pub fn mel_frame_count(samples: usize, cfg: &MelConfig) -> usize {
    if samples < cfg.window {
        0
    } else {
        (samples - cfg.window) / cfg.hop + 1
    }
}

fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / len as f64).cos())
        .collect()
}

/// Pre-log mel energies: Hann-windowed power spectrum through the filterbank.
pub fn mel_energies(waveform: &[f64], cfg: &MelConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    if waveform.len() < cfg.window {
        return Err(Error::Degenerate(format!(
            "waveform of {} samples is shorter than the {}-sample window",
            waveform.len(),
            cfg.window
        )));
    }
    let frames = mel_frame_count(waveform.len(), cfg);
    let (fb, _) = mel_filterbank(cfg);
    let win = hann(cfg.window);
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
    let n_freq = cfg.fft_size / 2 + 1;
    let mut power = Array2::<f64>::zeros((frames, n_freq));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < cfg.window {
                Complex::new(waveform[start + i] * win[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for k in 0..n_freq {
            power[[t, k]] = buf[k].norm_sqr();
        }
    }
    Ok(power.dot(&fb.t()))
}

/// Log-mel spectrogram, `(frames, bins)`, natural log with floor 1e-5.
pub fn mel_spectrogram(waveform: &[f64], cfg: &MelConfig) -> Result<Array2<f64>> {
    Ok(mel_energies(waveform, cfg)?.mapv(|e| e.max(LOG_FLOOR).ln()))
}

/// Log-mel with `(window − hop) / 2` zeros on each side so a waveform of
/// `T · hop` samples yields exactly `T` frames, each centred on its
/// conditioning frame.
pub fn frame_aligned_log_mel(waveform: &[f64], cfg: &MelConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let pad = (cfg.window - cfg.hop) / 2;
    let extra = (cfg.window - cfg.hop) - 2 * pad;
    let mut padded = vec![0.0; pad];
    padded.extend_from_slice(waveform);
    padded.extend(std::iter::repeat_n(0.0, pad + extra));
    mel_spectrogram(&padded, cfg)
}

/// Mean over frames of the Euclidean distance between two log-mel
/// spectrograms, on the common prefix of frames.
pub fn log_mel_distance(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::shape("log_mel_distance bins", a.ncols(), b.ncols()));
    }
    let n = a.nrows().min(b.nrows());
    if n == 0 {
        return Err(Error::Degenerate("log_mel_distance with no frames".into()));
    }
    let total: f64 = (0..n)
        .map(|t| {
            a.row(t)
                .iter()
                .zip(b.row(t))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / n as f64)
}
