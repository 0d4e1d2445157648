//! Synthetic tone corpus with exact durations, log-mel features and the
//! on-disk corpus container.

mod corpus;
mod mel;

pub use corpus::{expected_file_size, manifest_path, read_corpus, write_corpus, Corpus, CorpusManifest, ManifestEntry, CORPUS_VERSION};
pub use mel::{
    frame_aligned_log_mel, log_mel_distance, mel_energies, mel_filterbank, mel_frame_count, mel_spectrogram, MelConfig,
    LOG_FLOOR,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub sample_rate: u32,
    pub samples_per_frame: usize,
    /// Number of content tokens K; ids `0..K` are tones.
    pub content_tokens: usize,
    pub base_frequency: f64,
    /// Relative amplitudes of the 2nd, 3rd, ... harmonics.
    pub harmonics: Vec<f64>,
    pub amplitude: f64,
    /// Raised-cosine attack/release length in samples.
    pub ramp_samples: usize,
    pub min_duration: u32,
    pub max_duration: u32,
    /// Width of each token's own duration range; token ranges are spread
    /// evenly across `[min_duration, max_duration]`.
    pub duration_jitter: u32,
    pub min_words: usize,
    pub max_words: usize,
    pub min_word_len: usize,
    pub max_word_len: usize,
    pub n_train: usize,
    pub n_holdout: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            sample_rate: 4000,
            samples_per_frame: 40,
            content_tokens: 12,
            base_frequency: 220.0,
            harmonics: vec![0.3, 0.1],
            amplitude: 0.5,
            ramp_samples: 20,
            min_duration: 3,
            max_duration: 10,
            duration_jitter: 2,
            min_words: 2,
            max_words: 4,
            min_word_len: 1,
            max_word_len: 4,
            n_train: 500,
            n_holdout: 50,
        }
    }
}

impl CorpusConfig {
    pub fn silence_token(&self) -> usize {
        self.content_tokens
    }

    pub fn eos_token(&self) -> usize {
        self.content_tokens + 1
    }

    pub fn vocab_size(&self) -> usize {
        self.content_tokens + 2
    }

    /// Inclusive duration range of `token`. Content tokens are spread
    /// from shortest to longest; silence and end-of-sequence sit mid-range.
    pub fn duration_range(&self, token: usize) -> (u32, u32) {
        let full = self.max_duration - self.min_duration;
        if self.duration_jitter >= full {
            return (self.min_duration, self.max_duration);
        }
        let span = (full - self.duration_jitter) as f64;
        let pos = if token < self.content_tokens && self.content_tokens > 1 {
            token as f64 / (self.content_tokens - 1) as f64
        } else {
            0.5
        };
        let lo = self.min_duration + (pos * span).round() as u32;
        (lo, lo + self.duration_jitter)
    }

    pub fn frequency(&self, token: usize) -> f64 {
        self.base_frequency * 2f64.powf(token as f64 / 12.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::config("data.sample_rate", "must be positive"));
        }
        if self.samples_per_frame == 0 {
            return Err(Error::config("data.samples_per_frame", "must be positive"));
        }
        if self.content_tokens == 0 {
            return Err(Error::config("data.content_tokens", "must be positive"));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let top = self.frequency(self.content_tokens - 1) * (self.harmonics.len() + 1) as f64;
        if !(self.base_frequency > 0.0) || top >= nyquist {
            return Err(Error::config(
                "data.base_frequency",
                format!("highest partial {top:.1} Hz must lie below Nyquist {nyquist} Hz"),
            ));
        }
        let peak = self.amplitude * (1.0 + self.harmonics.iter().map(|h| h.abs()).sum::<f64>());
        if !(self.amplitude > 0.0) || peak > 1.0 {
            return Err(Error::config("data.amplitude", format!("peak {peak} must lie in (0, 1]")));
        }
        if self.min_duration == 0 || self.min_duration > self.max_duration {
            return Err(Error::config("data.min_duration", "need 1 ≤ min_duration ≤ max_duration"));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::config("data.min_words", "need 1 ≤ min_words ≤ max_words"));
        }
        if self.min_word_len == 0 || self.min_word_len > self.max_word_len {
            return Err(Error::config("data.min_word_len", "need 1 ≤ min_word_len ≤ max_word_len"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub tokens: Vec<usize>,
    /// Frames per token.
    pub durations: Vec<u32>,
    pub waveform: Vec<f32>,
    pub sample_rate: u32,
    pub samples_per_frame: usize,
}

impl Utterance {
    pub fn total_frames(&self) -> usize {
        self.durations.iter().map(|&d| d as usize).sum()
    }

    /// Waveform span `[start, end)` of token `i`.
    pub fn token_span(&self, i: usize) -> (usize, usize) {
        let before: usize = self.durations[..i].iter().map(|&d| d as usize).sum();
        let start = before * self.samples_per_frame;
        (start, start + self.durations[i] as usize * self.samples_per_frame)
    }
}

/// Random word structure: words of content tokens separated by silence,
/// closed by the end-of-sequence token.
pub fn random_tokens(cfg: &CorpusConfig, rng: &mut impl Rng) -> Vec<usize> {
    let words = rng.random_range(cfg.min_words..=cfg.max_words);
    let mut tokens = Vec::new();
    for w in 0..words {
        if w > 0 {
            tokens.push(cfg.silence_token());
        }
        let len = rng.random_range(cfg.min_word_len..=cfg.max_word_len);
        tokens.extend((0..len).map(|_| rng.random_range(0..cfg.content_tokens)));
    }
    tokens.push(cfg.eos_token());
    tokens
}

/// Renders tokens with durations drawn uniformly from each token's range.
pub fn gen_utterance(tokens: &[usize], cfg: &CorpusConfig, rng: &mut impl Rng) -> Result<Utterance> {
    if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size()) {
        return Err(Error::UnknownToken {
            id: bad,
            vocab: cfg.vocab_size(),
        });
    }
    let durations: Vec<u32> = tokens
        .iter()
        .map(|&t| {
            let (lo, hi) = cfg.duration_range(t);
            rng.random_range(lo..=hi)
        })
        .collect();
    render(tokens, &durations, cfg)
}

/// Deterministic rendering: harmonic tones with continuous phase across
/// token boundaries, a raised-cosine envelope per token, silence as zeros.
pub fn render(tokens: &[usize], durations: &[u32], cfg: &CorpusConfig) -> Result<Utterance> {
    if tokens.len() != durations.len() {
        return Err(Error::shape("render durations", tokens.len(), durations.len()));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size()) {
        return Err(Error::UnknownToken {
            id: bad,
            vocab: cfg.vocab_size(),
        });
    }
    let sr = cfg.sample_rate as f64;
    let total: usize = durations.iter().map(|&d| d as usize).sum::<usize>() * cfg.samples_per_frame;
    let mut waveform = Vec::with_capacity(total);
    let mut phase = 0.0f64;
    for (&tok, &dur) in tokens.iter().zip(durations) {
        let len = dur as usize * cfg.samples_per_frame;
        if tok >= cfg.content_tokens {
            waveform.extend(std::iter::repeat_n(0.0f32, len));
            continue;
        }
        let step = std::f64::consts::TAU * cfg.frequency(tok) / sr;
        let ramp = cfg.ramp_samples.min(len / 2);
        for i in 0..len {
            let edge = i.min(len - 1 - i);
            let env = if edge < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * (edge as f64 + 0.5) / ramp as f64).cos()
            } else {
                1.0
            };
            let mut v = phase.sin();
            for (h, &a) in cfg.harmonics.iter().enumerate() {
                v += a * ((h + 2) as f64 * phase).sin();
            }
            waveform.push((cfg.amplitude * env * v) as f32);
            phase = (phase + step) % std::f64::consts::TAU;
        }
    }
    Ok(Utterance {
        tokens: tokens.to_vec(),
        durations: durations.to_vec(),
        waveform,
        sample_rate: cfg.sample_rate,
        samples_per_frame: cfg.samples_per_frame,
    })
}

/// Utterance `index` of a corpus generated from `seed`; each utterance has
/// its own derived stream.
pub fn corpus_utterance(cfg: &CorpusConfig, seed: u64, index: usize) -> Result<Utterance> {
    let mut r = rng::stream(seed, "utterance", index as u64);
    let tokens = random_tokens(cfg, &mut r);
    gen_utterance(&tokens, cfg, &mut r)
}

pub fn generate_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let all = (0..cfg.n_train + cfg.n_holdout)
        .map(|i| corpus_utterance(cfg, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let mut train = all;
    let holdout = train.split_off(cfg.n_train);
    Ok(Corpus {
        config: cfg.clone(),
        seed,
        train,
        holdout,
    })
}

/// Mean squared error of predicting every token's duration with the mean
/// duration of `reference`.
pub fn mean_duration_baseline(reference: &[Utterance], targets: &[Utterance]) -> f64 {
    let all: Vec<f64> = reference.iter().flat_map(|u| u.durations.iter().map(|&d| d as f64)).collect();
    let mean = all.iter().sum::<f64>() / all.len().max(1) as f64;
    let errs: Vec<f64> = targets
        .iter()
        .flat_map(|u| u.durations.iter().map(|&d| (d as f64 - mean).powi(2)))
        .collect();
    errs.iter().sum::<f64>() / errs.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn peak_frequency(x: &[f32], sr: f64) -> (f64, f64) {
        let n = x.len();
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let (k, _) = buf[..n / 2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        (k as f64 * sr / n as f64, sr / n as f64)
    }

    #[test]
    fn silence_renders_zero() {
        let cfg = CorpusConfig::default();
        let u = render(&[12, 13, 12], &[3, 4, 5], &cfg).unwrap();
        assert_eq!(u.waveform.len(), 12 * 40);
        assert!(u.waveform.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_token_peak_at_its_frequency() {
        let cfg = CorpusConfig::default();
        let mut r = rng::seeded(3);
        for k in [0, 5, 11] {
            let u = gen_utterance(&[k], &cfg, &mut r).unwrap();
            assert_eq!(u.waveform.len(), u.durations[0] as usize * 40);
            let (f, bin) = peak_frequency(&u.waveform, 4000.0);
            assert!((f - cfg.frequency(k)).abs() <= bin, "token {k}: peak {f}, want {}", cfg.frequency(k));
        }
    }

    #[test]
    fn durations_segment_exactly() {
        let cfg = CorpusConfig::default();
        let u = corpus_utterance(&cfg, 11, 0).unwrap();
        assert_eq!(u.waveform.len(), u.total_frames() * 40);
        for (i, &tok) in u.tokens.iter().enumerate() {
            let (a, b) = u.token_span(i);
            let seg = &u.waveform[a..b];
            if tok >= cfg.content_tokens {
                assert!(seg.iter().all(|&v| v == 0.0));
            } else {
                let (f, bin) = peak_frequency(seg, 4000.0);
                assert!((f - cfg.frequency(tok)).abs() <= bin);
            }
        }
        assert!(u.waveform.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn token_structure() {
        let cfg = CorpusConfig::default();
        for i in 0..50 {
            let u = corpus_utterance(&cfg, 5, i).unwrap();
            assert_eq!(*u.tokens.last().unwrap(), cfg.eos_token());
            assert_ne!(u.tokens[0], cfg.silence_token());
            assert!(u.durations.iter().all(|&d| (3..=10).contains(&d)));
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = CorpusConfig {
            n_train: 5,
            n_holdout: 2,
            ..CorpusConfig::default()
        };
        assert_eq!(generate_corpus(&cfg, 9).unwrap(), generate_corpus(&cfg, 9).unwrap());
        assert_ne!(generate_corpus(&cfg, 9).unwrap().train, generate_corpus(&cfg, 10).unwrap().train);
    }

    #[test]
    fn duration_ranges_cover_configured_span() {
        let cfg = CorpusConfig::default();
        assert_eq!(cfg.duration_range(0), (3, 5));
        assert_eq!(cfg.duration_range(11), (8, 10));
        assert_eq!(cfg.duration_range(12), (6, 8));
        let wide = CorpusConfig {
            duration_jitter: 7,
            ..CorpusConfig::default()
        };
        assert_eq!(wide.duration_range(4), (3, 10));
    }

    #[test]
    fn unknown_token_rejected() {
        let cfg = CorpusConfig::default();
        assert!(matches!(render(&[14], &[3], &cfg), Err(Error::UnknownToken { id: 14, .. })));
    }
}
