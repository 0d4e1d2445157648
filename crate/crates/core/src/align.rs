//! Duration-driven Gaussian resampling and training-window extraction.
//!
//! Token `i` with duration d_i and range σ_i is centred at
//! c_i = Σ_{j≤i} d_j − d_i/2. Frame t (evaluated at t + 0.5) mixes the token
//! vectors with weights ∝ exp(−(t + 0.5 − c_i)² / 2σ_i²), normalised per frame.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, FrameMatrix, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment<T> {
    pub durations: Vec<T>,
    pub ranges: Vec<T>,
}

impl<T: Real> Alignment<T> {
    pub fn new(durations: Vec<T>, ranges: Vec<T>) -> Result<Self> {
        if durations.len() != ranges.len() {
            return Err(Error::shape("alignment ranges", durations.len(), ranges.len()));
        }
        if durations.is_empty() {
            return Err(Error::Degenerate("alignment with no tokens".into()));
        }
        Ok(Alignment { durations, ranges })
    }

    pub fn centers(&self) -> Vec<T> {
        let half = T::of(0.5);
        let mut acc = T::zero();
        self.durations
            .iter()
            .map(|&d| {
                acc += d;
                acc - half * d
            })
            .collect()
    }

    /// Σ durations rounded half-up, at least 1.
    pub fn total_frames(&self) -> usize {
        total_frames(&self.durations)
    }
}

pub fn total_frames<T: Real>(durations: &[T]) -> usize {
    let sum: f64 = durations.iter().map(|d| d.f64()).sum();
    ((sum + 0.5).floor().max(1.0)) as usize
}

/// Frame/sample bounds of a training segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub start_frame: usize,
    pub length_frames: usize,
    pub samples_per_frame: usize,
}

impl WindowSpec {
    pub fn start_sample(&self) -> usize {
        self.start_frame * self.samples_per_frame
    }

    pub fn length_samples(&self) -> usize {
        self.length_frames * self.samples_per_frame
    }
}

/// Cached normalised weights (frames × tokens) for the backward pass.
#[derive(Debug, Clone)]
pub struct UpsampleCache<T> {
    weights: Array2<T>,
    centers: Vec<T>,
}

impl<T: Real> UpsampleCache<T> {
    pub fn weights(&self) -> ArrayView2<'_, T> {
        self.weights.view()
    }
}

/// Gradients of [`gaussian_upsample`] with respect to each of its inputs.
#[derive(Debug, Clone)]
pub struct UpsampleGrads<T> {
    pub hiddens: Array2<T>,
    pub durations: Vec<T>,
    pub ranges: Vec<T>,
}

/// Normalised weights of every token at a continuous frame position.
/// `None` when no token has finite, non-zero weight there.
pub fn token_weights<T: Real>(position: T, centers: &[T], ranges: &[T]) -> Option<Vec<T>> {
    let two = T::of(2.0);
    let mut w: Vec<T> = centers
        .iter()
        .zip(ranges)
        .map(|(&c, &sigma)| {
            let d = position - c;
            -(d * d) / (two * sigma * sigma)
        })
        .collect();
    let max = w.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return None;
    }
    let mut total = T::zero();
    for v in w.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    if !(total > T::zero()) || !total.is_finite() {
        return None;
    }
    w.iter_mut().for_each(|v| *v /= total);
    Some(w)
}

pub fn gaussian_upsample<T: Real>(
    hiddens: ArrayView2<T>,
    alignment: &Alignment<T>,
    total_frames: usize,
) -> Result<(FrameMatrix<T>, UpsampleCache<T>)> {
    let tokens = alignment.durations.len();
    if hiddens.nrows() != tokens {
        return Err(Error::shape("gaussian_upsample hiddens", tokens, hiddens.nrows()));
    }
    if let Some(bad) = alignment.ranges.iter().find(|r| !(r.f64() > 0.0) || !r.is_finite()) {
        return Err(Error::Degenerate(format!("non-positive range {bad}")));
    }
    let centers = alignment.centers();
    let mut weights = Array2::<T>::zeros((total_frames, tokens));
    let half = T::of(0.5);
    for (t, mut row) in weights.rows_mut().into_iter().enumerate() {
        let pos = T::of(t as f64) + half;
        let w = token_weights(pos, &centers, &alignment.ranges)
            .ok_or_else(|| Error::Degenerate(format!("zero total weight at frame {t}")))?;
        row.assign(&ndarray::ArrayView1::from(&w));
    }
    let out = weights.dot(&hiddens);
    Ok((out, UpsampleCache { weights, centers }))
}

pub fn gaussian_upsample_backward<T: Real>(
    hiddens: ArrayView2<T>,
    alignment: &Alignment<T>,
    cache: &UpsampleCache<T>,
    d_out: ArrayView2<T>,
) -> UpsampleGrads<T> {
    let tokens = alignment.durations.len();
    let weights = &cache.weights;
    let d_hiddens = weights.t().dot(&d_out);
    // dL/dw_{t,i} = d_out_t · h_i
    let d_w = d_out.dot(&hiddens.t());
    let mut d_centers = vec![T::zero(); tokens];
    let mut d_ranges = vec![T::zero(); tokens];
    let half = T::of(0.5);
    for t in 0..weights.nrows() {
        let pos = T::of(t as f64) + half;
        let w = weights.row(t);
        let dw = d_w.row(t);
        let inner: T = w.iter().zip(dw.iter()).map(|(&a, &b)| a * b).sum();
        for i in 0..tokens {
            let d_logit = w[i] * (dw[i] - inner);
            let sigma = alignment.ranges[i];
            let diff = pos - cache.centers[i];
            let s2 = sigma * sigma;
            d_centers[i] += d_logit * diff / s2;
            d_ranges[i] += d_logit * diff * diff / (s2 * sigma);
        }
    }
    // c_i = Σ_{j<i} d_j + d_i/2
    let mut d_durations = vec![T::zero(); tokens];
    let mut suffix = T::zero();
    for j in (0..tokens).rev() {
        d_durations[j] = suffix + half * d_centers[j];
        suffix += d_centers[j];
    }
    UpsampleGrads {
        hiddens: d_hiddens,
        durations: d_durations,
        ranges: d_ranges,
    }
}

/// Mean squared error over tokens.
pub fn duration_loss<T: Real>(pred: &[T], truth: &[T]) -> Result<T> {
    if pred.len() != truth.len() {
        return Err(Error::shape("duration_loss", truth.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::Degenerate("duration_loss on empty input".into()));
    }
    let sum: T = pred.iter().zip(truth).map(|(&p, &t)| (p - t) * (p - t)).sum();
    Ok(sum / T::of(pred.len() as f64))
}

pub fn duration_loss_grad<T: Real>(pred: &[T], truth: &[T]) -> Vec<T> {
    let scale = T::of(2.0 / pred.len() as f64);
    pred.iter().zip(truth).map(|(&p, &t)| scale * (p - t)).collect()
}

/// Picks a uniformly random window of `window_frames` frames and the matching
/// waveform segment. A window longer than the utterance falls back to the
/// whole utterance.
pub fn sample_window<T: Real>(
    frames: ArrayView2<T>,
    waveform: &[T],
    window_frames: usize,
    samples_per_frame: usize,
    rng: &mut impl Rng,
) -> Result<(FrameMatrix<T>, Vec<T>, WindowSpec)> {
    let total = frames.nrows();
    if waveform.len() != total * samples_per_frame {
        return Err(Error::shape(
            "sample_window waveform",
            total * samples_per_frame,
            waveform.len(),
        ));
    }
    let length = if window_frames > total {
        log::debug!("window of {window_frames} frames exceeds utterance of {total}; using full utterance");
        total
    } else {
        window_frames
    };
    let start = if length == total {
        0
    } else {
        rng.random_range(0..=total - length)
    };
    let spec = WindowSpec {
        start_frame: start,
        length_frames: length,
        samples_per_frame,
    };
    let frame_slice = frames.slice(s![start..start + length, ..]).to_owned();
    let wave_slice = waveform[spec.start_sample()..spec.start_sample() + spec.length_samples()].to_vec();
    Ok((frame_slice, wave_slice, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::{array, Array2};

    #[test]
    fn single_token_copies_vector() {
        let h = array![[0.3f64, -1.2, 2.0]];
        let al = Alignment::new(vec![5.0], vec![0.7]).unwrap();
        let (out, _) = gaussian_upsample(h.view(), &al, 5).unwrap();
        for row in out.rows() {
            for (a, b) in row.iter().zip(h.row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equal_vectors_give_that_vector() {
        let h = array![[1.5f64, -0.5], [1.5, -0.5]];
        let al = Alignment::new(vec![3.0, 6.0], vec![1.0, 2.5]).unwrap();
        let (out, _) = gaussian_upsample(h.view(), &al, 9).unwrap();
        for row in out.rows() {
            assert!((row[0] - 1.5).abs() < 1e-12 && (row[1] + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn midpoint_symmetry() {
        let al = Alignment::new(vec![4.0f64, 4.0], vec![1.3, 1.3]).unwrap();
        let centers = al.centers();
        assert_eq!(centers, vec![2.0, 6.0]);
        let w = token_weights(4.0, &centers, &al.ranges).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        // Frames 3 and 4 (positions 3.5 and 4.5) mirror each other.
        let h = array![[1.0f64, 0.0], [0.0, 1.0]];
        let (_, cache) = gaussian_upsample(h.view(), &al, 8).unwrap();
        let wts = cache.weights();
        assert!((wts[[3, 0]] - wts[[4, 1]]).abs() < 1e-15);
        assert!((wts[[3, 1]] - wts[[4, 0]]).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_ranges_and_shapes() {
        let h = array![[1.0f64], [2.0]];
        let al = Alignment::new(vec![2.0, 2.0], vec![0.0, 1.0]).unwrap();
        assert!(gaussian_upsample(h.view(), &al, 4).is_err());
        let al = Alignment::new(vec![2.0], vec![1.0]).unwrap();
        assert!(gaussian_upsample(h.view(), &al, 4).is_err());
    }

    #[test]
    fn duration_loss_cases() {
        let t = [3.0f64, 5.0, 7.0];
        assert_eq!(duration_loss(&t, &t).unwrap(), 0.0);
        let p: Vec<f64> = t.iter().map(|v| v + 2.0).collect();
        assert!((duration_loss(&p, &t).unwrap() - 4.0).abs() < 1e-12);
        let mut r = rng::seeded(2);
        let p: Vec<f64> = (0..5).map(|_| r.random_range(0.0..10.0)).collect();
        let q: Vec<f64> = (0..5).map(|_| r.random_range(0.0..10.0)).collect();
        let mut brute = 0.0;
        for i in 0..5 {
            brute += (p[i] - q[i]) * (p[i] - q[i]);
        }
        assert!((duration_loss(&p, &q).unwrap() - brute / 5.0).abs() < 1e-12);
        assert!(duration_loss::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn total_frames_rounds_half_up() {
        assert_eq!(total_frames(&[2.0f64, 2.5]), 5);
        assert_eq!(total_frames(&[2.0f64, 2.4]), 4);
        assert_eq!(total_frames(&[0.1f64]), 1);
    }

    #[test]
    fn window_full_and_partial() {
        let frames = Array2::<f64>::from_shape_fn((10, 2), |(t, c)| (t * 2 + c) as f64);
        let wave: Vec<f64> = (0..3000).map(|i| i as f64).collect();
        let mut r = rng::seeded(1);
        let (f, w, spec) = sample_window(frames.view(), &wave, 10, 300, &mut r).unwrap();
        assert_eq!(spec.start_frame, 0);
        assert_eq!(f, frames);
        assert_eq!(w, wave);
        let (f, w, spec) = sample_window(frames.view(), &wave, 4, 300, &mut r).unwrap();
        assert_eq!(w.len(), 1200);
        assert_eq!(f.nrows(), 4);
        assert_eq!(w[0], (300 * spec.start_frame) as f64);
        assert_eq!(f[[0, 0]], (spec.start_frame * 2) as f64);
        let (_, w, spec) = sample_window(frames.view(), &wave, 40, 300, &mut r).unwrap();
        assert_eq!((spec.length_frames, w.len()), (10, 3000));
    }
}
