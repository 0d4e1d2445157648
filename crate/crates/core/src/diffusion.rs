//! Forward noising, the ε-prediction objective and the reverse samplers.

use ndarray::ArrayView2;
use rand::Rng;

use crate::{rng, Error, NoiseSchedule, Real, Result};

/// Iterate of the reverse process: the current waveform `y_n` at step `n`.
#[derive(Debug, Clone)]
pub struct DiffusionState<'s, T> {
    pub y: Vec<T>,
    pub step: usize,
    pub schedule: &'s NoiseSchedule,
}

impl<'s, T: Real> DiffusionState<'s, T> {
    /// Starts at step N with y_N ~ N(0, I).
    pub fn from_noise(schedule: &'s NoiseSchedule, len: usize, rng: &mut impl Rng) -> Self {
        DiffusionState {
            y: rng::normal_vec(rng, len),
            step: schedule.len(),
            schedule,
        }
    }

    pub fn is_done(&self) -> bool {
        self.step == 0
    }

    /// Applies one ancestral update and decrements the step.
    pub fn advance(&mut self, eps_pred: &[T], rng: &mut impl Rng) -> Result<()> {
        if self.step == 0 {
            return Err(Error::config("diffusion.step", "already at step 0"));
        }
        let z: Vec<T> = if self.step > 1 {
            rng::normal_vec(rng, self.y.len())
        } else {
            vec![T::zero(); self.y.len()]
        };
        self.y = ancestral_step(&self.y, eps_pred, self.step, self.schedule, &z)?;
        self.step -= 1;
        Ok(())
    }
}

fn check_len(context: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(context, a, b));
    }
    Ok(())
}

/// ỹ = √ᾱ·y₀ + √(1−ᾱ)·ε.
pub fn forward_diffuse<T: Real>(y0: &[T], sqrt_alpha_bar: f64, epsilon: &[T]) -> Result<Vec<T>> {
    check_len("forward_diffuse", y0.len(), epsilon.len())?;
    if !(0.0..=1.0).contains(&sqrt_alpha_bar) {
        return Err(Error::config(
            "sqrt_alpha_bar",
            format!("{sqrt_alpha_bar} outside [0, 1]"),
        ));
    }
    let signal = T::of(sqrt_alpha_bar);
    let noise = T::of((1.0 - sqrt_alpha_bar * sqrt_alpha_bar).max(0.0).sqrt());
    Ok(y0
        .iter()
        .zip(epsilon)
        .map(|(&y, &e)| signal * y + noise * e)
        .collect())
}

/// Mean absolute error between predicted and true noise.
pub fn epsilon_loss<T: Real>(eps_pred: &[T], eps_true: &[T]) -> Result<T> {
    check_len("epsilon_loss", eps_pred.len(), eps_true.len())?;
    if eps_pred.is_empty() {
        return Err(Error::Degenerate("epsilon_loss on empty input".into()));
    }
    let sum: T = eps_pred
        .iter()
        .zip(eps_true)
        .map(|(&p, &t)| (p - t).abs())
        .sum();
    Ok(sum / T::of(eps_pred.len() as f64))
}

/// Gradient of [`epsilon_loss`] with respect to the prediction.
pub fn epsilon_loss_grad<T: Real>(eps_pred: &[T], eps_true: &[T]) -> Vec<T> {
    let scale = T::one() / T::of(eps_pred.len() as f64);
    eps_pred
        .iter()
        .zip(eps_true)
        .map(|(&p, &t)| {
            let d = p - t;
            if d > T::zero() {
                scale
            } else if d < T::zero() {
                -scale
            } else {
                T::zero()
            }
        })
        .collect()
}

/// y_{n−1} = (y_n − β_n/√(1−ᾱ_n)·ε̂)/√α_n + σ_n·z.
pub fn ancestral_step<T: Real>(
    y_n: &[T],
    eps_pred: &[T],
    n: usize,
    schedule: &NoiseSchedule,
    z: &[T],
) -> Result<Vec<T>> {
    if n == 0 || n > schedule.len() {
        return Err(Error::config(
            "ancestral_step.n",
            format!("{n} outside [1, {}]", schedule.len()),
        ));
    }
    check_len("ancestral_step eps", y_n.len(), eps_pred.len())?;
    check_len("ancestral_step z", y_n.len(), z.len())?;
    let beta = schedule.beta(n);
    let one_minus = 1.0 - schedule.alpha_bar(n);
    let eps_coef = if beta == 0.0 { 0.0 } else { beta / one_minus.sqrt() };
    let inv_sqrt_alpha = T::of(1.0 / schedule.alpha(n).sqrt());
    let eps_coef = T::of(eps_coef);
    let sigma = T::of(schedule.sigma(n));
    Ok(y_n
        .iter()
        .zip(eps_pred)
        .zip(z)
        .map(|((&y, &e), &z)| inv_sqrt_alpha * (y - eps_coef * e) + sigma * z)
        .collect())
}

/// Discretised Langevin update ỹ + (η/2)·score + √η·z.
pub fn langevin_step<T: Real>(y: &[T], score: &[T], eta: f64, z: &[T]) -> Result<Vec<T>> {
    if !(eta > 0.0) {
        return Err(Error::config("langevin.eta", format!("{eta} must be positive")));
    }
    check_len("langevin_step score", y.len(), score.len())?;
    check_len("langevin_step z", y.len(), z.len())?;
    let drift = T::of(eta / 2.0);
    let diffusion = T::of(eta.sqrt());
    Ok(y
        .iter()
        .zip(score)
        .zip(z)
        .map(|((&y, &s), &z)| y + drift * s + diffusion * z)
        .collect())
}

/// Full ancestral synthesis from y_N ~ N(0, I) down to y₀.
///
/// `predict(y_n, x, √ᾱ_n)` is the ε predictor; the output length is the
/// frame count of `x` times `samples_per_frame`.
pub fn sample<T, F>(
    mut predict: F,
    x: ArrayView2<T>,
    samples_per_frame: usize,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Vec<T>>
where
    T: Real,
    F: FnMut(&[T], ArrayView2<T>, f64) -> Result<Vec<T>>,
{
    let len = x.nrows() * samples_per_frame;
    let mut state = DiffusionState::<T>::from_noise(schedule, len, rng);
    while !state.is_done() {
        let level = schedule.sqrt_alpha_bar(state.step);
        let eps = predict(&state.y, x, level)?;
        check_len("sample predictor output", len, eps.len())?;
        state.advance(&eps, rng)?;
    }
    Ok(state.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;


    #[test]
    fn forward_diffuse_limits() {
        let y0 = [0.3f64, -0.7, 1.1];
        let eps = [1.0, 2.0, -0.5];
        assert_eq!(forward_diffuse(&y0, 1.0, &eps).unwrap(), y0.to_vec());
        assert_eq!(forward_diffuse(&y0, 0.0, &eps).unwrap(), eps.to_vec());
        let zero = forward_diffuse(&[0.0; 3], 0.6, &eps).unwrap();
        for (z, e) in zero.iter().zip(eps) {
            assert!((z - 0.8 * e).abs() < 1e-15);
        }
        assert!(forward_diffuse(&y0, 0.5, &eps[..2]).is_err());
    }

    #[test]
    fn epsilon_loss_cases() {
        let a = [0.1f64, -0.2, 0.3];
        assert_eq!(epsilon_loss(&a, &a).unwrap(), 0.0);
        let shifted: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        assert!((epsilon_loss(&shifted, &a).unwrap() - 1.0).abs() < 1e-15);
        let mut r = rng::seeded(9);
        let p: Vec<f64> = (0..7).map(|_| r.random::<f64>()).collect();
        let t: Vec<f64> = (0..7).map(|_| r.random::<f64>()).collect();
        let mut brute = 0.0;
        for i in 0..7 {
            brute += (p[i] - t[i]).abs();
        }
        brute /= 7.0;
        assert!((epsilon_loss(&p, &t).unwrap() - brute).abs() < 1e-15);
        assert!(epsilon_loss::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn zero_beta_step_is_identity() {
        // β₁ = 0 is outside the linear-schedule contract, so build ᾱ by hand.
        let s = NoiseSchedule::linear(1e-12, 1e-12, 1).unwrap();
        let y = [0.5f64, -0.25];
        let out = ancestral_step(&y, &[3.0, 4.0], 1, &s, &[0.0, 0.0]).unwrap();
        for (o, y) in out.iter().zip(y) {
            assert!((o - y).abs() < 1e-5);
        }
    }

    #[test]
    fn one_step_inversion() {
        let s = NoiseSchedule::linear(0.3, 0.3, 1).unwrap();
        let y0 = [0.25f64, -0.5, 0.9];
        let eps = [1.3, -0.4, 0.2];
        let y1 = forward_diffuse(&y0, s.sqrt_alpha_bar(1), &eps).unwrap();
        let back = ancestral_step(&y1, &eps, 1, &s, &[0.0; 3]).unwrap();
        for (b, y) in back.iter().zip(y0) {
            assert!((b - y).abs() < 1e-12);
        }
    }

    #[test]
    fn two_step_scalar_trace() {
        // Hand trace with β = [0.1, 0.3]: ᾱ₁ = 0.9, ᾱ₂ = 0.63.
        //   y2  = √0.63·0.5 + √0.37·1.2                 = 1.1267942...
        //   y1  = (y2 − 0.3/√0.37·ε̂₂)/√0.7 + σ₂·z,  ε̂₂ = 1.0, z = −0.4
        //   σ₂  = √(0.1/0.37·0.3)
        //   y0  = (y1 − 0.1/√0.1·ε̂₁)/√0.9,          ε̂₁ = 0.2
        let s = NoiseSchedule::linear(0.1, 0.3, 2).unwrap();
        let y2 = forward_diffuse(&[0.5f64], s.sqrt_alpha_bar(2), &[1.2]).unwrap();
        let y1 = ancestral_step(&y2, &[1.0], 2, &s, &[-0.4]).unwrap();
        let y0 = ancestral_step(&y1, &[0.2], 1, &s, &[0.0]).unwrap();
        let y2_ref = 0.63f64.sqrt() * 0.5 + 0.37f64.sqrt() * 1.2;
        let sigma2 = (0.1f64 / 0.37 * 0.3).sqrt();
        let y1_ref = (y2_ref - 0.3 / 0.37f64.sqrt()) / 0.7f64.sqrt() + sigma2 * -0.4;
        let y0_ref = (y1_ref - 0.1 / 0.1f64.sqrt() * 0.2) / 0.9f64.sqrt();
        assert!((y2[0] - 1.126_794_2).abs() < 1e-6);
        assert!((y1[0] - y1_ref).abs() < 1e-14);
        assert!((y0[0] - y0_ref).abs() < 1e-14);
        assert!((y0[0] - 0.611_530_8).abs() < 1e-6, "{}", y0[0]);
        assert!(ancestral_step(&y2, &[1.0], 3, &s, &[0.0]).is_err());
    }

    #[test]
    fn langevin_linearity_and_rest() {
        let y = [0.1f64, 0.2];
        assert_eq!(langevin_step(&y, &[0.0, 0.0], 0.5, &[0.0, 0.0]).unwrap(), y);
        let a = langevin_step(&y, &[1.0, -2.0], 0.5, &[0.0, 0.0]).unwrap();
        let b = langevin_step(&y, &[2.0, -4.0], 0.5, &[0.0, 0.0]).unwrap();
        for i in 0..2 {
            assert!(((b[i] - y[i]) - 2.0 * (a[i] - y[i])).abs() < 1e-15);
        }
        assert!(langevin_step(&y, &y, 0.0, &y).is_err());
    }

    #[test]
    fn langevin_chain_reaches_unit_variance() {
        // Target N(0, 1), score −y. Ten independent 10⁵-step chains pooled:
        // one chain alone only holds ~500 effective samples at η = 0.01.
        let eta = 0.01;
        let (mut s1, mut s2, mut count) = (0.0, 0.0, 0.0);
        for chain in 0..10 {
            let mut r = rng::stream(21, "langevin", chain);
            let mut y = [0.0f64];
            for i in 0..100_000 {
                let z = [rng::normal::<f64>(&mut r)];
                y = langevin_step(&y, &[-y[0]], eta, &z).unwrap().try_into().unwrap();
                if i >= 2000 {
                    s1 += y[0];
                    s2 += y[0] * y[0];
                    count += 1.0;
                }
            }
        }
        let mean = s1 / count;
        let var = s2 / count - mean * mean;
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn sampler_is_seed_deterministic() {
        let s = NoiseSchedule::linear(0.01, 0.2, 10).unwrap();
        let x = Array2::<f64>::zeros((3, 4));
        let run = |seed| {
            sample(
                |y, _, level| Ok(y.iter().map(|v| v * level).collect()),
                x.view(),
                5,
                &s,
                &mut rng::seeded(seed),
            )
            .unwrap()
        };
        let a = run(4);
        assert_eq!(a.len(), 15);
        assert_eq!(a, run(4));
        assert_ne!(a, run(5));
    }
}
