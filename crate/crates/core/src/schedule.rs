//! Diffusion noise schedules.
//!
//! Step indices are 1-based as in the usual diffusion notation: a schedule of
//! length `N` holds β₁..β_N, and ᾱ₀ is the empty product (exactly 1).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Linear-β schedule parameters as stored in the run config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(rename = "N")]
    pub steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            beta_start: 1e-4,
            beta_end: 5e-3,
            steps: 1000,
        }
    }
}

impl ScheduleConfig {
    /// 100-step schedule whose terminal ᾱ (≈ 0.078) matches the 1000-step
    /// default.
    pub fn desk() -> Self {
        ScheduleConfig {
            beta_start: 1e-4,
            beta_end: 0.05,
            steps: 100,
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.beta_start, self.beta_end, self.steps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// ᾱ₀..ᾱ_N (length N + 1, leading 1).
    alpha_bars: Vec<f64>,
    sqrt_alpha_bars: Vec<f64>,
    config: ScheduleConfig,
}

impl NoiseSchedule {
    /// N evenly spaced β values from `beta_start` to `beta_end` inclusive.
    pub fn linear(beta_start: f64, beta_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("schedule.N", "must be at least 1"));
        }
        if !(beta_start > 0.0 && beta_start < 1.0) {
            return Err(Error::config(
                "schedule.beta_start",
                format!("{beta_start} is outside (0, 1)"),
            ));
        }
        if !(beta_end >= beta_start && beta_end < 1.0) {
            return Err(Error::config(
                "schedule.beta_end",
                format!("{beta_end} must lie in [beta_start, 1)"),
            ));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            (0..steps)
                .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Ok(Self::from_betas_unchecked(
            betas,
            ScheduleConfig {
                beta_start,
                beta_end,
                steps,
            },
        ))
    }

    fn from_betas_unchecked(betas: Vec<f64>, config: ScheduleConfig) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let sqrt_alpha_bars = alpha_bars.iter().map(|a| a.sqrt()).collect();
        NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
            sqrt_alpha_bars,
            config,
        }
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// ᾱ₀..ᾱ_N.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// √ᾱ₀..√ᾱ_N.
    pub fn sqrt_alpha_bars(&self) -> &[f64] {
        &self.sqrt_alpha_bars
    }

    /// β_n for n in 1..=N.
    pub fn beta(&self, n: usize) -> f64 {
        self.betas[n - 1]
    }

    /// α_n for n in 1..=N.
    pub fn alpha(&self, n: usize) -> f64 {
        self.alphas[n - 1]
    }

    /// ᾱ_n for n in 0..=N.
    pub fn alpha_bar(&self, n: usize) -> f64 {
        self.alpha_bars[n]
    }

    pub fn sqrt_alpha_bar(&self, n: usize) -> f64 {
        self.sqrt_alpha_bars[n]
    }

    /// Posterior standard deviation σ_n = √(β_n (1 − ᾱ_{n−1}) / (1 − ᾱ_n)),
    /// forced to 0 at n = 1 so the last reverse step is noiseless.
    pub fn sigma(&self, n: usize) -> f64 {
        if n <= 1 {
            return 0.0;
        }
        let denom = 1.0 - self.alpha_bar(n);
        if denom <= 0.0 {
            return 0.0;
        }
        ((1.0 - self.alpha_bar(n - 1)) / denom * self.beta(n)).sqrt()
    }

    /// Draws a training noise level √ᾱ: a step n uniform over 1..=N, then ᾱ
    /// uniform on [ᾱ_n, ᾱ_{n−1}].
    pub fn sample_noise_level(&self, rng: &mut impl Rng) -> f64 {
        let n = rng.random_range(1..=self.len());
        let lo = self.alpha_bar(n);
        let hi = self.alpha_bar(n - 1);
        let u: f64 = rng.random();
        (lo + (hi - lo) * u).sqrt()
    }

    /// A shorter schedule for fast synthesis whose terminal ᾱ matches this
    /// one's within 1%.
    ///
    /// β_start is scaled up by `N / steps` (capped so the target stays
    /// reachable) and β_end is found by bisection on ᾱ_steps.
    pub fn inference_schedule(&self, steps: usize) -> Result<NoiseSchedule> {
        let n = self.len();
        if steps == 0 || steps > n {
            return Err(Error::config(
                "inference.steps",
                format!("{steps} must lie in [1, {n}]"),
            ));
        }
        if steps == n {
            return Ok(self.clone());
        }
        let target = self.alpha_bar(n);
        if steps == 1 {
            let beta = 1.0 - target;
            return NoiseSchedule::linear(beta, beta, 1);
        }
        let terminal = |start: f64, end: f64| -> f64 {
            (0..steps)
                .map(|i| 1.0 - (start + (end - start) * i as f64 / (steps - 1) as f64))
                .product()
        };
        let mut start = (self.config.beta_start * n as f64 / steps as f64).min(0.5);
        let constant = 1.0 - target.powf(1.0 / steps as f64);
        if start > constant {
            start = constant;
        }
        // terminal(start, end) decreases monotonically in `end`.
        let (mut lo, mut hi) = (start, 1.0 - 1e-12);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if terminal(start, mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        NoiseSchedule::linear(start, 0.5 * (lo + hi), steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn constant_schedule_products() {
        let s = NoiseSchedule::linear(0.1, 0.1, 3).unwrap();
        assert_eq!(s.betas(), &[0.1, 0.1, 0.1]);
        let expected = [1.0, 0.9, 0.81, 0.729];
        for (a, e) in s.alpha_bars().iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_schedule_endpoints() {
        let s = NoiseSchedule::linear(0.1, 0.3, 3).unwrap();
        for (b, e) in s.betas().iter().zip([0.1, 0.2, 0.3]) {
            assert!((b - e).abs() < 1e-15);
        }
        assert!((s.alpha_bar(3) - 0.504).abs() < 1e-12);
    }

    #[test]
    fn default_schedule_regression() {
        let s = ScheduleConfig::default().build().unwrap();
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        // Frozen from a direct product of (1 − β_s).
        assert!((s.alpha_bar(1000) - 0.077_749_408_084_86).abs() < 1e-12, "{}", s.alpha_bar(1000));
        assert!(s.alpha_bar(1000) < 0.1);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(NoiseSchedule::linear(0.0, 0.1, 3).is_err());
        assert!(NoiseSchedule::linear(0.2, 0.1, 3).is_err());
        assert!(NoiseSchedule::linear(0.1, 1.0, 3).is_err());
        assert!(NoiseSchedule::linear(0.1, 0.2, 0).is_err());
    }

    #[test]
    fn sqrt_alpha_bar_consistency() {
        let s = ScheduleConfig::default().build().unwrap();
        for (r, a) in s.sqrt_alpha_bars().iter().zip(s.alpha_bars()) {
            assert!((r * r - a).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_noise_level_bounds() {
        let s = NoiseSchedule::linear(0.1, 0.1, 1).unwrap();
        let mut r = rng::seeded(3);
        for _ in 0..1000 {
            let v = s.sample_noise_level(&mut r);
            assert!(v >= 0.9f64.sqrt() && v <= 1.0);
        }
    }

    #[test]
    fn noise_levels_within_schedule_range() {
        let s = ScheduleConfig::default().build().unwrap();
        let lo = s.sqrt_alpha_bar(s.len());
        let mut r = rng::seeded(11);
        for _ in 0..100_000 {
            let v = s.sample_noise_level(&mut r);
            assert!(v >= lo && v <= 1.0);
        }
    }

    #[test]
    fn interval_choice_is_uniform() {
        let s = NoiseSchedule::linear(0.1, 0.1, 3).unwrap();
        let mut r = rng::seeded(5);
        let draws = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            let a = s.sample_noise_level(&mut r).powi(2);
            let bin = (1..=3)
                .find(|&n| a >= s.alpha_bar(n) && a <= s.alpha_bar(n - 1))
                .unwrap();
            counts[bin - 1] += 1;
        }
        let p = 1.0 / 3.0;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        let mut chi2 = 0.0;
        for c in counts {
            let e = draws as f64 * p;
            assert!((c as f64 - e).abs() < 3.0 * sd, "{counts:?}");
            chi2 += (c as f64 - e).powi(2) / e;
        }
        // χ²(2) 99.9th percentile.
        assert!(chi2 < 13.82);
    }

    #[test]
    fn inference_schedule_identity_and_endpoints() {
        let train = ScheduleConfig::default().build().unwrap();
        assert_eq!(train.inference_schedule(1000).unwrap(), train);
        let target = train.sqrt_alpha_bar(1000);
        for steps in [1, 2, 5, 50, 999] {
            let s = train.inference_schedule(steps).unwrap();
            assert_eq!(s.len(), steps);
            let got = s.sqrt_alpha_bar(steps);
            assert!((got / target - 1.0).abs() < 0.01, "steps {steps}: {got} vs {target}");
            assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        }
        let one = train.inference_schedule(1).unwrap();
        assert!((1.0 - one.beta(1) - train.alpha_bar(1000)).abs() < 1e-12);
        assert!(train.inference_schedule(0).is_err());
        assert!(train.inference_schedule(1001).is_err());
    }

    #[test]
    fn posterior_sigma() {
        let s = NoiseSchedule::linear(0.1, 0.3, 3).unwrap();
        assert_eq!(s.sigma(1), 0.0);
        let expected = ((1.0 - 0.9) / (1.0 - 0.72) * 0.2f64).sqrt();
        assert!((s.sigma(2) - expected).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn alpha_bars_match_brute_force(start in 1e-5f64..0.02, extra in 0.0f64..0.05, n in 1usize..1000) {
            let s = NoiseSchedule::linear(start, start + extra, n).unwrap();
            for k in 0..=n {
                let brute: f64 = s.betas()[..k].iter().map(|b| 1.0 - b).product();
                proptest::prop_assert!((brute - s.alpha_bar(k)).abs() < 1e-12);
            }
            proptest::prop_assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        }
    }
}
