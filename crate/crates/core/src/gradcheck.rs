//! Central finite-difference checks for hand-written backward passes.

use rand::seq::index::sample;
use rand::Rng;

use crate::nn::{GradStore, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    pub tolerance: f64,
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
    /// Skip coordinates whose ±step interval straddles a kink of a
    /// piecewise-linear op (ReLU, L1), detected by disagreement between the
    /// central differences at `step` and `step / 2`.
    pub skip_kinks: bool,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-3,
            tolerance: 1e-4,
            floor: 1e-3,
            skip_kinks: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub label: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
    pub mismatches: Vec<Mismatch>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.mismatches.is_empty()
    }

    /// Fraction of attempted coordinates that were actually compared.
    pub fn coverage(&self) -> f64 {
        self.checked as f64 / (self.checked + self.skipped).max(1) as f64
    }

    pub fn merge(&mut self, other: Report) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.worst = self.worst.max(other.worst);
        self.mismatches.extend(other.mismatches);
    }

    /// Panics with the first few mismatches.
    pub fn assert_ok(&self, what: &str) {
        assert!(self.checked > 0, "{what}: nothing was checked");
        assert!(
            self.mismatches.is_empty(),
            "{what}: {} of {} coordinates off ({} skipped, worst {:.3e}): {:?}",
            self.mismatches.len(),
            self.checked,
            self.skipped,
            self.worst,
            &self.mismatches[..self.mismatches.len().min(5)]
        );
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

impl GradCheck {
    /// Central difference, or `None` when the kink test rejects it.
    fn numeric(&self, mut eval: impl FnMut(f64) -> f64) -> Option<f64> {
        let h = self.step;
        let (up, down) = (eval(h), eval(-h));
        let full = (up - down) / (2.0 * h);
        if self.skip_kinks {
            let (up2, down2, mid) = (eval(h / 2.0), eval(-h / 2.0), eval(0.0));
            let half = (up2 - down2) / h;
            // Smooth functions agree to O(h²) on both the slope and the
            // curvature ratio; a kink off the centre breaks the first, one
            // at the centre breaks the second.
            let curvature = ((up + down - 2.0 * mid) - 4.0 * (up2 + down2 - 2.0 * mid)) / h;
            let scale = full.abs().max(self.floor);
            if relative_error(full, half, self.floor) > self.tolerance / 4.0
                || curvature.abs() / scale > self.tolerance / 4.0
            {
                return None;
            }
        }
        Some(full)
    }

    fn compare(&self, report: &mut Report, label: &str, index: usize, analytic: f64, numeric: f64) {
        let relative = relative_error(analytic, numeric, self.floor);
        report.checked += 1;
        report.worst = report.worst.max(relative);
        if !(relative < self.tolerance) {
            report.mismatches.push(Mismatch {
                label: label.to_string(),
                index,
                analytic,
                numeric,
                relative,
            });
        }
    }

    /// Checks `analytic` against the numeric gradient of `loss` at `x`.
    pub fn check_slice(
        &self,
        label: &str,
        x: &mut [f64],
        analytic: &[f64],
        mut loss: impl FnMut(&[f64]) -> f64,
    ) -> Report {
        assert_eq!(x.len(), analytic.len(), "{label}: gradient length");
        let mut report = Report::default();
        for i in 0..x.len() {
            let orig = x[i];
            let numeric = self.numeric(|dx| {
                x[i] = orig + dx;
                loss(x)
            });
            x[i] = orig;
            match numeric {
                Some(n) => self.compare(&mut report, label, i, analytic[i], n),
                None => report.skipped += 1,
            }
        }
        report
    }

    /// Checks parameter gradients. With `fraction < 1` a random subset of
    /// each tensor is perturbed, never fewer than `min_per_tensor`
    /// coordinates.
    pub fn check_params(
        &self,
        params: &mut ParamStore<f64>,
        analytic: &GradStore<f64>,
        fraction: f64,
        min_per_tensor: usize,
        rng: &mut impl Rng,
        mut loss: impl FnMut(&ParamStore<f64>) -> f64,
    ) -> Report {
        let mut report = Report::default();
        for idx in 0..params.len() {
            let entry = &params.entries()[idx];
            if !entry.trainable {
                continue;
            }
            let label = entry.name.clone();
            let id = params.id(&label).expect("registered name");
            let n = entry.value.len();
            let k = ((n as f64 * fraction).ceil() as usize).max(min_per_tensor).min(n);
            let picks = sample(rng, n, k).into_vec();
            for i in picks {
                let orig = params.get(id).as_slice_memory_order().expect("contiguous")[i];
                let set = |p: &mut ParamStore<f64>, v: f64| {
                    p.get_mut(id).as_slice_memory_order_mut().expect("contiguous")[i] = v;
                };
                let numeric = self.numeric(|dx| {
                    set(params, orig + dx);
                    loss(params)
                });
                set(params, orig);
                let a = analytic.get(id).as_slice_memory_order().expect("contiguous")[i];
                match numeric {
                    Some(n) => self.compare(&mut report, &label, i, a, n),
                    None => report.skipped += 1,
                }
            }
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_wrong_gradient() {
        let gc = GradCheck::default();
        let mut x = vec![0.3, -1.2];
        let good = gc.check_slice("sq", &mut x, &[0.6, -2.4], |x| x[0] * x[0] + x[1] * x[1]);
        assert!(good.passed());
        let bad = gc.check_slice("sq", &mut x, &[0.6, -2.0], |x| x[0] * x[0] + x[1] * x[1]);
        assert_eq!(bad.mismatches.len(), 1);
        assert_eq!(bad.mismatches[0].index, 1);
    }

    #[test]
    fn kinks_are_skipped_not_hidden() {
        let gc = GradCheck {
            skip_kinks: true,
            ..GradCheck::default()
        };
        // |x| has a kink within one step of 2e-4; the smooth coordinate is kept.
        let mut x = vec![2e-4, 0.5];
        let r = gc.check_slice("abs", &mut x, &[1.0, 1.0], |x| x[0].abs() + x[1].abs());
        assert_eq!((r.checked, r.skipped), (1, 1));
        let bad = gc.check_slice("abs", &mut x, &[1.0, 0.9], |x| x[0].abs() + x[1].abs());
        assert_eq!(bad.mismatches.len(), 1);
    }
}
