use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::nn::{relu, relu_backward, softplus, softplus_backward, Conv1d, GradStore, ParamStore};
use crate::{Real, Result};

/// Per-token duration and Gaussian range regression.
///
/// Two width-3 convolutions with ReLU feed a 1×1 projection to two channels:
/// `duration = softplus(a)` and `range = softplus(b) + min_range`.
#[derive(Debug, Clone)]
pub struct DurationPredictor {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub proj: Conv1d,
    pub min_range: f64,
}

#[derive(Debug, Clone)]
pub struct DurationCache<T> {
    input: Array2<T>,
    a: Array2<T>,
    r1: Array2<T>,
    b: Array2<T>,
    r2: Array2<T>,
    logits: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct DurationOutput<T> {
    pub durations: Vec<T>,
    pub ranges: Vec<T>,
}

/// Inverse of softplus for positive targets.
pub(crate) fn softplus_inverse(y: f64) -> f64 {
    if y > 20.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl DurationPredictor {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        in_dim: usize,
        channels: usize,
        min_range: f64,
        init_duration: f64,
        init_range: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let conv1 = Conv1d::new(store, "duration.conv1", in_dim, channels, 3, 1, 1.0, rng);
        let conv2 = Conv1d::new(store, "duration.conv2", channels, channels, 3, 1, 1.0, rng);
        let proj = Conv1d::new(store, "duration.proj", channels, 2, 1, 1, 0.1, rng);
        let bias = store.get_mut(proj.bias);
        bias[0] = T::of(softplus_inverse(init_duration));
        bias[1] = T::of(softplus_inverse((init_range - min_range).max(1e-3)));
        DurationPredictor {
            conv1,
            conv2,
            proj,
            min_range,
        }
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, hiddens: ArrayView2<T>) -> Result<(DurationOutput<T>, DurationCache<T>)> {
        let a = self.conv1.forward(p, hiddens)?;
        let r1 = relu(a.view());
        let b = self.conv2.forward(p, r1.view())?;
        let r2 = relu(b.view());
        let logits = self.proj.forward(p, r2.view())?;
        let floor = T::of(self.min_range);
        let durations = logits.column(0).iter().map(|&v| softplus(v)).collect();
        let ranges = logits.column(1).iter().map(|&v| softplus(v) + floor).collect();
        Ok((
            DurationOutput { durations, ranges },
            DurationCache {
                input: hiddens.to_owned(),
                a,
                r1,
                b,
                r2,
                logits,
            },
        ))
    }

    /// Returns the gradient with respect to the encoder hiddens.
    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &DurationCache<T>,
        d_durations: &[T],
        d_ranges: &[T],
        g: &mut GradStore<T>,
    ) -> Array2<T> {
        let mut d_logits = Array2::zeros(cache.logits.raw_dim());
        for (t, row) in cache.logits.rows().into_iter().enumerate() {
            d_logits[[t, 0]] = d_durations[t] * softplus_backward(row[0]);
            d_logits[[t, 1]] = d_ranges[t] * softplus_backward(row[1]);
        }
        let d_r2 = self.proj.backward(p, cache.r2.view(), d_logits.view(), g);
        let d_b = relu_backward(cache.b.view(), d_r2.view());
        let d_r1 = self.conv2.backward(p, cache.r1.view(), d_b.view(), g);
        let d_a = relu_backward(cache.a.view(), d_r1.view());
        self.conv1.backward(p, cache.input.view(), d_a.view(), g)
    }
}
