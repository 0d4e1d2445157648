use ndarray::{Array1, Array2, ArrayD, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{GradStore, ParamId, ParamStore};
use crate::{Error, Real, Result};

/// Batch normalisation over the time axis of one sequence.
///
/// Training mode normalises with the sequence's own statistics and reports
/// them as a [`BatchNormUpdate`]; evaluation mode uses the frozen running
/// statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    normalized: Array2<T>,
    inv_std: Array1<T>,
    training: bool,
}

/// Running-statistics update owed after a training forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormUpdate<T> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Array1<T>,
    pub var: Array1<T>,
    pub momentum: f64,
}

impl<T: Real> BatchNormUpdate<T> {
    pub fn apply(&self, p: &mut ParamStore<T>) {
        let m = T::of(self.momentum);
        let one_m = T::one() - m;
        Zip::from(p.get_mut(self.mean_id))
            .and(&self.mean.view().into_dyn())
            .for_each(|r, &b| *r = m * *r + one_m * b);
        Zip::from(p.get_mut(self.var_id))
            .and(&self.var.view().into_dyn())
            .for_each(|r, &b| *r = m * *r + one_m * b);
    }
}

impl BatchNorm1d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, momentum: f64) -> Self {
        BatchNorm1d {
            gamma: store.add(format!("{name}.gamma"), ArrayD::ones(vec![channels]), true),
            beta: store.add(format!("{name}.beta"), ArrayD::zeros(vec![channels]), true),
            running_mean: store.add(format!("{name}.running_mean"), ArrayD::zeros(vec![channels]), false),
            running_var: store.add(format!("{name}.running_var"), ArrayD::ones(vec![channels]), false),
            channels,
            momentum,
            eps: 1e-5,
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: ArrayView2<T>,
        training: bool,
    ) -> Result<(Array2<T>, BatchNormCache<T>, Option<BatchNormUpdate<T>>)> {
        if x.ncols() != self.channels {
            return Err(Error::shape("batchnorm channels", self.channels, x.ncols()));
        }
        let eps = T::of(self.eps);
        let (mean, var, update) = if training {
            let n = T::of(x.nrows() as f64);
            let mean = x.sum_axis(Axis(0)) / n;
            let centered = &x - &mean;
            let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
            let update = BatchNormUpdate {
                mean_id: self.running_mean,
                var_id: self.running_var,
                mean: mean.clone(),
                var: var.clone(),
                momentum: self.momentum,
            };
            (mean, var, Some(update))
        } else {
            (p.view1(self.running_mean).to_owned(), p.view1(self.running_var).to_owned(), None)
        };
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let normalized = (&x - &mean) * &inv_std;
        let out = &normalized * &p.view1(self.gamma) + p.view1(self.beta);
        Ok((
            out,
            BatchNormCache {
                normalized,
                inv_std,
                training,
            },
            update,
        ))
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &BatchNormCache<T>,
        d_out: ArrayView2<T>,
        g: &mut GradStore<T>,
    ) -> Array2<T> {
        let xhat = &cache.normalized;
        *g.get_mut(self.gamma) += &(&d_out * xhat).sum_axis(Axis(0)).into_dyn();
        *g.get_mut(self.beta) += &d_out.sum_axis(Axis(0)).into_dyn();
        let d_xhat = &d_out * &p.view1(self.gamma);
        if !cache.training {
            return d_xhat * &cache.inv_std;
        }
        let n = T::of(xhat.nrows() as f64);
        let sum_d = d_xhat.sum_axis(Axis(0));
        let sum_dx = (&d_xhat * xhat).sum_axis(Axis(0));
        let scaled = d_xhat * n - &sum_d - &(xhat * &sum_dx);
        scaled * &cache.inv_std / n
    }
}

/// Inverted dropout: kept units are scaled by 1/(1 − rate).
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    /// Mask of zeros and 1/(1 − rate); `None` in evaluation mode or at rate 0.
    pub fn mask<T: Real>(&self, shape: (usize, usize), training: bool, rng: &mut impl Rng) -> Option<Array2<T>> {
        if !training || self.rate <= 0.0 {
            return None;
        }
        let keep = T::of(1.0 / (1.0 - self.rate));
        Some(Array2::from_shape_simple_fn(shape, || {
            if rng.random::<f64>() < self.rate {
                T::zero()
            } else {
                keep
            }
        }))
    }

    pub fn apply<T: Real>(x: Array2<T>, mask: Option<&Array2<T>>) -> Array2<T> {
        match mask {
            Some(m) => x * m,
            None => x,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn training_output_is_normalized() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm1d::new(&mut store, "bn", 3, 0.99);
        let x = Array2::from_shape_fn((6, 3), |(t, c)| (t * t) as f64 + c as f64);
        let (y, _, update) = bn.forward(&store, x.view(), true).unwrap();
        for col in y.columns() {
            assert!(col.mean().unwrap().abs() < 1e-12);
        }
        update.unwrap().apply(&mut store);
        let rm = store.view1(bn.running_mean);
        assert!((rm[0] - 0.01 * 55.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm1d::new(&mut store, "bn", 2, 0.99);
        let x = Array2::from_shape_fn((4, 2), |(t, c)| t as f64 - c as f64);
        let (a, _, u) = bn.forward(&store, x.view(), false).unwrap();
        let (b, _, _) = bn.forward(&store, x.view(), false).unwrap();
        assert!(u.is_none());
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_modes() {
        let d = Dropout { rate: 0.5 };
        let mut r = rng::seeded(1);
        assert!(d.mask::<f64>((3, 3), false, &mut r).is_none());
        let m = d.mask::<f64>((100, 10), true, &mut r).unwrap();
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        let m2 = d.mask::<f64>((100, 10), true, &mut rng::seeded(1)).unwrap();
        let m1 = d.mask::<f64>((100, 10), true, &mut rng::seeded(1)).unwrap();
        assert_eq!(m1, m2);
    }
}
