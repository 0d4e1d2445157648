//! Feature-wise linear modulation and the noise-level embedding.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng;

use super::act::{leaky_relu, leaky_relu_backward};
use super::{Conv1d, GradStore, ParamStore};
use crate::{Error, Real, Result};

/// `scale ⊙ x + shift`, all three `(length, channels)`.
pub fn film_modulate<T: Real>(
    x: ArrayView2<T>,
    scale: ArrayView2<T>,
    shift: ArrayView2<T>,
) -> Result<Array2<T>> {
    if x.dim() != scale.dim() || x.dim() != shift.dim() {
        return Err(Error::Resolution {
            stage: "film".into(),
            detail: format!(
                "activation {:?}, scale {:?}, shift {:?}",
                x.dim(),
                scale.dim(),
                shift.dim()
            ),
        });
    }
    Ok(Zip::from(&x)
        .and(&scale)
        .and(&shift)
        .map_collect(|&x, &a, &b| a * x + b))
}

/// Returns `(d_x, d_scale)`; `d_shift` is `d_out` itself.
pub fn film_modulate_backward<T: Real>(
    x: ArrayView2<T>,
    scale: ArrayView2<T>,
    d_out: ArrayView2<T>,
) -> (Array2<T>, Array2<T>) {
    (&d_out * &scale, &d_out * &x)
}

/// Sinusoidal embedding of `5000·√ᾱ`: entries `2j` and `2j + 1` hold the sine
/// and cosine at frequency `10000^(−j/(dim/2))`.
pub fn noise_embedding<T: Real>(sqrt_alpha_bar: f64, dim: usize) -> Result<Array1<T>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::config("noise_embedding.dim", format!("{dim} must be even and positive")));
    }
    let pos = 5000.0 * sqrt_alpha_bar;
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for j in 0..half {
        let freq = (-(10000f64.ln()) * j as f64 / half as f64).exp();
        out[2 * j] = T::of((pos * freq).sin());
        out[2 * j + 1] = T::of((pos * freq).cos());
    }
    Ok(out)
}

/// Produces FiLM scale and shift from downsampling-branch features plus the
/// noise-level embedding: `g = lrelu(conv(h) + emb)`, `scale = conv(g)`,
/// `shift = conv(g)`.
#[derive(Debug, Clone)]
pub struct FilmGenerator {
    pub input: Conv1d,
    pub scale: Conv1d,
    pub shift: Conv1d,
    pub in_ch: usize,
    pub out_ch: usize,
}

#[derive(Debug, Clone)]
pub struct FilmCache<T> {
    pre: Array2<T>,
    hidden: Array2<T>,
}

impl FilmGenerator {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        let input = Conv1d::new(store, &format!("{name}.input"), in_ch, in_ch, 3, 1, 1.0, rng);
        let scale = Conv1d::new(store, &format!("{name}.scale"), in_ch, out_ch, 3, 1, 0.1, rng);
        let shift = Conv1d::new(store, &format!("{name}.shift"), in_ch, out_ch, 3, 1, 0.1, rng);
        // Start near the identity modulation.
        store.get_mut(scale.bias).fill(T::one());
        FilmGenerator {
            input,
            scale,
            shift,
            in_ch,
            out_ch,
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        features: ArrayView2<T>,
        embedding: ArrayView1<T>,
    ) -> Result<((Array2<T>, Array2<T>), FilmCache<T>)> {
        if embedding.len() != self.in_ch {
            return Err(Error::shape("film embedding", self.in_ch, embedding.len()));
        }
        let mut pre = self.input.forward(p, features)?;
        pre += &embedding;
        let hidden = leaky_relu(pre.view());
        let scale = self.scale.forward(p, hidden.view())?;
        let shift = self.shift.forward(p, hidden.view())?;
        Ok(((scale, shift), FilmCache { pre, hidden }))
    }

    /// Returns the gradient with respect to `features`.
    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        features: ArrayView2<T>,
        cache: &FilmCache<T>,
        d_scale: ArrayView2<T>,
        d_shift: ArrayView2<T>,
        g: &mut GradStore<T>,
    ) -> Array2<T> {
        let mut d_hidden = self.scale.backward(p, cache.hidden.view(), d_scale, g);
        d_hidden += &self.shift.backward(p, cache.hidden.view(), d_shift, g);
        let d_pre = leaky_relu_backward(cache.pre.view(), d_hidden.view());
        self.input.backward(p, features, d_pre.view(), g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_and_zero_scale() {
        let x = array![[1.0, -2.0], [3.0, 0.5]];
        let ones = Array2::ones((2, 2));
        let zeros = Array2::zeros((2, 2));
        assert_eq!(film_modulate(x.view(), ones.view(), zeros.view()).unwrap(), x);
        let shift = array![[0.1, 0.2], [0.3, 0.4]];
        assert_eq!(film_modulate(x.view(), zeros.view(), shift.view()).unwrap(), shift);
        assert!(film_modulate(x.view(), Array2::ones((3, 2)).view(), zeros.view()).is_err());
    }

    #[test]
    fn embedding_at_zero_alternates() {
        let e = noise_embedding::<f64>(0.0, 8).unwrap();
        assert_eq!(e.to_vec(), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(noise_embedding::<f64>(0.3, 8).unwrap(), noise_embedding::<f64>(0.3, 8).unwrap());
        assert!(noise_embedding::<f64>(0.3, 7).is_err());
    }

    #[test]
    fn embeddings_are_pairwise_distinct() {
        let embs: Vec<Array1<f64>> = (0..1000)
            .map(|i| noise_embedding(i as f64 / 999.0, 64).unwrap())
            .collect();
        let mut min_gap = f64::INFINITY;
        for a in 0..embs.len() {
            for b in a + 1..embs.len() {
                let gap = (&embs[a] - &embs[b]).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                min_gap = min_gap.min(gap);
            }
        }
        assert!(min_gap > 0.0);
    }
}
