//! Differentiable operator kit.
//!
//! Each layer exposes `forward` and `backward`. Parameters live in a
//! [`ParamStore`] addressed by [`ParamId`]; layers only hold ids and shape
//! metadata. `backward` takes whatever the matching `forward` cached (or its
//! input), accumulates parameter gradients into a [`GradStore`] and returns the
//! input gradient.

mod act;
mod blocks;
mod conv;
mod embed;
mod film;
mod norm;
mod params;
mod rnn;
mod spec;

pub use act::{
    leaky_relu, leaky_relu_backward, relu, relu_backward, softplus, softplus_backward,
    LEAKY_SLOPE,
};
pub use blocks::{DBlock, DBlockCache, UBlock, UBlockCache, UBlockGrads};
pub use conv::{downsample_sum, upsample_nearest, Conv1d, StridedConv1d};
pub use embed::Embedding;
pub use film::{film_modulate, film_modulate_backward, noise_embedding, FilmCache, FilmGenerator};
pub use norm::{BatchNorm1d, BatchNormCache, BatchNormUpdate, Dropout};
pub use params::{GradStore, ParamId, ParamStore};
pub use rnn::{BiLstm, BiLstmCache, Lstm, LstmCache, ZoneoutMasks};
pub use spec::{LayerKind, LayerSpec};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::Real;

/// Gaussian init with standard deviation `gain / √fan_in`.
pub(crate) fn init_normal<T: Real>(
    rng: &mut impl Rng,
    shape: &[usize],
    fan_in: usize,
    gain: f64,
) -> ndarray::ArrayD<T> {
    let std = gain / (fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    ndarray::ArrayD::from_shape_simple_fn(shape, || T::of(dist.sample(rng)))
}
