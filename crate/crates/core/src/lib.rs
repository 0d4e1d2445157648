//! Score-matching diffusion text-to-waveform pipeline.
//!
//! A phoneme-like token sequence is encoded, resampled to the frame rate with
//! duration-driven Gaussian upsampling, and decoded into a waveform by an
//! ε-predicting diffusion decoder that is refined iteratively from noise.
//!
//! Every differentiable operator carries an explicit forward/backward pair
//! (see [`nn`]); there is no tape or graph compiler.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod model;
pub mod gradcheck;
pub mod nn;
pub mod rng;
pub mod schedule;
pub mod train;

mod real;

pub use error::{Error, Result};
pub use real::Real;

pub use align::{Alignment, WindowSpec};
pub use config::{Precision, RunConfig};
pub use data::{MelConfig, Utterance};
pub use model::{Model, ModelConfig};
pub use nn::{GradStore, ParamStore};
pub use schedule::NoiseSchedule;

/// Time-major sequence of feature vectors: one row per frame (or sample).
pub type FrameMatrix<T> = ndarray::Array2<T>;
