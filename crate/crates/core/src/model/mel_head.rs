use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;

use crate::nn::{Conv1d, GradStore, ParamStore, UBlock, UBlockCache};
use crate::{Error, Real, Result};

/// Auxiliary mel-spectrogram decoder used only during training: one UBlock at
/// factor 1 (the conditioning frames already sit at the mel frame rate) and a
/// 1×1 projection to the mel bins.
#[derive(Debug, Clone)]
pub struct MelHead {
    pub block: UBlock,
    pub proj: Conv1d,
    pub bins: usize,
}

#[derive(Debug, Clone)]
pub struct MelHeadCache<T> {
    block: UBlockCache<T>,
    hidden: Array2<T>,
}

impl MelHead {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        in_dim: usize,
        channels: usize,
        bins: usize,
        dilations: [usize; 4],
        rng: &mut impl Rng,
    ) -> Self {
        MelHead {
            block: UBlock::new(store, "mel_head.ublock", in_dim, channels, 1, dilations, rng),
            proj: Conv1d::new(store, "mel_head.proj", channels, bins, 1, 1, 1.0, rng),
            bins,
        }
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, frames: ArrayView2<T>) -> Result<(Array2<T>, MelHeadCache<T>)> {
        let (hidden, block) = self.block.forward(p, frames, None)?;
        let mel = self.proj.forward(p, hidden.view())?;
        Ok((mel, MelHeadCache { block, hidden }))
    }

    pub fn backward<T: Real>(&self, p: &ParamStore<T>, cache: &MelHeadCache<T>, d_mel: ArrayView2<T>, g: &mut GradStore<T>) -> Array2<T> {
        let d_hidden = self.proj.backward(p, cache.hidden.view(), d_mel, g);
        self.block.backward(p, &cache.block, d_hidden.view(), g).input
    }
}

/// Mean squared error over every mel bin of every frame.
pub fn mel_loss<T: Real>(pred: ArrayView2<T>, target: ArrayView2<T>) -> Result<T> {
    if pred.dim() != target.dim() {
        return Err(Error::shape("mel_loss", format!("{:?}", target.dim()), format!("{:?}", pred.dim())));
    }
    if pred.is_empty() {
        return Err(Error::Degenerate("mel_loss on empty input".into()));
    }
    let mut sum = T::zero();
    Zip::from(&pred).and(&target).for_each(|&a, &b| sum += (a - b) * (a - b));
    Ok(sum / T::of(pred.len() as f64))
}

pub fn mel_loss_grad<T: Real>(pred: ArrayView2<T>, target: ArrayView2<T>) -> Array2<T> {
    let scale = T::of(2.0 / pred.len() as f64);
    Zip::from(&pred).and(&target).map_collect(|&a, &b| scale * (a - b))
}
