use ndarray::{Array2, Axis};
use rand::Rng;

use super::{init_normal, GradStore, ParamId, ParamStore};
use crate::{Error, Real, Result};

/// Learned lookup table, one row per token id.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let table = store.add(format!("{name}.table"), init_normal(rng, &[vocab, dim], 1, 0.3), true);
        Embedding { table, vocab, dim }
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, ids: &[usize]) -> Result<Array2<T>> {
        let table = p.view2(self.table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab) {
            return Err(Error::UnknownToken {
                id: bad,
                vocab: self.vocab,
            });
        }
        Ok(table.select(Axis(0), ids))
    }

    pub fn backward<T: Real>(&self, ids: &[usize], d_out: ndarray::ArrayView2<T>, g: &mut GradStore<T>) {
        let gt = g.get_mut(self.table);
        for (row, &id) in d_out.rows().into_iter().zip(ids) {
            let mut dst = gt.index_axis_mut(Axis(0), id);
            dst += &row;
        }
    }
}
