use ndarray::Array2;
use rand::Rng;

use crate::nn::{
    relu, relu_backward, BatchNorm1d, BatchNormCache, BatchNormUpdate, BiLstm, BiLstmCache, Conv1d, Dropout,
    Embedding, GradStore, ParamStore,
};
use crate::{Real, Result};

/// Token embedding → 3 × (conv, batch norm, ReLU, dropout) → BiLSTM.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub embedding: Embedding,
    pub convs: Vec<Conv1d>,
    pub norms: Vec<BatchNorm1d>,
    pub dropout: Dropout,
    pub rnn: BiLstm,
    pub zoneout: f64,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    ids: Vec<usize>,
    conv_inputs: Vec<Array2<T>>,
    norm_caches: Vec<BatchNormCache<T>>,
    norm_outputs: Vec<Array2<T>>,
    dropout_masks: Vec<Option<Array2<T>>>,
    rnn_input: Array2<T>,
    rnn_cache: BiLstmCache<T>,
}

pub struct EncoderOutput<T> {
    pub hiddens: Array2<T>,
    pub cache: EncoderCache<T>,
    pub norm_updates: Vec<BatchNormUpdate<T>>,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        vocab: usize,
        embedding_dim: usize,
        channels: &[usize],
        kernel: usize,
        units: usize,
        dropout: f64,
        zoneout: f64,
        momentum: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let embedding = Embedding::new(store, "encoder.embedding", vocab, embedding_dim, rng);
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut in_ch = embedding_dim;
        for (i, &ch) in channels.iter().enumerate() {
            convs.push(Conv1d::new(store, &format!("encoder.conv{i}"), in_ch, ch, kernel, 1, 1.0, rng));
            norms.push(BatchNorm1d::new(store, &format!("encoder.norm{i}"), ch, momentum));
            in_ch = ch;
        }
        let rnn = BiLstm::new(store, "encoder.rnn", in_ch, units, rng);
        Encoder {
            embedding,
            convs,
            norms,
            dropout: Dropout { rate: dropout },
            rnn,
            zoneout,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.rnn.units()
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        ids: &[usize],
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<EncoderOutput<T>> {
        let mut x = self.embedding.forward(p, ids)?;
        let mut conv_inputs = Vec::new();
        let mut norm_caches = Vec::new();
        let mut norm_outputs = Vec::new();
        let mut dropout_masks = Vec::new();
        let mut norm_updates = Vec::new();
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            let c = conv.forward(p, x.view())?;
            conv_inputs.push(x);
            let (n, cache, update) = norm.forward(p, c.view(), training)?;
            norm_updates.extend(update);
            let a = relu(n.view());
            let mask = self.dropout.mask(a.dim(), training, rng);
            x = Dropout::apply(a, mask.as_ref());
            norm_caches.push(cache);
            norm_outputs.push(n);
            dropout_masks.push(mask);
        }
        let masks = self.rnn.masks(ids.len(), self.zoneout, training, rng)?;
        let (hiddens, rnn_cache) = self.rnn.run(p, x.view(), masks)?;
        Ok(EncoderOutput {
            hiddens,
            cache: EncoderCache {
                ids: ids.to_vec(),
                conv_inputs,
                norm_caches,
                norm_outputs,
                dropout_masks,
                rnn_input: x,
                rnn_cache,
            },
            norm_updates,
        })
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &EncoderCache<T>,
        d_hiddens: ndarray::ArrayView2<T>,
        g: &mut GradStore<T>,
    ) {
        let mut d = self
            .rnn
            .backward_pass(p, cache.rnn_input.view(), &cache.rnn_cache, d_hiddens, g);
        for i in (0..self.convs.len()).rev() {
            if let Some(mask) = &cache.dropout_masks[i] {
                d *= mask;
            }
            let d_norm = relu_backward(cache.norm_outputs[i].view(), d.view());
            let d_conv = self.norms[i].backward(p, &cache.norm_caches[i], d_norm.view(), g);
            d = self.convs[i].backward(p, cache.conv_inputs[i].view(), d_conv.view(), g);
        }
        self.embedding.backward(&cache.ids, d.view(), g);
    }
}
