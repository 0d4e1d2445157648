//! Checkpoint container: little-endian, versioned, SHA-256 trailer.
//!
//! ```text
//! magic "PHDCKPT\0" | version u32 | manifest_len u32 | manifest (JSON)
//! every parameter in registration order, then Adam m and v for each
//! trainable parameter, then the parameter moving average in registration
//! order; elements are f32 or f64 as named in the manifest
//! sha256 of everything above (32 bytes)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{Model, ModelConfig};
use crate::nn::{GradStore, LayerSpec, ParamStore};
use crate::train::{AdamState, TrainState};
use crate::{Error, Real, Result};

pub const CHECKPOINT_VERSION: u32 = 2;
const MAGIC: &[u8; 8] = b"PHDCKPT\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn of<T: Real>() -> Dtype {
        if std::mem::size_of::<T>() == 4 {
            Dtype::F32
        } else {
            Dtype::F64
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub dtype: Dtype,
    pub step: u64,
    pub seed: u64,
    pub eps_ema: f64,
    pub adam_t: u64,
    pub model: ModelConfig,
    pub layers: Vec<LayerSpec>,
    pub tensors: Vec<TensorInfo>,
}

fn put<T: Real>(out: &mut Vec<u8>, dtype: Dtype, values: impl Iterator<Item = T>) {
    for v in values {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v.f64() as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.f64().to_le_bytes()),
        }
    }
}

pub fn to_bytes<T: Real>(model: &Model, state: &TrainState<T>) -> Vec<u8> {
    let dtype = Dtype::of::<T>();
    let p = &state.params;
    let manifest = CheckpointManifest {
        dtype,
        step: state.step,
        seed: state.seed,
        eps_ema: state.eps_ema,
        adam_t: state.adam.t,
        model: model.config.clone(),
        layers: model.layer_specs(),
        tensors: p
            .entries()
            .iter()
            .map(|e| TensorInfo {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                trainable: e.trainable,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for e in p.entries() {
        put(&mut out, dtype, e.value.iter().copied());
    }
    for (i, e) in p.entries().iter().enumerate() {
        if e.trainable {
            let id = p.id(&e.name).expect("registered");
            debug_assert_eq!(id.index(), i);
            put(&mut out, dtype, state.adam.m.get(id).iter().copied());
            put(&mut out, dtype, state.adam.v.get(id).iter().copied());
        }
    }
    for e in state.ema.entries() {
        put(&mut out, dtype, e.value.iter().copied());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn fill<T: Real>(&mut self, dtype: Dtype, dst: &mut ndarray::ArrayD<T>) -> Result<()> {
        let raw = self.take(dst.len() * dtype.width())?;
        let chunks = raw.chunks_exact(dtype.width());
        for (slot, c) in dst.iter_mut().zip(chunks) {
            *slot = match dtype {
                Dtype::F32 => T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64),
                Dtype::F64 => T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))),
            };
        }
        Ok(())
    }
}

pub fn read_manifest(bytes: &[u8]) -> Result<(CheckpointManifest, usize)> {
    if bytes.len() < MAGIC.len() + 8 + 32 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let mut c = Cursor { buf: bytes, pos: 8 };
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = c.u32()? as usize;
    let manifest = serde_json::from_slice(c.take(len)?).map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    Ok((manifest, c.pos))
}

/// Rebuilds the model from the stored config and restores parameters,
/// optimizer moments and counters. Values are converted if the stored
/// element type differs from `T`.
pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<(Model, TrainState<T>)> {
    let (manifest, offset) = read_manifest(bytes)?;
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Integrity("checkpoint checksum mismatch".into()));
    }
    let (model, mut params) = Model::from_seed::<T>(manifest.model.clone(), 0)?;
    if params.len() != manifest.tensors.len() {
        return Err(Error::shape("checkpoint tensors", params.len(), manifest.tensors.len()));
    }
    for (e, info) in params.entries().iter().zip(&manifest.tensors) {
        if e.name != info.name || e.value.shape() != info.shape.as_slice() {
            return Err(Error::Format(format!(
                "tensor {} {:?} does not match model tensor {} {:?}",
                info.name,
                info.shape,
                e.name,
                e.value.shape()
            )));
        }
    }
    let mut c = Cursor { buf: body, pos: offset };
    let ids: Vec<_> = params.entries().iter().map(|e| params.id(&e.name).expect("registered")).collect();
    for &id in &ids {
        c.fill(manifest.dtype, params.get_mut(id))?;
    }
    let mut m = GradStore::zeros_like(&params);
    let mut v = GradStore::zeros_like(&params);
    for (&id, info) in ids.iter().zip(&manifest.tensors) {
        if info.trainable {
            c.fill(manifest.dtype, m.get_mut(id))?;
            c.fill(manifest.dtype, v.get_mut(id))?;
        }
    }
    let mut ema = params.clone();
    for &id in &ids {
        c.fill(manifest.dtype, ema.get_mut(id))?;
    }
    if c.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", body.len() - c.pos)));
    }
    let state = TrainState {
        step: manifest.step,
        params,
        adam: AdamState {
            m,
            v,
            t: manifest.adam_t,
        },
        seed: manifest.seed,
        eps_ema: manifest.eps_ema,
        ema,
    };
    Ok((model, state))
}

/// Writes atomically via a temporary sibling file.
pub fn save<T: Real>(path: &Path, model: &Model, state: &TrainState<T>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, to_bytes(model, state))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<(Model, TrainState<T>)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    from_bytes(&bytes)
}

/// Fresh training state around freshly initialised parameters.
pub fn initial_state<T: Real>(params: ParamStore<T>, seed: u64) -> TrainState<T> {
    TrainState {
        step: 0,
        adam: AdamState::new(&params),
        ema: params.clone(),
        params,
        seed,
        eps_ema: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BlockConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            embedding_dim: 4,
            encoder_channels: vec![4, 4, 4],
            lstm_units: 3,
            duration_channels: 4,
            decoder_input_channels: 4,
            ublocks: vec![BlockConfig { channels: 4, factor: 2 }, BlockConfig { channels: 4, factor: 2 }],
            wave_input_channels: 4,
            dblock_channels: vec![4],
            samples_per_frame: 4,
            ..ModelConfig::desk()
        }
    }

    fn state<T: Real>() -> (Model, TrainState<T>) {
        let (model, params) = Model::from_seed::<T>(tiny(), 8).unwrap();
        let mut st = initial_state(params, 21);
        st.step = 17;
        st.adam.t = 17;
        st.eps_ema = 0.25;
        st.ema.get_mut(st.params.id("decoder.output.bias").unwrap()).fill(T::of(-0.5));
        let id = st.params.id("decoder.output.bias").unwrap();
        st.adam.m.get_mut(id).fill(T::of(0.125));
        st.adam.v.get_mut(id).fill(T::of(3.5));
        (model, st)
    }

    #[test]
    fn round_trip_both_precisions() {
        let (model, st) = state::<f32>();
        let (m2, st2) = from_bytes::<f32>(&to_bytes(&model, &st)).unwrap();
        assert_eq!(m2.config, model.config);
        assert_eq!(st2.step, 17);
        assert_eq!(st2.seed, 21);
        assert_eq!(st2.eps_ema, 0.25);
        assert_eq!(st2.adam.m, st.adam.m);
        assert_eq!(st2.adam.v, st.adam.v);
        assert_eq!(st2.ema, st.ema);
        for (a, b) in st.params.entries().iter().zip(st2.params.entries()) {
            assert_eq!(a.value, b.value);
        }
        let (model, st) = state::<f64>();
        let (_, st2) = from_bytes::<f64>(&to_bytes(&model, &st)).unwrap();
        for (a, b) in st.params.entries().iter().zip(st2.params.entries()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn corruption_and_version_detected() {
        let (model, st) = state::<f32>();
        let mut bytes = to_bytes(&model, &st);
        let n = bytes.len();
        bytes[n - 40] ^= 0x10;
        assert!(matches!(from_bytes::<f32>(&bytes), Err(Error::Integrity(_))));
        let mut bytes = to_bytes(&model, &st);
        bytes[8] = 7;
        assert!(matches!(from_bytes::<f32>(&bytes), Err(Error::Version { found: 7, .. })));
        let bytes = to_bytes(&model, &st);
        assert!(from_bytes::<f32>(&bytes[..bytes.len() / 2]).is_err());
    }

    #[test]
    fn manifest_lists_layers() {
        let (model, st) = state::<f32>();
        let (m, _) = read_manifest(&to_bytes(&model, &st)).unwrap();
        assert_eq!(m.dtype, Dtype::F32);
        assert!(m.layers.iter().any(|l| l.name == "decoder.ublock0"));
        assert_eq!(m.tensors.len(), st.params.len());
    }
}
