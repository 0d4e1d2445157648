use std::collections::HashMap;

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayView3, Ix1, Ix2, Ix3};

use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry<T> {
    pub name: String,
    pub value: ArrayD<T>,
    /// Buffers such as running statistics are stored but not optimised.
    pub trainable: bool,
}

/// Named parameter arrays keyed by a stable dotted path.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Panics on a duplicate name: layer construction is static.
    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            value,
            trainable,
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &Entry<T> {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&ArrayD<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn view1(&self, id: ParamId) -> ArrayView1<'_, T> {
        self.get(id).view().into_dimensionality::<Ix1>().expect("rank-1 parameter")
    }

    pub fn view2(&self, id: ParamId) -> ArrayView2<'_, T> {
        self.get(id).view().into_dimensionality::<Ix2>().expect("rank-2 parameter")
    }

    pub fn view3(&self, id: ParamId) -> ArrayView3<'_, T> {
        self.get(id).view().into_dimensionality::<Ix3>().expect("rank-3 parameter")
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: e.value.mapv(|v| U::of(v.f64())),
                    trainable: e.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Copies values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::shape("parameter count", self.len(), other.len()));
        }
        for entry in &mut self.entries {
            let src = other.by_name(&entry.name).ok_or_else(|| {
                Error::Format(format!("missing parameter {}", entry.name))
            })?;
            if src.shape() != entry.value.shape() {
                return Err(Error::shape(
                    entry.name.clone(),
                    format!("{:?}", entry.value.shape()),
                    format!("{:?}", src.shape()),
                ));
            }
            entry.value.assign(src);
        }
        Ok(())
    }
}

/// Gradients co-indexed with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradStore<T> {
    grads: Vec<ArrayD<T>>,
}

impl<T: Real> GradStore<T> {
    pub fn zeros_like(params: &ParamStore<T>) -> Self {
        GradStore {
            grads: params
                .entries
                .iter()
                .map(|e| ArrayD::zeros(e.value.raw_dim()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ArrayD<T>> {
        self.grads.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ArrayD<T>> {
        self.grads.iter_mut()
    }

    pub fn accumulate(&mut self, other: &GradStore<T>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in &mut self.grads {
            g.mapv_inplace(|v| v * factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v.f64() * v.f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Index of the first gradient holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.grads.iter().position(|g| g.iter().any(|v| !v.is_finite()))
    }
}
