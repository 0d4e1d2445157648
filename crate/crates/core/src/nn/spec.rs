use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv1d,
    StridedConv1d,
    NearestUpsample,
    Birnn,
    Embedding,
    Batchnorm,
    Dropout,
    Film,
    Ublock,
    Dblock,
}

/// Manifest entry describing one layer of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    /// Stride or scale factor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind, channels: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
            channels,
            kernel: None,
            factor: None,
            activation: None,
        }
    }

    pub fn kernel(mut self, k: usize) -> Self {
        self.kernel = Some(k);
        self
    }

    pub fn factor(mut self, f: usize) -> Self {
        self.factor = Some(f);
        self
    }

    pub fn activation(mut self, a: &str) -> Self {
        self.activation = Some(a.into());
        self
    }
}
