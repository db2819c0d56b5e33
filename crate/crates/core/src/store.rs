//! Flat parameter storage.
//!
//! All named tensors of a model live in one contiguous `Vec<f64>`; entry `e`
//! occupies `[offset_e, offset_e + len_e)`. That flat index is the universe
//! over which importance maps, masks, gradients and optimizer state are laid
//! out. New entries (LoRA adapters) are only ever appended, so indices of
//! existing parameters never move.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl EntryInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// A low-rank adapter attached to a 2-D weight: the effective weight is
/// `W + scaling * B A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub target: String,
    pub a_entry: String,
    pub b_entry: String,
    pub rank: usize,
    pub scaling: f64,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterStore {
    entries: Vec<EntryInfo>,
    values: Vec<f64>,
    adapters: Vec<LoraAdapter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a named tensor; returns its entry index.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<usize> {
        let name = name.into();
        if self.entry_index(&name).is_some() {
            bail!(Config, "duplicate parameter entry `{}`", name);
        }
        let offset = self.values.len();
        let shape = tensor.shape().to_vec();
        self.values.extend_from_slice(tensor.data());
        self.entries.push(EntryInfo { name, shape, offset });
        Ok(self.entries.len() - 1)
    }

    /// Number of scalar parameters, |θ|.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entries(&self) -> &[EntryInfo] {
        &self.entries
    }

    pub fn adapters(&self) -> &[LoraAdapter] {
        &self.adapters
    }

    pub(crate) fn push_adapter(&mut self, adapter: LoraAdapter) {
        self.adapters.push(adapter);
    }

    pub fn entry_index(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.entry_index(name).ok_or_else(|| Error::UnknownEntry(name.to_string()))
    }

    pub fn entry(&self, name: &str) -> Result<&EntryInfo> {
        self.entry_index(name).map(|i| &self.entries[i]).ok_or_else(|| Error::UnknownEntry(name.to_string()))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn entry_values(&self, idx: usize) -> &[f64] {
        &self.values[self.entries[idx].range()]
    }

    pub fn entry_values_mut(&mut self, idx: usize) -> &mut [f64] {
        let r = self.entries[idx].range();
        &mut self.values[r]
    }

    pub fn values_of(&self, name: &str) -> Result<&[f64]> {
        let idx = self.entry_index(name).ok_or_else(|| Error::UnknownEntry(name.to_string()))?;
        Ok(self.entry_values(idx))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let e = self.entry(name)?;
        Tensor::new(e.shape.clone(), self.values[e.range()].to_vec())
    }

    /// Maps a global parameter index to `(entry index, offset within entry)`.
    pub fn locate(&self, index: usize) -> Option<(usize, usize)> {
        if index >= self.values.len() {
            return None;
        }
        let e = self.entries.partition_point(|e| e.offset <= index) - 1;
        Some((e, index - self.entries[e].offset))
    }

    /// Replaces every value; the layout must already match.
    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            bail!(Shape, "expected {} values, got {}", self.values.len(), values.len());
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    /// True when both stores have the same names, shapes and adapters.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries == other.entries && self.adapters == other.adapters
    }

    /// Names the entry holding the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        let i = self.values.iter().position(|v| !v.is_finite())?;
        self.locate(i).map(|(e, _)| self.entries[e].name.as_str())
    }

    /// Rebuilds a store from raw parts (used by checkpoint readers).
    pub fn from_parts(entries: Vec<(String, Vec<usize>, Vec<f64>)>, adapters: Vec<LoraAdapter>) -> Result<Self> {
        let mut store = Self::new();
        for (name, shape, data) in entries {
            store.push(name, Tensor::new(shape, data)?)?;
        }
        for a in &adapters {
            store.entry(&a.a_entry)?;
            store.entry(&a.b_entry)?;
            store.entry(&a.target)?;
        }
        store.adapters = adapters;
        Ok(store)
    }
}

/// Whether a gradient record belongs to one sample or to a whole batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Granularity {
    PerSample,
    PerBatch,
}

/// A flat gradient aligned with a [`ParameterStore`].
///
/// Records hold gradients of the *loss*, i.e. of `-log p(y|x)` for a sample
/// (or its batch mean). Importance estimators only use squares and absolute
/// values, so the sign convention does not affect them.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    pub values: Vec<f64>,
    pub granularity: Granularity,
}

impl GradientRecord {
    pub fn zeros(len: usize, granularity: Granularity) -> Self {
        Self { values: alloc::vec![0.0; len], granularity }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    /// Extends with zeros after the store grew (adapters appended).
    pub fn resize(&mut self, len: usize) {
        self.values.resize(len, 0.0);
    }

    /// Fails naming the first entry holding a NaN or infinity.
    pub fn check_finite(&self, store: &ParameterStore, context: &str) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            let entry = store.locate(i).map(|(e, _)| store.entries()[e].name.clone()).unwrap_or_else(|| alloc::format!("index {}", i));
            return Err(Error::NonFinite { entry, context: context.to_string() });
        }
        Ok(())
    }
}

/// Submodule classification of a parameter entry, from its name.
///
/// Transformer entries use the `layers.{i}.self_attn.q_proj.weight` style;
/// the short labels follow the usual Q/K/V/O, G/U/D, IN/PN/N, lm scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SubmoduleKind {
    Q,
    K,
    V,
    O,
    G,
    U,
    D,
    InputNorm,
    PostAttentionNorm,
    Norm,
    Head,
    Embedding,
    Linear,
    Lora,
    Other,
}

impl SubmoduleKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Q => "Q",
            Self::K => "K",
            Self::V => "V",
            Self::O => "O",
            Self::G => "G",
            Self::U => "U",
            Self::D => "D",
            Self::InputNorm => "IN",
            Self::PostAttentionNorm => "PN",
            Self::Norm => "N",
            Self::Head => "lm",
            Self::Embedding => "embed",
            Self::Linear => "linear",
            Self::Lora => "lora",
            Self::Other => "other",
        }
    }

    pub fn is_norm(self) -> bool {
        matches!(self, Self::InputNorm | Self::PostAttentionNorm | Self::Norm)
    }

    pub fn classify(name: &str) -> Self {
        if name.contains(".lora_") {
            return Self::Lora;
        }
        let parts: Vec<&str> = name.split('.').collect();
        let has = |p: &str| parts.contains(&p);
        if has("q_proj") {
            Self::Q
        } else if has("k_proj") {
            Self::K
        } else if has("v_proj") {
            Self::V
        } else if has("o_proj") {
            Self::O
        } else if has("gate_proj") {
            Self::G
        } else if has("up_proj") {
            Self::U
        } else if has("down_proj") {
            Self::D
        } else if has("input_layernorm") {
            Self::InputNorm
        } else if has("post_attention_layernorm") {
            Self::PostAttentionNorm
        } else if has("norm") {
            Self::Norm
        } else if has("lm_head") || has("head") {
            Self::Head
        } else if parts.iter().any(|p| p.starts_with("embed")) {
            Self::Embedding
        } else if has("linear") {
            Self::Linear
        } else {
            Self::Other
        }
    }
}

impl fmt::Display for SubmoduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Layer index from a `layers.{i}.` prefix; `None` for global entries.
pub fn layer_of(name: &str) -> Option<usize> {
    let rest = name.strip_prefix("layers.")?;
    rest.split('.').next()?.parse().ok()
}
