//! Low-rank adapters: `W' = W + (alpha / r) B A` with `A: [r, in]` drawn
//! small and random and `B: [out, r]` starting at zero.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{uniform_tensor, ForwardOptions, LinearTrace};
use crate::autodiff::{Graph, Var};
use crate::error::{bail, Result};
use crate::rng;
use crate::store::{LoraAdapter, ParameterStore, SubmoduleKind};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Weight entries to adapt; empty means [`default_lora_targets`].
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default)]
    pub dropout: f64,
}

fn default_rank() -> usize {
    8
}

fn default_alpha() -> f64 {
    32.0
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: default_rank(), alpha: default_alpha(), targets: Vec::new(), dropout: 0.0 }
    }
}

impl LoraConfig {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Query and value projections for transformers; hidden linear layers for
/// MLPs.
pub fn default_lora_targets(store: &ParameterStore) -> Vec<String> {
    let pick = |want: &[SubmoduleKind]| -> Vec<String> {
        store
            .entries()
            .iter()
            .filter(|e| e.shape.len() == 2 && e.name.ends_with(".weight"))
            .filter(|e| want.contains(&SubmoduleKind::classify(&e.name)))
            .map(|e| e.name.clone())
            .collect()
    };
    let attn = pick(&[SubmoduleKind::Q, SubmoduleKind::V]);
    if attn.is_empty() {
        pick(&[SubmoduleKind::Linear])
    } else {
        attn
    }
}

/// Appends one adapter pair per target, named `{target}.lora_A.{tag}` and
/// `{target}.lora_B.{tag}`. Returns the new entry indices.
pub fn attach_lora(store: &mut ParameterStore, config: &LoraConfig, tag: &str, seed: u64) -> Result<Vec<usize>> {
    if config.rank == 0 || !(config.alpha > 0.0) {
        bail!(Config, "lora rank and alpha must be positive");
    }
    if !(0.0..1.0).contains(&config.dropout) {
        bail!(Config, "lora dropout must lie in [0, 1), got {}", config.dropout);
    }
    let targets = if config.targets.is_empty() { default_lora_targets(store) } else { config.targets.clone() };
    if targets.is_empty() {
        bail!(Config, "no lora targets in this model");
    }
    let mut shapes = Vec::with_capacity(targets.len());
    for t in &targets {
        let e = store.entry(t)?;
        if e.shape.len() != 2 {
            bail!(Config, "lora target `{}` is not a 2-D weight", t);
        }
        let (out, inp) = (e.shape[0], e.shape[1]);
        if config.rank > out.min(inp) {
            bail!(Config, "lora rank {} exceeds min dimension {} of `{}`", config.rank, out.min(inp), t);
        }
        shapes.push((out, inp));
    }
    let mut r = rng::rng_for(seed, &[rng::tag::LORA, targets.len() as u64, store.len() as u64]);
    let mut added = Vec::new();
    for (t, (out, inp)) in targets.iter().zip(shapes) {
        let a_entry = format!("{}.lora_A.{}", t, tag);
        let b_entry = format!("{}.lora_B.{}", t, tag);
        let bound = 1.0 / libm::sqrt(inp as f64);
        added.push(store.push(a_entry.clone(), uniform_tensor(alloc::vec![config.rank, inp], bound, &mut r)?)?);
        added.push(store.push(b_entry.clone(), Tensor::zeros(alloc::vec![out, config.rank])?)?);
        store.push_adapter(LoraAdapter { target: t.clone(), a_entry, b_entry, rank: config.rank, scaling: config.scaling(), dropout: config.dropout });
    }
    Ok(added)
}

/// Effective weight `W + Σ scaling · B A` over every adapter on `target`.
pub fn merged_weight(store: &ParameterStore, target: &str) -> Result<Tensor> {
    let base = store.tensor(target)?;
    let (out, inp) = (base.shape()[0], base.shape()[1]);
    let mut w = base.into_data();
    for ad in store.adapters().iter().filter(|a| a.target == target) {
        let a = store.values_of(&ad.a_entry)?;
        let b = store.values_of(&ad.b_entry)?;
        for i in 0..out {
            for j in 0..inp {
                let ba: f64 = (0..ad.rank).map(|k| b[i * ad.rank + k] * a[k * inp + j]).sum();
                w[i * inp + j] += ad.scaling * ba;
            }
        }
    }
    Tensor::new(alloc::vec![out, inp], w)
}

/// `x Wᵀ (+ adapters) (+ b)`, recording the input for magnitude scoring.
pub(super) fn linear(
    g: &mut Graph,
    store: &ParameterStore,
    x: Var,
    weight: &str,
    bias: Option<&str>,
    traces: &mut Vec<LinearTrace>,
    opts: &mut ForwardOptions<'_>,
) -> Result<Var> {
    let wi = store.index_of(weight)?;
    let w = g.param(store, wi);
    let mut y = g.matmul_t(x, w)?;
    for ad in store.adapters().iter().filter(|a| a.target == weight) {
        let xin = match opts.dropout_rng.as_deref_mut() {
            Some(r) if ad.dropout > 0.0 => {
                let keep = 1.0 - ad.dropout;
                let n = g.value(x).len();
                let mask = (0..n).map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                g.mask_mul(x, mask)?
            }
            _ => x,
        };
        let a = g.param(store, store.index_of(&ad.a_entry)?);
        let b = g.param(store, store.index_of(&ad.b_entry)?);
        let xa = g.matmul_t(xin, a)?;
        let xab = g.matmul_t(xa, b)?;
        let delta = g.scale(xab, ad.scaling);
        y = g.add(y, delta)?;
    }
    let bias_entry = match bias {
        Some(name) => {
            let bi = store.index_of(name)?;
            let b = g.param(store, bi);
            y = g.add_row(y, b)?;
            Some(bi)
        }
        None => None,
    };
    traces.push(LinearTrace { weight_entry: wi, bias_entry, input: x });
    Ok(y)
}
