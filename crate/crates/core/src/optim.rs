//! Masked SGD and Adam.
//!
//! Both optimizers touch only the indices in scope; everything else,
//! including Adam moments and step counters, is left exactly as it was.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::masking::GradientMask;
use crate::store::{GradientRecord, ParameterStore};

/// Which parameters a step may change.
#[derive(Debug, Clone, Copy)]
pub enum UpdateScope<'a> {
    All,
    /// Strictly ascending flat indices.
    Indices(&'a [usize]),
}

impl<'a> UpdateScope<'a> {
    pub fn from_mask(mask: &'a GradientMask) -> Self {
        Self::Indices(mask.indices())
    }

    fn for_each(&self, len: usize, mut f: impl FnMut(usize) -> Result<()>) -> Result<()> {
        match self {
            Self::All => (0..len).try_for_each(&mut f),
            Self::Indices(ix) => ix.iter().try_for_each(|&i| f(i)),
        }
    }

    fn check(&self, len: usize) -> Result<()> {
        if let Self::Indices(ix) = self {
            if let Some(&last) = ix.last() {
                if last >= len {
                    bail!(Shape, "update index {} outside {} parameters", last, len);
                }
            }
        }
        Ok(())
    }
}

fn check_aligned(store: &ParameterStore, grad: &GradientRecord) -> Result<()> {
    if grad.len() != store.len() {
        bail!(Shape, "gradient of {} values for a store of {}", grad.len(), store.len());
    }
    Ok(())
}

fn non_finite(store: &ParameterStore, i: usize, what: &str) -> Error {
    let entry = store.locate(i).map(|(e, _)| store.entries()[e].name.clone()).unwrap_or_default();
    Error::NonFinite { entry, context: alloc::format!("{} at flat index {}", what, i) }
}

/// `θ_i ← θ_i − η g_i` for every `i` in scope. Nothing is written if any
/// update would be non-finite.
pub fn sgd_step(store: &mut ParameterStore, grad: &GradientRecord, scope: UpdateScope<'_>, lr: f64) -> Result<()> {
    check_aligned(store, grad)?;
    scope.check(store.len())?;
    let values = store.values();
    scope.for_each(values.len(), |i| if (values[i] - lr * grad.values[i]).is_finite() { Ok(()) } else { Err(non_finite(store, i, "sgd update")) })?;
    let values = store.values_mut();
    scope.for_each(values.len(), |i| {
        values[i] -= lr * grad.values[i];
        Ok(())
    })
}

pub fn masked_sgd_step(store: &mut ParameterStore, grad: &GradientRecord, mask: &GradientMask, lr: f64) -> Result<()> {
    if mask.param_count() != store.len() {
        bail!(Shape, "mask over {} parameters for a store of {}", mask.param_count(), store.len());
    }
    sgd_step(store, grad, UpdateScope::from_mask(mask), lr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                bail!(Config, "adam {} must lie in [0, 1), got {}", name, b);
            }
        }
        if !(self.eps > 0.0) {
            bail!(Config, "adam eps must be positive, got {}", self.eps);
        }
        Ok(())
    }
}

/// First and second moments plus a per-index step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: Vec<u64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], steps: vec![0; len] }
    }

    /// Grows the state with zeros when parameters were appended to the store.
    pub fn ensure_len(&mut self, len: usize) {
        if self.m.len() < len {
            self.m.resize(len, 0.0);
            self.v.resize(len, 0.0);
            self.steps.resize(len, 0);
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One Adam step over the indices in scope, with bias correction from each
/// index's own step counter.
pub fn adam_step(store: &mut ParameterStore, grad: &GradientRecord, scope: UpdateScope<'_>, lr: f64, config: &AdamConfig, state: &mut AdamState) -> Result<()> {
    check_aligned(store, grad)?;
    scope.check(store.len())?;
    state.ensure_len(store.len());
    let n = store.len();
    let mut staged: Vec<(usize, f64, f64, f64)> = Vec::new();
    {
        let values = store.values();
        scope.for_each(n, |i| {
            let g = grad.values[i];
            let t = state.steps[i] + 1;
            let m = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
            let v = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
            let m_hat = m / (1.0 - libm::pow(config.beta1, t as f64));
            let v_hat = v / (1.0 - libm::pow(config.beta2, t as f64));
            let theta = values[i] - lr * m_hat / (libm::sqrt(v_hat) + config.eps);
            if !(m.is_finite() && v.is_finite() && theta.is_finite()) {
                return Err(non_finite(store, i, "adam update"));
            }
            staged.push((i, m, v, theta));
            Ok(())
        })?;
    }
    let values = store.values_mut();
    for (i, m, v, theta) in staged {
        state.m[i] = m;
        state.v[i] = v;
        state.steps[i] += 1;
        values[i] = theta;
    }
    Ok(())
}

pub fn masked_adam_step(
    store: &mut ParameterStore,
    grad: &GradientRecord,
    mask: &GradientMask,
    lr: f64,
    config: &AdamConfig,
    state: &mut AdamState,
) -> Result<()> {
    if mask.param_count() != store.len() {
        bail!(Shape, "mask over {} parameters for a store of {}", mask.param_count(), store.len());
    }
    adam_step(store, grad, UpdateScope::from_mask(mask), lr, config, state)
}
