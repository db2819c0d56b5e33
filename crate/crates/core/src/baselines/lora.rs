//! Adapter baselines: one shared low-rank adapter trained through the whole
//! sequence, and one adapter per task kept orthogonal to the earlier ones.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::continual::{Strategy, TaskContext, TaskPlan};
use crate::error::{bail, Result};
use crate::masking::{GradientMask, MaskSource};
use crate::model::{attach_lora, ForwardOptions, LoraConfig, Sample};
use crate::store::{GradientRecord, Granularity, ParameterStore};

pub const DEFAULT_OLORA_GAMMA: f64 = 0.5;

/// A row-major `rows × cols` view.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
}

/// `γ Σ_i ‖A_i A_tᵀ‖_F²` and its gradient `2γ Σ_i A_t A_iᵀ A_i` with
/// respect to `A_t`.
pub fn olora_regularizer(current: MatRef<'_>, past: &[MatRef<'_>], gamma: f64) -> Result<(f64, Vec<f64>)> {
    let (r, d) = (current.rows, current.cols);
    if current.data.len() != r * d {
        bail!(Shape, "adapter has {} values for {}x{}", current.data.len(), r, d);
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; r * d];
    for p in past {
        if p.cols != d || p.data.len() != p.rows * d {
            bail!(Shape, "past adapter {}x{} does not match current {}x{}", p.rows, p.cols, r, d);
        }
        // M = A_i A_tᵀ, shape [r_i, r].
        let mut m = vec![0.0; p.rows * r];
        for a in 0..p.rows {
            for b in 0..r {
                m[a * r + b] = (0..d).map(|j| p.data[a * d + j] * current.data[b * d + j]).sum();
            }
        }
        loss += m.iter().map(|x| x * x).sum::<f64>();
        // ∂/∂A_t = 2 Mᵀ A_i.
        for b in 0..r {
            for j in 0..d {
                grad[b * d + j] += 2.0 * gamma * (0..p.rows).map(|a| m[a * r + b] * p.data[a * d + j]).sum::<f64>();
            }
        }
    }
    Ok((gamma * loss, grad))
}

fn a_entry_tag(name: &str) -> Option<&str> {
    name.split_once(".lora_A.").map(|(_, t)| t)
}

/// Sums [`olora_regularizer`] over every target carrying the `current`
/// adapter, against all adapters with tags in `past`.
pub fn olora_store_penalty(store: &ParameterStore, current: &str, past: &[String], gamma: f64) -> Result<(f64, GradientRecord)> {
    let adapters = store.adapters();
    let targets_of = |tag: &str| -> Vec<&str> { adapters.iter().filter(|a| a_entry_tag(&a.a_entry) == Some(tag)).map(|a| a.target.as_str()).collect() };
    let cur_targets = targets_of(current);
    if cur_targets.is_empty() {
        bail!(UnknownEntry, "no adapters tagged `{}`", current);
    }
    for tag in past {
        if targets_of(tag) != cur_targets {
            bail!(Config, "adapter `{}` covers different targets than `{}`", tag, current);
        }
    }
    let mut loss = 0.0;
    let mut grad = GradientRecord::zeros(store.len(), Granularity::PerBatch);
    for ad in adapters.iter().filter(|a| a_entry_tag(&a.a_entry) == Some(current)) {
        let info = store.entry(&ad.a_entry)?;
        let cur = MatRef { data: store.values_of(&ad.a_entry)?, rows: info.shape[0], cols: info.shape[1] };
        let mut mats = Vec::with_capacity(past.len());
        for tag in past {
            let name = format!("{}.lora_A.{}", ad.target, tag);
            let e = store.entry(&name)?;
            mats.push(MatRef { data: store.values_of(&name)?, rows: e.shape[0], cols: e.shape[1] });
        }
        let (l, g) = olora_regularizer(cur, &mats, gamma)?;
        loss += l;
        grad.values[info.range()].copy_from_slice(&g);
    }
    Ok((loss, grad))
}

/// Mask over every entry of the adapters tagged `tag`.
fn adapter_mask(store: &ParameterStore, tag: &str, task_id: u32) -> Result<GradientMask> {
    let mut idx = Vec::new();
    for ad in store.adapters().iter().filter(|a| a_entry_tag(&a.a_entry) == Some(tag)) {
        idx.extend(store.entry(&ad.a_entry)?.range());
        idx.extend(store.entry(&ad.b_entry)?.range());
    }
    idx.sort_unstable();
    GradientMask::new(idx, store.len(), MaskSource::Adapter, task_id)
}

fn lora_hyperparameters(cfg: &LoraConfig) -> Vec<(String, f64)> {
    vec![("rank".to_string(), cfg.rank as f64), ("alpha".to_string(), cfg.alpha), ("dropout".to_string(), cfg.dropout)]
}

/// One adapter, attached before the first task and trained on every task.
#[derive(Debug, Clone, Default)]
pub struct SeqLora {
    pub config: LoraConfig,
}

impl SeqLora {
    pub const TAG: &'static str = "shared";
}

impl Strategy for SeqLora {
    fn name(&self) -> &str {
        "seq-lora"
    }

    fn hyperparameters(&self) -> Vec<(String, f64)> {
        lora_hyperparameters(&self.config)
    }

    fn prepare(&mut self, ctx: &TaskContext<'_>, store: &mut ParameterStore) -> Result<TaskPlan> {
        if !store.adapters().iter().any(|a| a_entry_tag(&a.a_entry) == Some(Self::TAG)) {
            attach_lora(store, &self.config, Self::TAG, ctx.seed)?;
        }
        Ok(TaskPlan { mask: Some(adapter_mask(store, Self::TAG, ctx.task_id())?), importance: None })
    }
}

/// A fresh adapter per task; earlier adapters stay frozen and stay in the
/// forward pass.
#[derive(Debug, Clone)]
pub struct OLora {
    pub config: LoraConfig,
    pub gamma: f64,
    past: Vec<String>,
    current: Option<String>,
}

impl OLora {
    pub fn new(config: LoraConfig, gamma: f64) -> Self {
        Self { config, gamma, past: Vec::new(), current: None }
    }
}

impl Default for OLora {
    fn default() -> Self {
        Self::new(LoraConfig::default(), DEFAULT_OLORA_GAMMA)
    }
}

impl Strategy for OLora {
    fn name(&self) -> &str {
        "o-lora"
    }

    fn hyperparameters(&self) -> Vec<(String, f64)> {
        let mut h = lora_hyperparameters(&self.config);
        h.push(("gamma".to_string(), self.gamma));
        h
    }

    fn prepare(&mut self, ctx: &TaskContext<'_>, store: &mut ParameterStore) -> Result<TaskPlan> {
        if let Some(done) = self.current.take() {
            self.past.push(done);
        }
        let tag = format!("t{}", ctx.task_id());
        attach_lora(store, &self.config, &tag, ctx.seed)?;
        let mask = adapter_mask(store, &tag, ctx.task_id())?;
        self.current = Some(tag);
        Ok(TaskPlan { mask: Some(mask), importance: None })
    }

    fn loss_and_grad(&mut self, ctx: &TaskContext<'_>, store: &ParameterStore, batch: &[Sample]) -> Result<(f64, GradientRecord)> {
        let (loss, mut grad) = ctx.model.batch_loss_and_grad(store, batch, ForwardOptions::default())?;
        let Some(cur) = &self.current else { return Ok((loss, grad)) };
        if self.past.is_empty() {
            return Ok((loss, grad));
        }
        let (reg, rg) = olora_store_penalty(store, cur, &self.past, self.gamma)?;
        grad.add_scaled(&rg, 1.0);
        Ok((loss + reg, grad))
    }
}
