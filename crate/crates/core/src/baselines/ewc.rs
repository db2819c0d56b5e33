//! Elastic weight consolidation.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::continual::{Strategy, TaskContext};
use crate::error::{bail, Result};
use crate::importance::estimate_fisher;
use crate::model::{ForwardOptions, Sample};
use crate::store::{GradientRecord, Granularity, ParameterStore};

pub const DEFAULT_EWC_LAMBDA: f64 = 0.5;

/// Anchor parameters and Fisher diagonal from the previous task.
#[derive(Debug, Clone, PartialEq)]
pub struct EwcState {
    pub lambda: f64,
    pub fisher: Vec<f64>,
    pub anchor: Vec<f64>,
}

/// `λ Σ F_i (θ_i − θ*_i)²` and its gradient `2λ F ⊙ (θ − θ*)`.
pub fn ewc_penalty(theta: &[f64], state: &EwcState) -> Result<(f64, GradientRecord)> {
    if theta.len() != state.fisher.len() || theta.len() != state.anchor.len() {
        bail!(Shape, "ewc state over {} / {} values for {} parameters", state.fisher.len(), state.anchor.len(), theta.len());
    }
    let mut penalty = 0.0;
    let mut grad = GradientRecord::zeros(theta.len(), Granularity::PerBatch);
    for i in 0..theta.len() {
        let d = theta[i] - state.anchor[i];
        penalty += state.fisher[i] * d * d;
        grad.values[i] = 2.0 * state.lambda * state.fisher[i] * d;
    }
    Ok((state.lambda * penalty, grad))
}

#[derive(Debug, Clone)]
pub struct Ewc {
    pub lambda: f64,
    state: Option<EwcState>,
}

impl Ewc {
    pub fn new(lambda: f64) -> Self {
        Self { lambda, state: None }
    }

    pub fn state(&self) -> Option<&EwcState> {
        self.state.as_ref()
    }
}

impl Strategy for Ewc {
    fn name(&self) -> &str {
        "ewc"
    }

    fn hyperparameters(&self) -> Vec<(String, f64)> {
        alloc::vec![("lambda".to_string(), self.lambda)]
    }

    fn loss_and_grad(&mut self, ctx: &TaskContext<'_>, store: &ParameterStore, batch: &[Sample]) -> Result<(f64, GradientRecord)> {
        let (loss, mut grad) = ctx.model.batch_loss_and_grad(store, batch, ForwardOptions::default())?;
        match &self.state {
            Some(state) => {
                let (p, pg) = ewc_penalty(store.values(), state)?;
                grad.add_scaled(&pg, 1.0);
                Ok((loss + p, grad))
            }
            None => Ok((loss, grad)),
        }
    }

    /// Keeps only the task just finished: `θ*` and `F` are replaced, not
    /// accumulated.
    fn finish(&mut self, ctx: &TaskContext<'_>, store: &ParameterStore) -> Result<()> {
        let fisher = estimate_fisher(ctx.model, store, ctx.data().train())?;
        self.state = Some(EwcState { lambda: self.lambda, fisher: fisher.scores, anchor: store.values().to_vec() });
        Ok(())
    }
}
