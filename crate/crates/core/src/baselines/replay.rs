//! Experience replay from the per-task reservoir, either as an extra pass
//! after each task or mixed into every training batch.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::continual::{Capabilities, Strategy, TaskContext, TaskPlan, DEFAULT_REPLAY_FRACTION};
use crate::error::{bail, Result};
use crate::model::Sample;
use crate::rng;
use crate::store::ParameterStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplayMode {
    Offline,
    Online,
}

/// Replay samples mixed into a batch of `batch_len`: `⌈fraction · batch_len⌉`,
/// at least one once history exists.
pub fn online_count(fraction: f64, batch_len: usize) -> usize {
    let k = libm::ceil(fraction * batch_len as f64 - 1e-12) as usize;
    k.max(1)
}

#[derive(Debug, Clone)]
pub struct Replay {
    pub fraction: f64,
    pub mode: ReplayMode,
    rng: Option<ChaCha8Rng>,
}

impl Replay {
    pub fn new(mode: ReplayMode, fraction: f64) -> Self {
        Self { fraction, mode, rng: None }
    }

    pub fn offline(fraction: f64) -> Self {
        Self::new(ReplayMode::Offline, fraction)
    }

    pub fn online(fraction: f64) -> Self {
        Self::new(ReplayMode::Online, fraction)
    }
}

impl Default for Replay {
    fn default() -> Self {
        Self::offline(DEFAULT_REPLAY_FRACTION)
    }
}

impl Strategy for Replay {
    fn name(&self) -> &str {
        match self.mode {
            ReplayMode::Offline => "replay",
            ReplayMode::Online => "replay-online",
        }
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { needs_replay_buffer: true, ..Capabilities::default() }
    }

    fn hyperparameters(&self) -> Vec<(String, f64)> {
        vec![("fraction".into(), self.fraction)]
    }

    fn replay_fraction(&self) -> f64 {
        self.fraction
    }

    fn prepare(&mut self, ctx: &TaskContext<'_>, _store: &mut ParameterStore) -> Result<TaskPlan> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            bail!(Config, "replay fraction must lie in (0, 1], got {}", self.fraction);
        }
        self.rng = Some(rng::rng_for(ctx.seed, &[rng::tag::REPLAY, ctx.task_index as u64]));
        if ctx.replay()?.is_empty() {
            log::info!("{}: no history before task {}, replay stream is empty", self.name(), ctx.task_id());
        }
        Ok(TaskPlan::default())
    }

    fn augment_batch(&mut self, ctx: &TaskContext<'_>, batch: &mut Vec<Sample>) -> Result<()> {
        if self.mode != ReplayMode::Online {
            return Ok(());
        }
        let view = ctx.replay()?;
        if view.is_empty() || batch.is_empty() {
            return Ok(());
        }
        let k = online_count(self.fraction, batch.len());
        let r = self.rng.get_or_insert_with(|| rng::rng_for(ctx.seed, &[rng::tag::REPLAY, ctx.task_index as u64]));
        batch.extend(view.draw(r, k));
        Ok(())
    }

    fn replay_phase(&mut self, ctx: &TaskContext<'_>) -> Result<Vec<Sample>> {
        if self.mode != ReplayMode::Offline {
            return Ok(Vec::new());
        }
        Ok(ctx.replay()?.all())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn online_count_uses_ceiling() {
        assert_eq!(online_count(0.01, 64), 1);
        assert_eq!(online_count(0.01, 100), 1);
        assert_eq!(online_count(0.01, 101), 2);
        assert_eq!(online_count(0.05, 64), 4);
        assert_eq!(online_count(0.01, 1), 1);
    }
}
