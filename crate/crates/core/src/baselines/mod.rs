//! Baseline strategies and the registry that builds any strategy from its
//! serialized spec.

mod ewc;
mod gem;
mod lora;
mod lwf;
mod replay;

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

pub use ewc::{ewc_penalty, Ewc, EwcState, DEFAULT_EWC_LAMBDA};
pub use gem::{gem_project, nnls, Gem, GRAM_RIDGE};
pub use lora::{olora_regularizer, olora_store_penalty, MatRef, OLora, SeqLora, DEFAULT_OLORA_GAMMA};
pub use lwf::{distillation, lwf_batch_loss_and_grad, lwf_loss, Lwf, DEFAULT_LWF_ALPHA, DEFAULT_LWF_TEMPERATURE};
pub use replay::{online_count, Replay, ReplayMode};

use crate::continual::{ImportanceMasking, SeqFt, Strategy, TaskContext, TaskPlan, DEFAULT_REPLAY_FRACTION};
use crate::error::{bail, Result};
use crate::importance::{Estimator, DEFAULT_XI};
use crate::masking::{GradientMask, MaskScope, MaskSource};
use crate::model::LoraConfig;
use crate::store::{ParameterStore, SubmoduleKind};

/// Default share of parameters an importance mask keeps.
pub const DEFAULT_MASK_RATIO: f64 = 0.001;

/// Flat indices of every normalization entry.
pub fn layernorm_mask(store: &ParameterStore, task_id: u32) -> Result<GradientMask> {
    let mut idx = Vec::new();
    for e in store.entries() {
        if SubmoduleKind::classify(&e.name).is_norm() {
            idx.extend(e.range());
        }
    }
    if idx.is_empty() {
        bail!(Config, "model has no normalization parameters to train");
    }
    GradientMask::new(idx, store.len(), MaskSource::LayerNorm, task_id)
}

/// Trains only normalization scales and shifts.
#[derive(Debug, Clone, Default)]
pub struct LayerNormOnly;

impl Strategy for LayerNormOnly {
    fn name(&self) -> &str {
        "layer-norm"
    }

    fn prepare(&mut self, ctx: &TaskContext<'_>, store: &mut ParameterStore) -> Result<TaskPlan> {
        Ok(TaskPlan { mask: Some(layernorm_mask(store, ctx.task_id())?), importance: None })
    }
}

fn default_xi() -> f64 {
    DEFAULT_XI
}
fn default_lambda() -> f64 {
    DEFAULT_EWC_LAMBDA
}
fn default_fraction() -> f64 {
    DEFAULT_REPLAY_FRACTION
}
fn default_alpha() -> f64 {
    DEFAULT_LWF_ALPHA
}
fn default_temperature() -> f64 {
    DEFAULT_LWF_TEMPERATURE
}
fn default_gamma() -> f64 {
    DEFAULT_OLORA_GAMMA
}
fn default_rank() -> usize {
    LoraConfig::default().rank
}
fn default_lora_alpha() -> f64 {
    LoraConfig::default().alpha
}

/// Serialized strategy choice, e.g. `{"name": "ewc", "lambda": 0.5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StrategySpec {
    SeqFt,
    ImportanceFisher {
        #[serde(default)]
        exclude_embeddings: bool,
        #[serde(default)]
        exclude_head: bool,
    },
    ImportanceSecondOrder {
        #[serde(default = "default_xi")]
        xi: f64,
        #[serde(default)]
        exclude_embeddings: bool,
        #[serde(default)]
        exclude_head: bool,
    },
    Migu {
        #[serde(default)]
        exclude_embeddings: bool,
        #[serde(default)]
        exclude_head: bool,
    },
    Ewc {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    Gem {
        #[serde(default = "default_fraction")]
        fraction: f64,
    },
    Lwf {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    Replay {
        #[serde(default = "default_fraction")]
        fraction: f64,
    },
    ReplayOnline {
        #[serde(default = "default_fraction")]
        fraction: f64,
    },
    SeqLora {
        #[serde(default = "default_rank")]
        rank: usize,
        #[serde(default = "default_lora_alpha")]
        alpha: f64,
        #[serde(default)]
        targets: Vec<String>,
        #[serde(default)]
        dropout: f64,
    },
    OLora {
        #[serde(default = "default_rank")]
        rank: usize,
        #[serde(default = "default_lora_alpha")]
        alpha: f64,
        #[serde(default)]
        targets: Vec<String>,
        #[serde(default)]
        dropout: f64,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    LayerNorm,
}

impl StrategySpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SeqFt => "seq-ft",
            Self::ImportanceFisher { .. } => "importance-fisher",
            Self::ImportanceSecondOrder { .. } => "importance-second-order",
            Self::Migu { .. } => "migu",
            Self::Ewc { .. } => "ewc",
            Self::Gem { .. } => "gem",
            Self::Lwf { .. } => "lwf",
            Self::Replay { .. } => "replay",
            Self::ReplayOnline { .. } => "replay-online",
            Self::SeqLora { .. } => "seq-lora",
            Self::OLora { .. } => "o-lora",
            Self::LayerNorm => "layer-norm",
        }
    }

    /// The spec with every field at its default.
    pub fn from_name(name: &str) -> Option<Self> {
        let s = match name {
            "seq-ft" => Self::SeqFt,
            "importance-fisher" => Self::ImportanceFisher { exclude_embeddings: false, exclude_head: false },
            "importance-second-order" => Self::ImportanceSecondOrder { xi: DEFAULT_XI, exclude_embeddings: false, exclude_head: false },
            "migu" => Self::Migu { exclude_embeddings: false, exclude_head: false },
            "ewc" => Self::Ewc { lambda: DEFAULT_EWC_LAMBDA },
            "gem" => Self::Gem { fraction: DEFAULT_REPLAY_FRACTION },
            "lwf" => Self::Lwf { alpha: DEFAULT_LWF_ALPHA, temperature: DEFAULT_LWF_TEMPERATURE },
            "replay" => Self::Replay { fraction: DEFAULT_REPLAY_FRACTION },
            "replay-online" => Self::ReplayOnline { fraction: DEFAULT_REPLAY_FRACTION },
            "seq-lora" => {
                let c = LoraConfig::default();
                Self::SeqLora { rank: c.rank, alpha: c.alpha, targets: c.targets, dropout: c.dropout }
            }
            "o-lora" => {
                let c = LoraConfig::default();
                Self::OLora { rank: c.rank, alpha: c.alpha, targets: c.targets, dropout: c.dropout, gamma: DEFAULT_OLORA_GAMMA }
            }
            "layer-norm" => Self::LayerNorm,
            _ => return None,
        };
        Some(s)
    }

    pub const NAMES: [&'static str; 12] =
        ["seq-ft", "importance-fisher", "importance-second-order", "migu", "ewc", "gem", "lwf", "replay", "replay-online", "seq-lora", "o-lora", "layer-norm"];

    /// Whether the strategy consumes a sparsity ratio.
    pub fn uses_ratio(&self) -> bool {
        matches!(self, Self::ImportanceFisher { .. } | Self::ImportanceSecondOrder { .. } | Self::Migu { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: f64| -> Result<()> {
            if !(v > 0.0 && v.is_finite()) {
                bail!(Config, "{} must be positive, got {}", what, v);
            }
            Ok(())
        };
        let nonneg = |what: &str, v: f64| -> Result<()> {
            if !(v >= 0.0 && v.is_finite()) {
                bail!(Config, "{} must be non-negative, got {}", what, v);
            }
            Ok(())
        };
        let fraction = |v: f64| -> Result<()> {
            if !(v > 0.0 && v <= 1.0) {
                bail!(Config, "replay fraction must lie in (0, 1], got {}", v);
            }
            Ok(())
        };
        let lora = |rank: usize, alpha: f64, dropout: f64| -> Result<()> {
            if rank == 0 {
                bail!(Config, "lora rank must be positive");
            }
            positive("lora alpha", alpha)?;
            if !(0.0..1.0).contains(&dropout) {
                bail!(Config, "lora dropout must lie in [0, 1), got {}", dropout);
            }
            Ok(())
        };
        match self {
            Self::ImportanceSecondOrder { xi, .. } => positive("xi", *xi),
            Self::Ewc { lambda } => nonneg("lambda", *lambda),
            Self::Gem { fraction: f } | Self::Replay { fraction: f } | Self::ReplayOnline { fraction: f } => fraction(*f),
            Self::Lwf { alpha, temperature } => {
                nonneg("alpha", *alpha)?;
                positive("temperature", *temperature)
            }
            Self::SeqLora { rank, alpha, dropout, .. } => lora(*rank, *alpha, *dropout),
            Self::OLora { rank, alpha, dropout, gamma, .. } => {
                lora(*rank, *alpha, *dropout)?;
                nonneg("gamma", *gamma)
            }
            _ => Ok(()),
        }
    }

    /// Instantiates the strategy; `ratio` is the mask share for
    /// importance-driven strategies ([`DEFAULT_MASK_RATIO`] when absent).
    pub fn build(&self, ratio: Option<f64>) -> Result<Box<dyn Strategy>> {
        self.validate()?;
        let ratio = ratio.unwrap_or(DEFAULT_MASK_RATIO);
        let masking = |estimator: Estimator, exclude_embeddings: bool, exclude_head: bool| {
            let mut s = ImportanceMasking::new(estimator, ratio);
            s.scope = MaskScope { exclude_embeddings, exclude_head };
            s
        };
        let lora = |rank: usize, alpha: f64, targets: &[String], dropout: f64| LoraConfig { rank, alpha, targets: targets.to_vec(), dropout };
        Ok(match self {
            Self::SeqFt => Box::new(SeqFt),
            Self::ImportanceFisher { exclude_embeddings, exclude_head } => Box::new(masking(Estimator::Fisher, *exclude_embeddings, *exclude_head)),
            Self::ImportanceSecondOrder { xi, exclude_embeddings, exclude_head } => {
                Box::new(masking(Estimator::SecondOrder { xi: *xi }, *exclude_embeddings, *exclude_head))
            }
            Self::Migu { exclude_embeddings, exclude_head } => Box::new(masking(Estimator::MiguMagnitude, *exclude_embeddings, *exclude_head)),
            Self::Ewc { lambda } => Box::new(Ewc::new(*lambda)),
            Self::Gem { fraction } => Box::new(Gem { fraction: *fraction }),
            Self::Lwf { alpha, temperature } => Box::new(Lwf::new(*alpha, *temperature)),
            Self::Replay { fraction } => Box::new(Replay::offline(*fraction)),
            Self::ReplayOnline { fraction } => Box::new(Replay::online(*fraction)),
            Self::SeqLora { rank, alpha, targets, dropout } => Box::new(SeqLora { config: lora(*rank, *alpha, targets, *dropout) }),
            Self::OLora { rank, alpha, targets, dropout, gamma } => Box::new(OLora::new(lora(*rank, *alpha, targets, *dropout), *gamma)),
            Self::LayerNorm => Box::new(LayerNormOnly),
        })
    }
}
