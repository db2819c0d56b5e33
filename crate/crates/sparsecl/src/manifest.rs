//! Experiment manifests (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparsecl_core::baselines::StrategySpec;
use sparsecl_core::continual::OptimizerConfig;
use sparsecl_core::model::{build_model, ModelConfig, ModelFamily};
use sparsecl_core::tasks::{default_stream, generate_sequence, MetricKind, SyntheticTaskConfig, TaskSpec};

use crate::dataset;
use crate::error::{self, CliError, Result};
use crate::provenance::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    /// Relative paths resolve against the manifest's directory.
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Mask shares; one run per entry for masking strategies.
    #[serde(default)]
    pub ratios: Vec<f64>,
    pub model: ModelConfig,
    pub tasks: TaskSource,
    pub strategy: StrategySpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![42]
}

/// Exactly one of `preset`, `synthetic` or `jsonl`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synthetic: Vec<SyntheticTaskConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub jsonl: Vec<JsonlTask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonlTask {
    pub path: PathBuf,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub metric: Option<MetricKind>,
}

pub const PRESETS: [&str; 1] = ["default"];

/// A manifest that passed every check, with its tasks loaded.
#[derive(Debug, Clone)]
pub struct Validated {
    pub manifest: ExperimentManifest,
    pub source: Vec<u8>,
    pub sha256: String,
    /// Absolute or manifest-relative output directory.
    pub output_dir: PathBuf,
    pub tasks: Vec<TaskSpec>,
}

impl Validated {
    /// `(seed, ratio)` for every run; ratio is `None` for strategies
    /// without a mask budget.
    pub fn jobs(&self) -> Vec<(u64, Option<f64>)> {
        let ratios: Vec<Option<f64>> = if self.manifest.strategy.uses_ratio() {
            if self.manifest.ratios.is_empty() {
                vec![None]
            } else {
                self.manifest.ratios.iter().map(|&r| Some(r)).collect()
            }
        } else {
            vec![None]
        };
        self.manifest.seeds.iter().flat_map(|&s| ratios.iter().map(move |&r| (s, r))).collect()
    }
}

pub fn parse(text: &str) -> Result<ExperimentManifest> {
    toml::from_str(text).map_err(|e| CliError::invalid(e.to_string().trim_end().to_string()))
}

pub fn load(path: &Path) -> Result<Validated> {
    let source = error::read(path)?;
    let text = std::str::from_utf8(&source).map_err(|_| CliError::invalid(format!("{}: not utf-8", path.display())))?;
    let manifest = parse(text).map_err(|e| match e {
        CliError::Invalid(m) => CliError::Invalid(m.into_iter().map(|m| format!("{}: {}", path.display(), m)).collect()),
        e => e,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    validate(manifest, source, base)
}

/// Checks everything before any training; collects one message per field.
pub fn validate(manifest: ExperimentManifest, source: Vec<u8>, base: &Path) -> Result<Validated> {
    let mut errs = Vec::new();
    let m = &manifest;
    if m.seeds.is_empty() {
        errs.push("seeds: need at least one seed".to_string());
    }
    let mut sorted = m.seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != m.seeds.len() {
        errs.push("seeds: duplicate entries".into());
    }
    for (i, r) in m.ratios.iter().enumerate() {
        if !(*r > 0.0 && *r <= 1.0) {
            errs.push(format!("ratios[{}]: must lie in (0, 1], got {}", i, r));
        }
    }
    if !m.ratios.is_empty() && !m.strategy.uses_ratio() {
        errs.push(format!("ratios: strategy `{}` does not use a mask budget", m.strategy.name()));
    }
    if m.model.seed != 0 {
        errs.push("model.seed: initialization follows the run seed; remove this key".into());
    }
    if m.optimizer.seed != OptimizerConfig::default().seed {
        errs.push("optimizer.seed: shuffling follows the run seed; remove this key".into());
    }
    if m.output_dir.as_os_str().is_empty() {
        errs.push("output_dir: must not be empty".into());
    }
    let push = |errs: &mut Vec<String>, field: &str, r: sparsecl_core::Result<()>| {
        if let Err(e) = r {
            errs.push(format!("{}: {}", field, e));
        }
    };
    push(&mut errs, "model", m.model.validate());
    push(&mut errs, "optimizer", m.optimizer.validate());
    push(&mut errs, "strategy", m.strategy.validate());

    let t = &m.tasks;
    let sources = t.preset.is_some() as usize + !t.synthetic.is_empty() as usize + !t.jsonl.is_empty() as usize;
    let mut tasks = Vec::new();
    if sources != 1 {
        errs.push("tasks: set exactly one of `preset`, `synthetic` or `jsonl`".into());
    } else if let Some(p) = &t.preset {
        match p.as_str() {
            "default" => tasks = generate_sequence(&default_stream()).expect("default stream is valid"),
            _ => errs.push(format!("tasks.preset: unknown preset `{}` (valid: {})", p, PRESETS.join(", "))),
        }
    } else if !t.synthetic.is_empty() {
        let mut ok = true;
        for (i, c) in t.synthetic.iter().enumerate() {
            if let Err(e) = c.validate() {
                errs.push(format!("tasks.synthetic[{}]: {}", i, e));
                ok = false;
            }
        }
        if ok {
            match generate_sequence(&t.synthetic) {
                Ok(ts) => tasks = ts,
                Err(e) => errs.push(format!("tasks.synthetic: {}", e)),
            }
        }
    } else {
        for (i, j) in t.jsonl.iter().enumerate() {
            match dataset::read_task(&base.join(&j.path), i as u32 + 1, j.name.clone(), j.metric) {
                Ok(task) => tasks.push(task),
                Err(CliError::Invalid(ms)) => errs.extend(ms.into_iter().map(|e| format!("tasks.jsonl[{}]: {}", i, e))),
                Err(e) => errs.push(format!("tasks.jsonl[{}]: {}", i, e)),
            }
        }
    }

    if errs.is_empty() {
        compatibility(m, &tasks, &mut errs);
    }
    if !errs.is_empty() {
        return Err(CliError::Invalid(errs));
    }
    let output_dir = base.join(&m.output_dir);
    let sha256 = sha256_hex(&source);
    Ok(Validated { manifest, source, sha256, output_dir, tasks })
}

fn compatibility(m: &ExperimentManifest, tasks: &[TaskSpec], errs: &mut Vec<String>) {
    let model = match build_model(m.model.clone()) {
        Ok((model, _)) => model,
        Err(e) => return errs.push(format!("model: {}", e)),
    };
    for t in tasks {
        for (split, samples) in [("train", &t.train), ("eval", &t.eval)] {
            if let Some((i, e)) = samples.iter().enumerate().find_map(|(i, s)| model.check_sample(s).err().map(|e| (i, e))) {
                errs.push(format!("tasks: task {} {} sample {} does not fit the model: {}", t.task_id, split, i, e));
                break;
            }
        }
        if m.model.family == ModelFamily::Mlp && t.metric == MetricKind::TextOverlap {
            errs.push(format!("tasks: task {} is scored by text overlap, which needs a transformer", t.task_id));
        }
    }
}
