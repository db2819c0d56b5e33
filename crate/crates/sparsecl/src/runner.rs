//! Executes a validated manifest: one run per `(seed, ratio)`, each in its
//! own directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use sparsecl_core::continual::{run_sequence, Event, OptimizerConfig, RunState};
use sparsecl_core::metrics::BwtNorm;
use sparsecl_core::model::{build_model, ModelConfig};
use sparsecl_core::tasks::TaskSpec;

use crate::error::{self, CliError, Result};
use crate::formats::{self, Checkpoint, RunMetrics, TaskInfo};
use crate::manifest::Validated;
use crate::provenance::Provenance;

pub const METRICS_FILE: &str = "metrics.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const ACCESS_FILE: &str = "access.jsonl";
pub const MANIFEST_COPY: &str = "manifest.toml";

/// `seed-42` or `seed-42-ratio-0.01`.
pub fn run_dir_name(seed: u64, ratio: Option<f64>) -> String {
    match ratio {
        Some(r) => format!("seed-{}-ratio-{}", seed, r),
        None => format!("seed-{}", seed),
    }
}

pub fn checkpoint_path(run_dir: &Path, boundary: usize) -> PathBuf {
    run_dir.join("checkpoints").join(format!("task-{}.ckpt", boundary))
}

pub fn mask_path(run_dir: &Path, task: u32) -> PathBuf {
    run_dir.join("masks").join(format!("task-{}.mask", task))
}

pub fn importance_path(run_dir: &Path, task: u32) -> PathBuf {
    run_dir.join("importance").join(format!("task-{}.imp", task))
}

/// SHA-256 over the JSON of every task in order.
pub fn task_digest(tasks: &[TaskSpec]) -> String {
    let mut h = Sha256::new();
    for t in tasks {
        h.update(serde_json::to_vec(t).expect("tasks serialize"));
    }
    hex::encode(h.finalize())
}

/// Trains one `(seed, ratio)` entry in memory.
pub fn train(v: &Validated, seed: u64, ratio: Option<f64>) -> Result<(ModelConfig, RunState)> {
    let ctx = || format!("seed {}{}", seed, ratio.map_or(String::new(), |r| format!(", ratio {}", r)));
    let config = ModelConfig { seed, ..v.manifest.model.clone() };
    let (model, init) = build_model(config.clone()).map_err(|e| CliError::runtime(ctx(), e))?;
    let mut strategy = v.manifest.strategy.build(ratio).map_err(|e| CliError::runtime(ctx(), e))?;
    let opt = OptimizerConfig { seed, ..v.manifest.optimizer.clone() };
    let state = run_sequence(&model, &init, &v.tasks, &mut strategy, &opt).map_err(|e| CliError::runtime(ctx(), e))?;
    Ok((config, state))
}

pub fn metrics_of(v: &Validated, state: &RunState, strategy_hp: BTreeMap<String, f64>, seed: u64, ratio: Option<f64>) -> RunMetrics {
    let s = &state.scores;
    let t = s.tasks();
    let trainable = state
        .events
        .iter()
        .filter_map(|e| match e {
            Event::TaskStart { trainable, .. } => Some(*trainable),
            _ => None,
        })
        .collect();
    RunMetrics {
        provenance: Provenance::for_run(&v.sha256, seed, ratio),
        strategy: state.strategy.clone(),
        hyperparameters: strategy_hp,
        seed,
        ratio,
        tasks: v
            .tasks
            .iter()
            .map(|t| TaskInfo { task_id: t.task_id, name: t.name.clone(), metric: t.metric, train: t.train.len(), eval: t.eval.len() })
            .collect(),
        task_digest: task_digest(&v.tasks),
        scores: s.rows().to_vec(),
        op: s.op_series(),
        bwt: s.bwt_series(BwtNorm::OverT),
        bwt_norm: BwtNorm::OverT,
        ap: s.ap_series(),
        final_forgetting: (1..t).map(|i| s.forgetting(i, t).expect("in range")).collect(),
        trainable,
    }
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_run(v: &Validated, dir: &Path, config: &ModelConfig, state: &RunState, seed: u64, ratio: Option<f64>) -> Result<()> {
    let prov = Provenance::for_run(&v.sha256, seed, ratio);
    let boundaries = state.checkpoints.iter().skip(1).chain(std::iter::once(&state.store));
    for (k, store) in state.checkpoints.iter().take(1).chain(boundaries).enumerate() {
        let ckpt = Checkpoint { config: config.clone(), store: store.clone() };
        error::write(&checkpoint_path(dir, k), formats::encode_checkpoint(&ckpt, &prov))?;
    }
    for m in &state.masks {
        error::write(&mask_path(dir, m.task_id), formats::encode_mask(m, &prov))?;
    }
    for (imp, task) in state.importances.iter().zip(&v.tasks) {
        error::write(&importance_path(dir, task.task_id), formats::encode_importance(imp, &prov))?;
    }
    error::write(&dir.join(EVENTS_FILE), formats::encode_events(&state.events, &prov))?;
    error::write(&dir.join(ACCESS_FILE), formats::encode_access(&state.access_log, &prov))?;
    let hp = v.manifest.strategy.build(ratio).map_err(|e| CliError::runtime("strategy", e))?.hyperparameters();
    let metrics = metrics_of(v, state, hp.into_iter().collect(), seed, ratio);
    error::write(&dir.join(METRICS_FILE), formats::encode_metrics(&metrics))
}

/// Runs every job on at most `workers` threads. Returns the run
/// directories in job order; fails if any job failed.
pub fn execute(v: &Validated, workers: usize) -> Result<Vec<PathBuf>> {
    error::write(&v.output_dir.join(MANIFEST_COPY), &v.source)?;
    let jobs = v.jobs();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().map_err(|e| CliError::invalid(format!("workers: {}", e)))?;
    let results: Vec<Result<PathBuf>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, ratio)| {
                let dir = v.output_dir.join(run_dir_name(seed, ratio));
                log::info!("starting {}", dir.display());
                let (config, state) = train(v, seed, ratio)?;
                write_run(v, &dir, &config, &state, seed, ratio)?;
                log::info!("finished {}", dir.display());
                Ok(dir)
            })
            .collect()
    });
    let mut dirs = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(d) => dirs.push(d),
            Err(e) => {
                log::error!("{}", e);
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(dirs),
    }
}
