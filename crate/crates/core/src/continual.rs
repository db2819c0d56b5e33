//! Sequential task runner.
//!
//! For each task the runner lets the strategy prepare (importance, masks,
//! adapters), trains with the strategy's objective under its update scope,
//! then scores every task seen so far. Strategies reach data only through
//! handles that record every read, and only receive the replay buffer or
//! the previous model when their capabilities say so.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::importance::{estimate, Estimator, ImportanceMap};
use crate::masking::{select_topk_among, GradientMask, MaskScope, SparsityBudget};
use crate::metrics::{text_metric, ScoreMatrix};
use crate::model::{argmax, ForwardOptions, Model, Sample};
use crate::optim::{adam_step, sgd_step, AdamConfig, AdamState, UpdateScope};
use crate::rng::{self, ChaCha8Rng};
use crate::store::{GradientRecord, ParameterStore};
use crate::tasks::{MetricKind, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub kind: OptimizerKind,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    AdamConfig::default().beta1
}
fn default_beta2() -> f64 {
    AdamConfig::default().beta2
}
fn default_eps() -> f64 {
    AdamConfig::default().eps
}
fn default_epochs() -> usize {
    5
}
fn default_batch() -> usize {
    64
}
fn default_seed() -> u64 {
    42
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::default(),
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: default_seed(),
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self { kind: OptimizerKind::Sgd, lr, epochs, batch_size, seed, ..Self::default() }
    }

    pub fn adam(lr: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self { kind: OptimizerKind::Adam, lr, epochs, batch_size, seed, ..Self::default() }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig { beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            bail!(Config, "learning rate must be positive, got {}", self.lr);
        }
        if self.batch_size == 0 {
            bail!(Config, "batch size must be positive");
        }
        self.adam_config().validate()
    }
}

/// Resources a strategy may ask the runner for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub needs_replay_buffer: bool,
    pub needs_previous_model: bool,
    pub needs_gradient_memory: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Prepare,
    Train,
    Replay,
    Finish,
    Evaluate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    Train {
        task: u32,
    },
    Eval {
        task: u32,
    },
    /// A replay-buffer sample that originally came from `origin`.
    Replay {
        origin: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub during_task: u32,
    pub phase: Phase,
    #[serde(flatten)]
    pub source: DataSource,
    pub samples: usize,
}

/// Records every dataset read made during a run.
#[derive(Debug)]
pub struct AccessLog {
    events: RefCell<Vec<AccessEvent>>,
    task: Cell<u32>,
    phase: Cell<Phase>,
}

impl Default for AccessLog {
    fn default() -> Self {
        Self { events: RefCell::new(Vec::new()), task: Cell::new(0), phase: Cell::new(Phase::Prepare) }
    }
}

impl AccessLog {
    fn set(&self, task: u32, phase: Phase) {
        self.task.set(task);
        self.phase.set(phase);
    }

    fn record(&self, source: DataSource, samples: usize) {
        if samples == 0 {
            return;
        }
        let ev = AccessEvent { during_task: self.task.get(), phase: self.phase.get(), source, samples };
        let mut events = self.events.borrow_mut();
        match events.last_mut() {
            Some(last) if last.during_task == ev.during_task && last.phase == ev.phase && last.source == ev.source => last.samples += samples,
            _ => events.push(ev),
        }
    }

    pub fn into_events(self) -> Vec<AccessEvent> {
        self.events.into_inner()
    }
}

/// Reads that break the no-history rule: outside evaluation, anything but
/// the current task's training data or buffer samples from earlier tasks.
pub fn audit_no_history(events: &[AccessEvent]) -> Vec<AccessEvent> {
    events
        .iter()
        .filter(|e| {
            e.phase != Phase::Evaluate
                && match e.source {
                    DataSource::Train { task } => task != e.during_task,
                    DataSource::Eval { .. } => true,
                    DataSource::Replay { origin } => origin >= e.during_task,
                }
        })
        .copied()
        .collect()
}

/// The current task's training split.
#[derive(Debug, Clone, Copy)]
pub struct TaskData<'a> {
    task: &'a TaskSpec,
    log: &'a AccessLog,
}

impl<'a> TaskData<'a> {
    pub fn task_id(&self) -> u32 {
        self.task.task_id
    }

    pub fn len(&self) -> usize {
        self.task.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.task.train.is_empty()
    }

    pub fn metric(&self) -> MetricKind {
        self.task.metric
    }

    /// The whole split.
    pub fn train(&self) -> &'a [Sample] {
        self.log.record(DataSource::Train { task: self.task.task_id }, self.task.train.len());
        &self.task.train
    }

    pub fn batch(&self, indices: &[usize]) -> Vec<Sample> {
        self.log.record(DataSource::Train { task: self.task.task_id }, indices.len());
        indices.iter().map(|&i| self.task.train[i].clone()).collect()
    }
}

/// Default share of each task kept for replay.
pub const DEFAULT_REPLAY_FRACTION: f64 = 0.01;

/// Per-task uniform reservoirs of training samples from finished tasks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayBuffer {
    tasks: Vec<(u32, Vec<Sample>)>,
}

impl ReplayBuffer {
    /// Reservoir-samples `max(1, floor(fraction · n))` items of `data`.
    pub fn insert(&mut self, task: u32, data: &[Sample], fraction: f64, seed: u64) -> Result<()> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            bail!(Config, "replay fraction must lie in (0, 1], got {}", fraction);
        }
        if self.tasks.iter().any(|(t, _)| *t == task) {
            bail!(Config, "task {} is already in the replay buffer", task);
        }
        let k = (libm::floor(fraction * data.len() as f64 * (1.0 + 1e-12)) as usize).clamp(1, data.len().max(1));
        let mut r = rng::rng_for(seed, &[rng::tag::REPLAY, task as u64]);
        let mut keep: Vec<usize> = (0..k.min(data.len())).collect();
        for i in k..data.len() {
            let j = r.random_range(0..=i);
            if j < k {
                keep[j] = i;
            }
        }
        keep.sort_unstable();
        self.tasks.push((task, keep.into_iter().map(|i| data[i].clone()).collect()));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tasks.iter().map(|(_, s)| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task_ids(&self) -> Vec<u32> {
        self.tasks.iter().map(|(t, _)| *t).collect()
    }
}

/// Read access to the replay buffer, granted to strategies that declare it.
#[derive(Debug, Clone, Copy)]
pub struct ReplayView<'a> {
    buffer: &'a ReplayBuffer,
    log: &'a AccessLog,
}

impl<'a> ReplayView<'a> {
    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn task_ids(&self) -> Vec<u32> {
        self.buffer.task_ids()
    }

    pub fn task_samples(&self, task: u32) -> Result<&'a [Sample]> {
        let (_, s) =
            self.buffer.tasks.iter().find(|(t, _)| *t == task).ok_or_else(|| Error::UnknownEntry(alloc::format!("no replay samples for task {}", task)))?;
        self.log.record(DataSource::Replay { origin: task }, s.len());
        Ok(s)
    }

    /// Every buffered sample, task by task.
    pub fn all(&self) -> Vec<Sample> {
        let mut out = Vec::with_capacity(self.len());
        for (t, s) in &self.buffer.tasks {
            self.log.record(DataSource::Replay { origin: *t }, s.len());
            out.extend(s.iter().cloned());
        }
        out
    }

    /// `k` samples drawn uniformly with replacement across the buffer.
    pub fn draw(&self, r: &mut ChaCha8Rng, k: usize) -> Vec<Sample> {
        let n = self.len();
        if n == 0 {
            return Vec::new();
        }
        (0..k)
            .map(|_| {
                let mut i = r.random_range(0..n);
                for (t, s) in &self.buffer.tasks {
                    if i < s.len() {
                        self.log.record(DataSource::Replay { origin: *t }, 1);
                        return s[i].clone();
                    }
                    i -= s.len();
                }
                unreachable!()
            })
            .collect()
    }
}

/// What a strategy sees while handling one task.
#[derive(Debug)]
pub struct TaskContext<'a> {
    pub model: &'a Model,
    /// 0-based position in the sequence.
    pub task_index: usize,
    pub seed: u64,
    data: TaskData<'a>,
    replay: Option<ReplayView<'a>>,
    previous: Option<&'a ParameterStore>,
}

impl<'a> TaskContext<'a> {
    pub fn task_id(&self) -> u32 {
        self.data.task_id()
    }

    pub fn data(&self) -> &TaskData<'a> {
        &self.data
    }

    pub fn replay(&self) -> Result<&ReplayView<'a>> {
        self.replay.as_ref().ok_or_else(|| Error::AccessDenied("replay buffer not granted to this strategy".into()))
    }

    /// Parameters as they were before this task started.
    pub fn previous_model(&self) -> Result<&'a ParameterStore> {
        self.previous.ok_or_else(|| Error::AccessDenied("previous model not granted to this strategy".into()))
    }
}

/// Outcome of [`Strategy::prepare`]: the task's update scope and, for
/// importance-driven strategies, the map it came from.
#[derive(Debug, Clone, Default)]
pub struct TaskPlan {
    /// `None` trains every parameter.
    pub mask: Option<GradientMask>,
    pub importance: Option<ImportanceMap>,
}

pub trait Strategy {
    fn name(&self) -> &str;

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    /// Hyperparameters for reports.
    fn hyperparameters(&self) -> Vec<(String, f64)> {
        Vec::new()
    }

    fn replay_fraction(&self) -> f64 {
        DEFAULT_REPLAY_FRACTION
    }

    /// Runs before training on a task; may add parameters to the store.
    fn prepare(&mut self, _ctx: &TaskContext<'_>, _store: &mut ParameterStore) -> Result<TaskPlan> {
        Ok(TaskPlan::default())
    }

    fn augment_batch(&mut self, _ctx: &TaskContext<'_>, _batch: &mut Vec<Sample>) -> Result<()> {
        Ok(())
    }

    /// Training objective for one batch; defaults to mean cross-entropy.
    fn loss_and_grad(&mut self, ctx: &TaskContext<'_>, store: &ParameterStore, batch: &[Sample]) -> Result<(f64, GradientRecord)> {
        ctx.model.batch_loss_and_grad(store, batch, ForwardOptions::default())
    }

    /// Samples for one extra pass after the task's epochs.
    fn replay_phase(&mut self, _ctx: &TaskContext<'_>) -> Result<Vec<Sample>> {
        Ok(Vec::new())
    }

    fn finish(&mut self, _ctx: &TaskContext<'_>, _store: &ParameterStore) -> Result<()> {
        Ok(())
    }
}

impl<S: Strategy + ?Sized> Strategy for Box<S> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn hyperparameters(&self) -> Vec<(String, f64)> {
        (**self).hyperparameters()
    }
    fn replay_fraction(&self) -> f64 {
        (**self).replay_fraction()
    }
    fn prepare(&mut self, ctx: &TaskContext<'_>, store: &mut ParameterStore) -> Result<TaskPlan> {
        (**self).prepare(ctx, store)
    }
    fn augment_batch(&mut self, ctx: &TaskContext<'_>, batch: &mut Vec<Sample>) -> Result<()> {
        (**self).augment_batch(ctx, batch)
    }
    fn loss_and_grad(&mut self, ctx: &TaskContext<'_>, store: &ParameterStore, batch: &[Sample]) -> Result<(f64, GradientRecord)> {
        (**self).loss_and_grad(ctx, store, batch)
    }
    fn replay_phase(&mut self, ctx: &TaskContext<'_>) -> Result<Vec<Sample>> {
        (**self).replay_phase(ctx)
    }
    fn finish(&mut self, ctx: &TaskContext<'_>, store: &ParameterStore) -> Result<()> {
        (**self).finish(ctx, store)
    }
}

/// Plain sequential fine-tuning of every parameter.
#[derive(Debug, Clone, Default)]
pub struct SeqFt;

impl Strategy for SeqFt {
    fn name(&self) -> &str {
        "seq-ft"
    }
}

/// Estimates importance on the current task at the pre-task parameters,
/// keeps the top `ratio` share, and trains only those.
#[derive(Debug, Clone)]
pub struct ImportanceMasking {
    pub estimator: Estimator,
    pub ratio: f64,
    pub scope: MaskScope,
}

impl ImportanceMasking {
    pub fn new(estimator: Estimator, ratio: f64) -> Self {
        Self { estimator, ratio, scope: MaskScope::default() }
    }
}

impl Strategy for ImportanceMasking {
    fn name(&self) -> &str {
        match self.estimator {
            Estimator::Fisher => "importance-fisher",
            Estimator::SecondOrder { .. } => "importance-second-order",
            Estimator::MiguMagnitude => "migu",
        }
    }

    fn hyperparameters(&self) -> Vec<(String, f64)> {
        let mut h = alloc::vec![("ratio".to_string(), self.ratio)];
        if let Estimator::SecondOrder { xi } = self.estimator {
            h.push(("xi".to_string(), xi));
        }
        h
    }

    fn prepare(&mut self, ctx: &TaskContext<'_>, store: &mut ParameterStore) -> Result<TaskPlan> {
        let importance = estimate(ctx.model, store, ctx.data().train(), self.estimator)?;
        let budget = SparsityBudget::from_ratio(self.ratio, store.len())?;
        let candidates = self.scope.candidates(store);
        let mask = select_topk_among(&importance, budget, ctx.task_id(), candidates.as_deref())?;
        Ok(TaskPlan { mask: Some(mask), importance: Some(importance) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum Event {
    TaskStart { task: u32, trainable: usize, params: usize },
    Epoch { task: u32, epoch: usize, loss: f64 },
    ReplayPass { task: u32, samples: usize, loss: f64 },
    Score { task: u32, eval_task: u32, score: f64 },
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunState {
    pub strategy: String,
    pub store: ParameterStore,
    /// Parameters at the start of each task (`θ_{t−1}`).
    pub checkpoints: Vec<ParameterStore>,
    pub masks: Vec<GradientMask>,
    pub importances: Vec<ImportanceMap>,
    pub scores: ScoreMatrix,
    pub events: Vec<Event>,
    /// Adam state at the end of each task (empty under SGD).
    pub adam_states: Vec<AdamState>,
    pub access_log: Vec<AccessEvent>,
}

pub fn run_sequence(model: &Model, init: &ParameterStore, tasks: &[TaskSpec], strategy: &mut dyn Strategy, opt: &OptimizerConfig) -> Result<RunState> {
    if tasks.is_empty() {
        bail!(Config, "a run needs at least one task");
    }
    opt.validate()?;
    for t in tasks {
        for s in t.train.iter().chain(&t.eval) {
            model.check_sample(s).map_err(|e| Error::Sample(alloc::format!("task {}: {}", t.task_id, e)))?;
        }
    }
    let caps = strategy.capabilities();
    let log = AccessLog::default();
    let mut buffer = ReplayBuffer::default();
    let mut store = init.clone();
    let mut checkpoints = Vec::with_capacity(tasks.len());
    let mut masks = Vec::new();
    let mut importances = Vec::new();
    let mut scores = ScoreMatrix::new();
    let mut events = Vec::new();
    let mut adam_states = Vec::new();

    for (k, task) in tasks.iter().enumerate() {
        let tid = task.task_id;
        checkpoints.push(store.clone());
        let mut handle_task = || -> Result<()> {
            let previous = checkpoints.last().unwrap().clone();
            {
                let ctx = TaskContext {
                    model,
                    task_index: k,
                    seed: opt.seed,
                    data: TaskData { task, log: &log },
                    replay: caps.needs_replay_buffer.then_some(ReplayView { buffer: &buffer, log: &log }),
                    previous: caps.needs_previous_model.then_some(&previous),
                };
                log.set(tid, Phase::Prepare);
                let plan = strategy.prepare(&ctx, &mut store)?;
                if let Some(m) = &plan.mask {
                    if m.param_count() != store.len() {
                        bail!(Shape, "strategy mask covers {} parameters, store has {}", m.param_count(), store.len());
                    }
                }
                let scope = match &plan.mask {
                    Some(m) => UpdateScope::from_mask(m),
                    None => UpdateScope::All,
                };
                let trainable = plan.mask.as_ref().map_or(store.len(), |m| m.k());
                events.push(Event::TaskStart { task: tid, trainable, params: store.len() });
                log::info!("{}: task {} trains {} of {} parameters", strategy.name(), tid, trainable, store.len());

                let mut adam = AdamState::new(store.len());
                let adam_cfg = opt.adam_config();
                let mut step = |store: &mut ParameterStore, strategy: &mut dyn Strategy, batch: &mut Vec<Sample>| -> Result<f64> {
                    strategy.augment_batch(&ctx, batch)?;
                    let (loss, grad) = strategy.loss_and_grad(&ctx, store, batch)?;
                    if grad.len() != store.len() {
                        bail!(Shape, "strategy gradient has {} values for {} parameters", grad.len(), store.len());
                    }
                    match opt.kind {
                        OptimizerKind::Sgd => sgd_step(store, &grad, scope, opt.lr)?,
                        OptimizerKind::Adam => adam_step(store, &grad, scope, opt.lr, &adam_cfg, &mut adam)?,
                    }
                    Ok(loss)
                };

                log.set(tid, Phase::Train);
                let mut order: Vec<usize> = (0..task.train.len()).collect();
                for epoch in 0..opt.epochs {
                    let mut r = rng::rng_for(opt.seed, &[rng::tag::SHUFFLE, k as u64, epoch as u64]);
                    order.shuffle(&mut r);
                    let (mut total, mut batches) = (0.0, 0usize);
                    for chunk in order.chunks(opt.batch_size) {
                        let mut batch = ctx.data.batch(chunk);
                        total += step(&mut store, strategy, &mut batch)?;
                        batches += 1;
                    }
                    events.push(Event::Epoch { task: tid, epoch: epoch + 1, loss: total / batches as f64 });
                }

                log.set(tid, Phase::Replay);
                let mut extra = strategy.replay_phase(&ctx)?;
                if !extra.is_empty() {
                    let mut r = rng::rng_for(opt.seed, &[rng::tag::SHUFFLE, k as u64, u64::MAX]);
                    extra.shuffle(&mut r);
                    let (mut total, mut batches) = (0.0, 0usize);
                    for chunk in extra.chunks(opt.batch_size) {
                        total += step(&mut store, strategy, &mut chunk.to_vec())?;
                        batches += 1;
                    }
                    events.push(Event::ReplayPass { task: tid, samples: extra.len(), loss: total / batches as f64 });
                }

                log.set(tid, Phase::Finish);
                strategy.finish(&ctx, &store)?;
                if let Some(m) = plan.mask {
                    masks.push(m);
                }
                if let Some(i) = plan.importance {
                    importances.push(i);
                }
                if opt.kind == OptimizerKind::Adam {
                    adam_states.push(adam);
                }
            }
            if caps.needs_replay_buffer {
                let data = TaskData { task, log: &log };
                buffer.insert(tid, data.train(), strategy.replay_fraction(), opt.seed)?;
            }

            log.set(tid, Phase::Evaluate);
            let mut row = Vec::with_capacity(k + 1);
            for seen in &tasks[..=k] {
                log.record(DataSource::Eval { task: seen.task_id }, seen.eval.len());
                let score = evaluate(model, &store, seen)?;
                events.push(Event::Score { task: tid, eval_task: seen.task_id, score });
                row.push(score);
            }
            scores.push_row(row)?;
            Ok(())
        };
        handle_task().map_err(|e| e.in_task(tid))?;
    }

    Ok(RunState { strategy: strategy.name().to_string(), store, checkpoints, masks, importances, scores, events, adam_states, access_log: log.into_events() })
}

/// Accuracy in `[0, 1]`, or the text metric in `[0, 100]` over greedy
/// generations.
pub fn evaluate(model: &Model, store: &ParameterStore, task: &TaskSpec) -> Result<f64> {
    if task.eval.is_empty() {
        bail!(EmptyDataset, "task {} has no eval samples", task.task_id);
    }
    match task.metric {
        MetricKind::Accuracy => {
            let mut correct = 0usize;
            for chunk in task.eval.chunks(256) {
                let bg = model.build_batch(store, chunk, ForwardOptions::default())?;
                let (_, cols) = bg.graph.dims(bg.logits);
                let z = bg.graph.value(bg.logits);
                for (i, s) in chunk.iter().enumerate() {
                    let Sample::Labeled { label, .. } = s else { bail!(Sample, "accuracy needs labeled samples") };
                    if argmax(&z[i * cols..(i + 1) * cols]) == *label {
                        correct += 1;
                    }
                }
            }
            Ok(correct as f64 / task.eval.len() as f64)
        }
        MetricKind::TextOverlap => {
            let mut total = 0.0;
            for s in &task.eval {
                let Sample::Sequence { prompt, completion } = s else { bail!(Sample, "text scoring needs sequence samples") };
                let out = model.generate(store, prompt, completion.len())?;
                total += text_metric(&out, completion);
            }
            Ok(total / task.eval.len() as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::importance::DEFAULT_XI;
    use crate::model::{build_model, ModelConfig};
    use crate::tasks::{generate_sequence, SyntheticTaskConfig};
    use alloc::vec;

    fn small_tasks(n: usize) -> Vec<TaskSpec> {
        let cfgs: Vec<_> = (0..n).map(|i| SyntheticTaskConfig::gaussian(6, 3, 60, 30, 10 + i as u64, i as f64 * 0.8)).collect();
        generate_sequence(&cfgs).unwrap()
    }

    #[test]
    fn zero_epochs_leave_parameters_untouched() {
        let (m, s) = build_model(ModelConfig::mlp(&[6, 8, 3], 1)).unwrap();
        let tasks = small_tasks(1);
        let opt = OptimizerConfig { epochs: 0, ..OptimizerConfig::sgd(0.1, 0, 16, 1) };
        let run = run_sequence(&m, &s, &tasks, &mut SeqFt, &opt).unwrap();
        assert_eq!(run.store, s);
        assert_eq!(run.scores.get(1, 1).unwrap(), evaluate(&m, &s, &tasks[0]).unwrap());
    }

    #[test]
    fn importance_run_records_one_mask_per_task_and_freezes() {
        let (m, s) = build_model(ModelConfig::mlp(&[6, 8, 3], 2)).unwrap();
        let tasks = small_tasks(3);
        let mut strat = ImportanceMasking::new(Estimator::SecondOrder { xi: DEFAULT_XI }, 0.1);
        let run = run_sequence(&m, &s, &tasks, &mut strat, &OptimizerConfig::sgd(0.05, 2, 16, 3)).unwrap();
        assert_eq!(run.masks.len(), 3);
        assert_eq!(run.scores.tasks(), 3);
        let ends: Vec<&ParameterStore> = run.checkpoints[1..].iter().chain([&run.store]).collect();
        for (t, mask) in run.masks.iter().enumerate() {
            let (before, after) = (run.checkpoints[t].values(), ends[t].values());
            for i in 0..s.len() {
                if !mask.contains(i) {
                    assert_eq!(before[i].to_bits(), after[i].to_bits());
                }
            }
        }
        assert!(audit_no_history(&run.access_log).is_empty());
    }

    #[test]
    fn runs_are_deterministic() {
        let (m, s) = build_model(ModelConfig::mlp(&[6, 8, 3], 2)).unwrap();
        let tasks = small_tasks(2);
        let opt = OptimizerConfig::adam(0.01, 2, 16, 9);
        let a = run_sequence(&m, &s, &tasks, &mut SeqFt, &opt).unwrap();
        let b = run_sequence(&m, &s, &tasks, &mut SeqFt, &opt).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.store, b.store);
        assert_eq!(a.events, b.events);
    }

    struct Snooper;

    impl Strategy for Snooper {
        fn name(&self) -> &str {
            "snooper"
        }
        fn prepare(&mut self, ctx: &TaskContext<'_>, _store: &mut ParameterStore) -> Result<TaskPlan> {
            ctx.replay()?;
            Ok(TaskPlan::default())
        }
    }

    #[test]
    fn undeclared_resources_are_refused() {
        let (m, s) = build_model(ModelConfig::mlp(&[6, 8, 3], 2)).unwrap();
        let err = run_sequence(&m, &s, &small_tasks(1), &mut Snooper, &OptimizerConfig::default()).unwrap_err();
        assert!(matches!(err.root(), Error::AccessDenied(_)));
    }

    #[test]
    fn reservoir_sizes_and_origins() {
        let tasks = small_tasks(2);
        let mut b = ReplayBuffer::default();
        b.insert(1, &tasks[0].train, 0.05, 1).unwrap();
        assert_eq!(b.len(), 3);
        b.insert(2, &tasks[1].train, 0.001, 1).unwrap();
        assert_eq!(b.len(), 4);
        assert!(b.insert(2, &tasks[1].train, 0.5, 1).is_err());
        for s in &b.tasks[0].1 {
            assert!(tasks[0].train.contains(s));
        }
    }

    #[test]
    fn audit_flags_foreign_reads() {
        let ok = AccessEvent { during_task: 2, phase: Phase::Train, source: DataSource::Train { task: 2 }, samples: 5 };
        let old = AccessEvent { source: DataSource::Train { task: 1 }, ..ok };
        let future = AccessEvent { source: DataSource::Replay { origin: 2 }, ..ok };
        let eval = AccessEvent { phase: Phase::Evaluate, source: DataSource::Eval { task: 1 }, ..ok };
        assert_eq!(audit_no_history(&[ok, old, future, eval]), vec![old, future]);
    }

    #[test]
    fn perfect_and_coin_flip_classifiers() {
        // a 2-class linear model that copies feature 0 vs feature 1
        let (m, mut s) = build_model(ModelConfig::mlp(&[2, 2], 0)).unwrap();
        s.set_values(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let eval: Vec<Sample> = (0..10).map(|i| Sample::labeled(vec![(i % 2) as f64, ((i + 1) % 2) as f64], 1 - i % 2)).collect();
        let train = vec![Sample::labeled(vec![5.0, 5.0], 0)];
        let task = TaskSpec::new(1, "t", MetricKind::Accuracy, train.clone(), eval).unwrap();
        assert_eq!(evaluate(&m, &s, &task).unwrap(), 1.0);

        // labels from a fair coin, independent of the features
        let mut r = rng::rng_for(42, &[99]);
        let eval: Vec<Sample> = (0..1000).map(|_| Sample::labeled(vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)], r.random_range(0..2))).collect();
        let task = TaskSpec::new(1, "coin", MetricKind::Accuracy, train, eval).unwrap();
        let acc = evaluate(&m, &s, &task).unwrap();
        assert!((acc - 0.5).abs() <= 0.05, "{}", acc);
    }
}
