//! Deterministic synthetic task streams.
//!
//! Every generator is a pure function of its config. Class means come from
//! `base_seed` so that tasks in one stream share structure, while `seed`
//! drives per-task randomness.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::model::Sample;
use crate::rng::{self, ChaCha8Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    GaussianClusters,
    PermutedFeatures,
    SplitLabels,
    CharSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    #[default]
    Accuracy,
    /// Mean of ROUGE-L and BLEU on greedy generations, scaled to 0..100.
    TextOverlap,
}

/// One synthetic task.
///
/// `drift` means: rotation angle in radians (gaussian-clusters,
/// split-labels), fraction of permuted features (permuted-features), or
/// fraction of remapped symbols (char-sequence).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskConfig {
    pub kind: GeneratorKind,
    /// Feature count, or prompt length for char-sequence.
    pub dim: usize,
    /// Classes per task, or alphabet size for char-sequence.
    pub classes: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub drift: f64,
    /// First label of this task (split-labels).
    #[serde(default)]
    pub label_offset: usize,
    /// Standard deviation of the isotropic sample noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    1.0
}

impl SyntheticTaskConfig {
    pub fn gaussian(dim: usize, classes: usize, train_size: usize, eval_size: usize, seed: u64, drift: f64) -> Self {
        Self { kind: GeneratorKind::GaussianClusters, dim, classes, train_size, eval_size, seed, base_seed: 0, drift, label_offset: 0, noise: default_noise() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.dim == 0 {
            bail!(Config, "task needs at least one class and one dimension");
        }
        if self.train_size == 0 || self.eval_size == 0 {
            bail!(Config, "task needs nonempty train and eval splits");
        }
        if !self.drift.is_finite() || !(self.noise >= 0.0) || !self.noise.is_finite() {
            bail!(Config, "drift and noise must be finite, noise nonnegative");
        }
        match self.kind {
            GeneratorKind::GaussianClusters | GeneratorKind::SplitLabels => {
                if self.dim < 2 {
                    bail!(Config, "{:?} needs dim >= 2", self.kind);
                }
            }
            GeneratorKind::PermutedFeatures | GeneratorKind::CharSequence => {
                if !(0.0..=1.0).contains(&self.drift) {
                    bail!(Config, "{:?} drift is a fraction in [0, 1], got {}", self.kind, self.drift);
                }
                if self.kind == GeneratorKind::PermutedFeatures && self.dim < 2 {
                    bail!(Config, "permuted-features needs dim >= 2");
                }
            }
        }
        if self.kind == GeneratorKind::CharSequence {
            if self.classes < 2 {
                bail!(Config, "char-sequence needs an alphabet of at least 2 symbols");
            }
            let space = libm::pow(self.classes as f64, self.dim as f64);
            if space < (self.train_size + self.eval_size) as f64 {
                bail!(Config, "{} distinct prompts cannot fill {} samples", space, self.train_size + self.eval_size);
            }
        }
        Ok(())
    }

    /// Output width a model needs for this task.
    pub fn label_space(&self) -> usize {
        match self.kind {
            GeneratorKind::SplitLabels => self.label_offset + self.classes,
            GeneratorKind::CharSequence => self.classes + 1,
            _ => self.classes,
        }
    }
}

/// A task: train and eval splits plus how to score it. Loss is always
/// cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: u32,
    pub name: String,
    pub metric: MetricKind,
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

impl TaskSpec {
    /// Checks that both splits are nonempty and share no sample.
    pub fn new(task_id: u32, name: impl Into<String>, metric: MetricKind, train: Vec<Sample>, eval: Vec<Sample>) -> Result<Self> {
        let name = name.into();
        if train.is_empty() || eval.is_empty() {
            bail!(EmptyDataset, "task `{}` needs nonempty train and eval splits", name);
        }
        let keys: BTreeSet<Vec<u64>> = train.iter().map(sample_key).collect();
        if let Some(i) = eval.iter().position(|s| keys.contains(&sample_key(s))) {
            bail!(Config, "task `{}`: eval sample {} also appears in train", name, i);
        }
        Ok(Self { task_id, name, metric, train, eval })
    }
}

fn sample_key(s: &Sample) -> Vec<u64> {
    match s {
        Sample::Labeled { features, label } => {
            let mut k: Vec<u64> = features.iter().map(|f| f.to_bits()).collect();
            k.push(*label as u64);
            k
        }
        Sample::Sequence { prompt, completion } => {
            let mut k: Vec<u64> = prompt.iter().map(|&t| t as u64).collect();
            k.push(u64::MAX);
            k.extend(completion.iter().map(|&t| t as u64));
            k
        }
    }
}

pub fn generate_task(config: &SyntheticTaskConfig, task_id: u32) -> Result<TaskSpec> {
    config.validate()?;
    let name = alloc::format!("task-{}", task_id);
    match config.kind {
        GeneratorKind::GaussianClusters | GeneratorKind::SplitLabels => {
            let means = rotated_means(config);
            let mut r = rng::rng_for(config.seed, &[rng::tag::DATA, 0]);
            let train = cluster_samples(&means, config, config.train_size, &mut r);
            let eval = cluster_samples(&means, config, config.eval_size, &mut r);
            TaskSpec::new(task_id, name, MetricKind::Accuracy, train, eval)
        }
        GeneratorKind::PermutedFeatures => {
            let base = SyntheticTaskConfig { drift: 0.0, seed: config.base_seed, ..config.clone() };
            let means = rotated_means(&base);
            let mut r = rng::rng_for(config.base_seed, &[rng::tag::DATA, 0]);
            let mut train = cluster_samples(&means, &base, config.train_size, &mut r);
            let mut eval = cluster_samples(&means, &base, config.eval_size, &mut r);
            let perm = partial_permutation(config.dim, config.drift, config.seed);
            for s in train.iter_mut().chain(eval.iter_mut()) {
                if let Sample::Labeled { features, .. } = s {
                    *features = perm.iter().map(|&j| features[j]).collect();
                }
            }
            TaskSpec::new(task_id, name, MetricKind::Accuracy, train, eval)
        }
        GeneratorKind::CharSequence => char_sequence(config, task_id, name),
    }
}

pub fn generate_sequence(configs: &[SyntheticTaskConfig]) -> Result<Vec<TaskSpec>> {
    if configs.is_empty() {
        bail!(Config, "a task sequence needs at least one task");
    }
    configs.iter().enumerate().map(|(i, c)| generate_task(c, i as u32 + 1)).collect()
}

/// Class means live in the first `h = dim / 2` coordinates; the task
/// rotates each plane `(j, j + h)` by `drift` radians, so a quarter turn
/// moves them into a subspace orthogonal to the unrotated means.
fn rotated_means(config: &SyntheticTaskConfig) -> Vec<Vec<f64>> {
    let h = config.dim / 2;
    let (c, s) = (libm::cos(config.drift), libm::sin(config.drift));
    (0..config.classes)
        .map(|k| {
            let global = (config.label_offset + k) as u64;
            let mut r = rng::rng_for(config.base_seed, &[rng::tag::DATA, 1, global]);
            let mut mean = alloc::vec![0.0; config.dim];
            for m in mean.iter_mut().take(h) {
                *m = StandardNormal.sample(&mut r);
            }
            for j in 0..h {
                let (a, b) = (mean[j], mean[j + h]);
                mean[j] = c * a - s * b;
                mean[j + h] = s * a + c * b;
            }
            mean
        })
        .collect()
}

fn cluster_samples(means: &[Vec<f64>], config: &SyntheticTaskConfig, n: usize, r: &mut ChaCha8Rng) -> Vec<Sample> {
    let mut out: Vec<Sample> = (0..n)
        .map(|i| {
            let k = i % means.len();
            let features = means[k]
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(r);
                    m + config.noise * z
                })
                .collect();
            Sample::labeled(features, config.label_offset + k)
        })
        .collect();
    out.shuffle(r);
    out
}

/// Feature order for a task: `round(fraction · dim)` positions, chosen by
/// `seed`, are cyclically shifted among themselves; the rest stay put.
pub fn partial_permutation(dim: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..dim).collect();
    let m = libm::round(fraction * dim as f64) as usize;
    if m < 2 {
        return perm;
    }
    let mut r = rng::rng_for(seed, &[rng::tag::DATA, 2]);
    let mut chosen: Vec<usize> = (0..dim).collect();
    chosen.shuffle(&mut r);
    chosen.truncate(m);
    for (i, &pos) in chosen.iter().enumerate() {
        perm[pos] = chosen[(i + 1) % m];
    }
    perm
}

/// Symbol substitution for a char-sequence task: `round(drift · classes)`
/// symbols, chosen by `seed`, map cyclically onto each other; the rest map
/// to themselves.
pub fn substitution(classes: usize, drift: f64, seed: u64) -> Vec<usize> {
    partial_permutation(classes, drift, seed ^ 0x5eed)
}

/// Prompts of `dim` random symbols followed by the separator (token
/// `classes`); the completion is the prompt under the task's substitution.
fn char_sequence(config: &SyntheticTaskConfig, task_id: u32, name: String) -> Result<TaskSpec> {
    let sigma = substitution(config.classes, config.drift, config.seed);
    let sep = config.classes;
    let total = config.train_size + config.eval_size;
    let mut r = rng::rng_for(config.seed, &[rng::tag::DATA, 3]);
    let mut seen = BTreeSet::new();
    let mut prompts = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while prompts.len() < total {
        attempts += 1;
        if attempts > 64 * total + 1024 {
            bail!(Config, "could not draw {} distinct prompts", total);
        }
        let p: Vec<usize> = (0..config.dim).map(|_| r.random_range(0..config.classes)).collect();
        if seen.insert(p.clone()) {
            prompts.push(p);
        }
    }
    let samples: Vec<Sample> = prompts
        .into_iter()
        .map(|p| {
            let completion = p.iter().map(|&t| sigma[t]).collect();
            let mut prompt = p;
            prompt.push(sep);
            Sample::sequence(prompt, completion)
        })
        .collect();
    let (train, eval) = samples.split_at(config.train_size);
    TaskSpec::new(task_id, name, MetricKind::TextOverlap, train.to_vec(), eval.to_vec())
}

/// The default stream: three gaussian-cluster tasks, 20 features, 5
/// classes, 1000 train and 500 eval samples each.
pub fn default_stream() -> Vec<SyntheticTaskConfig> {
    let drifts = [0.0, PI / 3.0, 2.0 * PI / 3.0];
    drifts.iter().enumerate().map(|(i, &d)| SyntheticTaskConfig::gaussian(20, 5, 1000, 500, 100 + i as u64, d)).collect()
}
