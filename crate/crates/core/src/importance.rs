//! Per-parameter importance over a task dataset.
//!
//! * empirical Fisher diagonal: `F_i = mean_n g_{n,i}²`
//! * second-order normalized: `S_i = |mean_n g_{n,i}| / sqrt(mean_n g_{n,i}² + ξ)`
//! * output magnitude: mean L1 response of each linear output channel,
//!   broadcast to that channel's weight row and bias
//!
//! `g_{n,i}` is the per-sample log-likelihood gradient. Both gradient
//! estimators stream the data once and keep two flat running sums
//! (`Σg`, `Σg²`), so memory is `2·|θ|` whatever the dataset size.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::model::{ForwardOptions, Model, Sample};
use crate::store::{GradientRecord, ParameterStore};

pub const DEFAULT_XI: f64 = 1e-8;

/// Largest double below one; second-order scores are clamped under it.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorTag {
    Fisher,
    SecondOrder,
    MiguMagnitude,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 3] = [Self::Fisher, Self::SecondOrder, Self::MiguMagnitude];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fisher => "fisher",
            Self::SecondOrder => "second-order",
            Self::MiguMagnitude => "migu-magnitude",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::Fisher => 0,
            Self::SecondOrder => 1,
            Self::MiguMagnitude => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which estimator to run, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Fisher,
    SecondOrder { xi: f64 },
    MiguMagnitude,
}

impl Estimator {
    pub fn tag(self) -> EstimatorTag {
        match self {
            Self::Fisher => EstimatorTag::Fisher,
            Self::SecondOrder { .. } => EstimatorTag::SecondOrder,
            Self::MiguMagnitude => EstimatorTag::MiguMagnitude,
        }
    }
}

/// One nonnegative score per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    pub scores: Vec<f64>,
    pub estimator: EstimatorTag,
    pub sample_count: usize,
    /// Stabilizer; only meaningful for [`EstimatorTag::SecondOrder`].
    pub xi: f64,
}

impl ImportanceMap {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            bail!(Config, "importance map built from zero samples");
        }
        if let Some(i) = self.scores.iter().position(|s| !s.is_finite() || *s < 0.0) {
            bail!(Config, "score {} at index {} is not a finite nonnegative value", self.scores[i], i);
        }
        if self.estimator == EstimatorTag::SecondOrder {
            if !(self.xi > 0.0) {
                bail!(Config, "second-order map needs xi > 0, got {}", self.xi);
            }
            if let Some(i) = self.scores.iter().position(|&s| s >= 1.0) {
                bail!(Config, "second-order score {} at index {} is not below one", self.scores[i], i);
            }
        }
        Ok(())
    }
}

/// Running `Σg` and `Σg²` over per-sample gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientAccumulator {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    count: usize,
}

impl GradientAccumulator {
    pub fn new(len: usize) -> Self {
        Self { sum: vec![0.0; len], sum_sq: vec![0.0; len], count: 0 }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, g: &GradientRecord) -> Result<()> {
        if g.len() != self.sum.len() {
            bail!(Shape, "gradient of {} values for an accumulator of {}", g.len(), self.sum.len());
        }
        for ((s, q), &v) in self.sum.iter_mut().zip(self.sum_sq.iter_mut()).zip(&g.values) {
            *s += v;
            *q += v * v;
        }
        self.count += 1;
        Ok(())
    }

    /// Streams per-sample gradients of `data` at `store`.
    pub fn accumulate(&mut self, model: &Model, store: &ParameterStore, data: &[Sample]) -> Result<()> {
        model.for_each_sample_grad(store, data, |_, g| self.push(&g))
    }

    /// Folds another shard in. Merge shards in ascending shard order for
    /// reproducible sums.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.sum.len() != self.sum.len() {
            bail!(Shape, "merging accumulators of {} and {} values", self.sum.len(), other.sum.len());
        }
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn fisher(&self) -> Result<ImportanceMap> {
        if self.count == 0 {
            bail!(EmptyDataset, "fisher importance needs at least one sample");
        }
        let n = self.count as f64;
        Ok(ImportanceMap { scores: self.sum_sq.iter().map(|q| q / n).collect(), estimator: EstimatorTag::Fisher, sample_count: self.count, xi: 0.0 })
    }

    pub fn second_order(&self, xi: f64) -> Result<ImportanceMap> {
        if !(xi > 0.0) || !xi.is_finite() {
            bail!(Config, "xi must be a positive finite constant, got {}", xi);
        }
        if self.count == 0 {
            bail!(EmptyDataset, "second-order importance needs at least one sample");
        }
        let n = self.count as f64;
        let scores = self.sum.iter().zip(&self.sum_sq).map(|(s, q)| second_order_score(s / n, q / n, xi)).collect();
        Ok(ImportanceMap { scores, estimator: EstimatorTag::SecondOrder, sample_count: self.count, xi })
    }
}

/// `|mean| / sqrt(mean_sq + ξ)`, kept strictly below one when rounding
/// would otherwise reach it for very large gradients.
pub fn second_order_score(mean: f64, mean_sq: f64, xi: f64) -> f64 {
    let s = mean.abs() / libm::sqrt(mean_sq + xi);
    if s >= 1.0 {
        BELOW_ONE
    } else {
        s
    }
}

pub fn estimate_fisher(model: &Model, store: &ParameterStore, data: &[Sample]) -> Result<ImportanceMap> {
    if data.is_empty() {
        bail!(EmptyDataset, "fisher importance over an empty dataset");
    }
    let mut acc = GradientAccumulator::new(store.len());
    acc.accumulate(model, store, data)?;
    acc.fisher()
}

pub fn estimate_second_order(model: &Model, store: &ParameterStore, data: &[Sample], xi: f64) -> Result<ImportanceMap> {
    if !(xi > 0.0) {
        bail!(Config, "xi must be positive, got {}", xi);
    }
    if data.is_empty() {
        bail!(EmptyDataset, "second-order importance over an empty dataset");
    }
    let mut acc = GradientAccumulator::new(store.len());
    acc.accumulate(model, store, data)?;
    acc.second_order(xi)
}

/// Mean L1 norm of each linear layer's output-channel response `W_i · x`
/// (bias excluded), broadcast to the channel's weight row and bias entry.
/// Parameters outside linear layers score zero.
pub fn estimate_migu_magnitude(model: &Model, store: &ParameterStore, data: &[Sample]) -> Result<ImportanceMap> {
    if data.is_empty() {
        bail!(EmptyDataset, "magnitude importance over an empty dataset");
    }
    // (weight entry, bias entry, per-channel running sum)
    let mut channels: Vec<(usize, Option<usize>, Vec<f64>)> = Vec::new();
    for sample in data {
        let bg = model.build_batch(store, core::slice::from_ref(sample), ForwardOptions::default())?;
        for tr in &bg.traces {
            let info = &store.entries()[tr.weight_entry];
            let (out, inp) = (info.shape[0], info.shape[1]);
            let w = store.entry_values(tr.weight_entry);
            let x = bg.graph.value(tr.input);
            let slot = match channels.iter().position(|c| c.0 == tr.weight_entry) {
                Some(p) => p,
                None => {
                    channels.push((tr.weight_entry, tr.bias_entry, vec![0.0; out]));
                    channels.len() - 1
                }
            };
            let acc = &mut channels[slot].2;
            for row in x.chunks(inp) {
                for (i, a) in acc.iter_mut().enumerate() {
                    let h: f64 = w[i * inp..(i + 1) * inp].iter().zip(row).map(|(p, q)| p * q).sum();
                    *a += h.abs();
                }
            }
        }
    }
    let n = data.len() as f64;
    let mut scores = vec![0.0; store.len()];
    for (we, be, acc) in &channels {
        let info = &store.entries()[*we];
        let inp = info.shape[1];
        for (i, a) in acc.iter().enumerate() {
            let score = a / n;
            let row = info.offset + i * inp;
            scores[row..row + inp].iter_mut().for_each(|s| *s = score);
            if let Some(b) = be {
                scores[store.entries()[*b].offset + i] = score;
            }
        }
    }
    Ok(ImportanceMap { scores, estimator: EstimatorTag::MiguMagnitude, sample_count: data.len(), xi: 0.0 })
}

pub fn estimate(model: &Model, store: &ParameterStore, data: &[Sample], estimator: Estimator) -> Result<ImportanceMap> {
    match estimator {
        Estimator::Fisher => estimate_fisher(model, store, data),
        Estimator::SecondOrder { xi } => estimate_second_order(model, store, data, xi),
        Estimator::MiguMagnitude => estimate_migu_magnitude(model, store, data),
    }
}
