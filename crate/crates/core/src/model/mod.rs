//! Model families and their losses.
//!
//! A [`Model`] is a stateless description; all trainable state lives in the
//! [`ParameterStore`] returned by [`build_model`]. Forward passes are pure
//! functions of `(store, inputs)`.

mod lora;
mod mlp;
mod transformer;

use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Target, Var};
use crate::error::{bail, Result};
use crate::rng::{self, ChaCha8Rng};
use crate::store::{GradientRecord, Granularity, ParameterStore};
use crate::tensor::Tensor;

pub use lora::{attach_lora, default_lora_targets, merged_weight, LoraConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    Mlp,
    TinyTransformer,
}

/// Architecture description. Fields that do not apply to `family` are
/// ignored (MLP: `sizes`, `layer_norm`; transformer: the rest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: ModelFamily,
    /// MLP layer widths, input first and class count last.
    #[serde(default)]
    pub sizes: Vec<usize>,
    /// MLP: layer norm after every hidden activation.
    #[serde(default)]
    pub layer_norm: bool,
    #[serde(default)]
    pub vocab: usize,
    #[serde(default)]
    pub d_model: usize,
    #[serde(default)]
    pub layers: usize,
    #[serde(default)]
    pub heads: usize,
    /// Feed-forward width; 0 means `4 * d_model`.
    #[serde(default)]
    pub ffn: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_len() -> usize {
    64
}

impl ModelConfig {
    pub fn mlp(sizes: &[usize], seed: u64) -> Self {
        Self {
            family: ModelFamily::Mlp,
            sizes: sizes.to_vec(),
            layer_norm: false,
            vocab: 0,
            d_model: 0,
            layers: 0,
            heads: 0,
            ffn: 0,
            max_len: default_max_len(),
            seed,
        }
    }

    pub fn transformer(vocab: usize, d_model: usize, layers: usize, heads: usize, seed: u64) -> Self {
        Self {
            family: ModelFamily::TinyTransformer,
            sizes: Vec::new(),
            layer_norm: false,
            vocab,
            d_model,
            layers,
            heads,
            ffn: 0,
            max_len: default_max_len(),
            seed,
        }
    }

    pub fn with_layer_norm(mut self, on: bool) -> Self {
        self.layer_norm = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            ModelFamily::Mlp => {
                if self.sizes.len() < 2 {
                    bail!(Config, "mlp needs at least input and output sizes, got {:?}", self.sizes);
                }
                if self.sizes.contains(&0) {
                    bail!(Config, "mlp layer sizes must be positive, got {:?}", self.sizes);
                }
            }
            ModelFamily::TinyTransformer => {
                if self.vocab < 2 {
                    bail!(Config, "transformer vocab must be at least 2, got {}", self.vocab);
                }
                if self.d_model == 0 || self.layers == 0 || self.heads == 0 || self.max_len == 0 {
                    bail!(Config, "transformer d_model, layers, heads and max_len must be positive");
                }
                if !self.d_model.is_multiple_of(self.heads) {
                    bail!(Config, "d_model {} is not divisible by {} heads", self.d_model, self.heads);
                }
            }
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        match self.family {
            ModelFamily::Mlp => *self.sizes.last().unwrap_or(&0),
            ModelFamily::TinyTransformer => self.vocab,
        }
    }

    fn ffn_width(&self) -> usize {
        if self.ffn == 0 {
            4 * self.d_model
        } else {
            self.ffn
        }
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sample {
    /// Feature vector with a class label (MLP).
    Labeled { features: Vec<f64>, label: usize },
    /// Token prompt and the completion the model should produce
    /// (transformer, next-token loss on the completion only).
    Sequence { prompt: Vec<usize>, completion: Vec<usize> },
}

impl Sample {
    pub fn labeled(features: Vec<f64>, label: usize) -> Self {
        Self::Labeled { features, label }
    }

    pub fn sequence(prompt: Vec<usize>, completion: Vec<usize>) -> Self {
        Self::Sequence { prompt, completion }
    }
}

/// Input rows fed to one linear layer, kept for magnitude-based importance.
#[derive(Debug, Clone)]
pub struct LinearTrace {
    pub weight_entry: usize,
    pub bias_entry: Option<usize>,
    pub input: Var,
}

/// A built forward graph for a batch.
#[derive(Debug)]
pub struct BatchGraph {
    pub graph: Graph,
    /// Logits, one row per predicted position.
    pub logits: Var,
    /// Hard targets with weights that make their sum the batch-mean loss.
    pub targets: Vec<Target>,
    pub traces: Vec<LinearTrace>,
}

impl BatchGraph {
    /// Adds the cross-entropy node; returns the loss variable.
    pub fn cross_entropy(&mut self) -> Result<Var> {
        let targets = self.targets.clone();
        self.graph.cross_entropy(self.logits, targets)
    }
}

/// Forward-pass options; dropout only applies when an RNG is supplied.
#[derive(Debug, Default)]
pub struct ForwardOptions<'a> {
    pub dropout_rng: Option<&'a mut ChaCha8Rng>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
}

/// Builds a model and its deterministic initial parameters.
pub fn build_model(config: ModelConfig) -> Result<(Model, ParameterStore)> {
    config.validate()?;
    let mut init = rng::rng_for(config.seed, &[rng::tag::INIT]);
    let store = match config.family {
        ModelFamily::Mlp => mlp::init(&config, &mut init)?,
        ModelFamily::TinyTransformer => transformer::init(&config, &mut init)?,
    };
    Ok((Model { config }, store))
}

pub(crate) fn uniform_tensor(shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n = shape.iter().product();
    let dist = Uniform::new_inclusive(-bound, bound).map_err(|e| crate::Error::Config(alloc::format!("{}", e)))?;
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

pub(crate) fn normal_tensor(shape: Vec<usize>, std: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n = shape.iter().product();
    let dist = Normal::new(0.0, std).map_err(|e| crate::Error::Config(alloc::format!("{}", e)))?;
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn family(&self) -> ModelFamily {
        self.config.family
    }

    pub fn check_sample(&self, sample: &Sample) -> Result<()> {
        match (self.config.family, sample) {
            (ModelFamily::Mlp, Sample::Labeled { features, label }) => {
                if features.len() != self.config.sizes[0] {
                    bail!(Sample, "expected {} features, got {}", self.config.sizes[0], features.len());
                }
                if *label >= self.config.output_width() {
                    bail!(Sample, "label {} outside {} classes", label, self.config.output_width());
                }
                if features.iter().any(|v| !v.is_finite()) {
                    bail!(Sample, "non-finite feature value");
                }
            }
            (ModelFamily::TinyTransformer, Sample::Sequence { prompt, completion }) => {
                if prompt.is_empty() || completion.is_empty() {
                    bail!(Sample, "sequence samples need a nonempty prompt and completion");
                }
                if let Some(t) = prompt.iter().chain(completion).find(|&&t| t >= self.config.vocab) {
                    bail!(Sample, "token {} outside vocabulary of {}", t, self.config.vocab);
                }
                if prompt.len() + completion.len() - 1 > self.config.max_len {
                    bail!(Sample, "sequence of {} tokens exceeds max_len {}", prompt.len() + completion.len() - 1, self.config.max_len);
                }
            }
            (ModelFamily::Mlp, _) => bail!(Sample, "mlp models take labeled feature samples"),
            (ModelFamily::TinyTransformer, _) => bail!(Sample, "transformer models take token sequences"),
        }
        Ok(())
    }

    /// Builds the forward graph of a nonempty batch.
    pub fn build_batch(&self, store: &ParameterStore, batch: &[Sample], opts: ForwardOptions<'_>) -> Result<BatchGraph> {
        if batch.is_empty() {
            bail!(EmptyDataset, "forward pass over an empty batch");
        }
        for s in batch {
            self.check_sample(s)?;
        }
        match self.config.family {
            ModelFamily::Mlp => mlp::forward(&self.config, store, batch, opts),
            ModelFamily::TinyTransformer => transformer::forward(&self.config, store, batch, opts),
        }
    }

    /// Logits of a single sample: `[1, classes]` or `[positions, vocab]`.
    pub fn logits(&self, store: &ParameterStore, sample: &Sample) -> Result<Tensor> {
        let bg = self.build_batch(store, core::slice::from_ref(sample), ForwardOptions::default())?;
        let (r, c) = bg.graph.dims(bg.logits);
        Tensor::new(alloc::vec![r, c], bg.graph.value(bg.logits).to_vec())
    }

    /// Logits for a raw token sequence, `[len, vocab]` (transformer only).
    pub fn token_logits(&self, store: &ParameterStore, tokens: &[usize]) -> Result<Tensor> {
        if self.config.family != ModelFamily::TinyTransformer {
            bail!(Config, "token logits need a transformer model");
        }
        let mut g = Graph::new();
        let mut traces = Vec::new();
        let z = transformer::sequence_logits(&self.config, store, &mut g, tokens, &mut traces, &mut ForwardOptions::default())?;
        let (r, c) = g.dims(z);
        Tensor::new(alloc::vec![r, c], g.value(z).to_vec())
    }

    /// Greedy decoding of `steps` tokens after `prompt`.
    pub fn generate(&self, store: &ParameterStore, prompt: &[usize], steps: usize) -> Result<Vec<usize>> {
        let mut seq = prompt.to_vec();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let z = self.token_logits(store, &seq)?;
            let (rows, cols) = z.as_matrix();
            let last = &z.data()[(rows - 1) * cols..];
            let next = argmax(last);
            out.push(next);
            seq.push(next);
        }
        Ok(out)
    }

    /// Mean cross-entropy of a batch.
    pub fn loss(&self, store: &ParameterStore, batch: &[Sample]) -> Result<f64> {
        let mut bg = self.build_batch(store, batch, ForwardOptions::default())?;
        let l = bg.cross_entropy()?;
        Ok(bg.graph.scalar(l))
    }

    /// Mean cross-entropy and gradient records.
    ///
    /// `PerSample` returns one record per sample (each from its own backward
    /// pass); `PerBatch` returns a single record for the batch mean, computed
    /// with one batched pass.
    pub fn loss_and_grad(&self, store: &ParameterStore, batch: &[Sample], granularity: Granularity) -> Result<(f64, Vec<GradientRecord>)> {
        match granularity {
            Granularity::PerBatch => {
                let (loss, grad) = self.batch_loss_and_grad(store, batch, ForwardOptions::default())?;
                Ok((loss, alloc::vec![grad]))
            }
            Granularity::PerSample => {
                if batch.is_empty() {
                    bail!(EmptyDataset, "gradient of an empty batch");
                }
                let mut total = 0.0;
                let mut records = Vec::with_capacity(batch.len());
                self.for_each_sample_grad(store, batch, |loss, rec| {
                    total += loss;
                    records.push(rec);
                    Ok(())
                })?;
                Ok((total / batch.len() as f64, records))
            }
        }
    }

    pub fn batch_loss_and_grad(&self, store: &ParameterStore, batch: &[Sample], opts: ForwardOptions<'_>) -> Result<(f64, GradientRecord)> {
        let mut bg = self.build_batch(store, batch, opts)?;
        let l = bg.cross_entropy()?;
        let loss = bg.graph.scalar(l);
        let grad = bg.graph.backward(l, store, Granularity::PerBatch)?;
        check_loss(loss, store)?;
        grad.check_finite(store, "batch gradient")?;
        Ok((loss, grad))
    }

    /// Streams per-sample `(loss, gradient)` pairs in dataset order without
    /// keeping them all in memory.
    pub fn for_each_sample_grad(&self, store: &ParameterStore, data: &[Sample], mut f: impl FnMut(f64, GradientRecord) -> Result<()>) -> Result<()> {
        for s in data {
            let mut bg = self.build_batch(store, core::slice::from_ref(s), ForwardOptions::default())?;
            let l = bg.cross_entropy()?;
            let loss = bg.graph.scalar(l);
            check_loss(loss, store)?;
            let rec = bg.graph.backward(l, store, Granularity::PerSample)?;
            rec.check_finite(store, "per-sample gradient")?;
            f(loss, rec)?;
        }
        Ok(())
    }
}

fn check_loss(loss: f64, store: &ParameterStore) -> Result<()> {
    if !loss.is_finite() {
        let entry = store.first_non_finite().map(String::from).unwrap_or_else(|| String::from("loss"));
        return Err(crate::Error::NonFinite { entry, context: alloc::format!("loss = {}", loss) });
    }
    Ok(())
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Anything with a scalar loss over a batch and its gradient.
pub trait Objective {
    fn loss(&self, store: &ParameterStore, batch: &[Sample]) -> Result<f64>;
    fn loss_and_grad(&self, store: &ParameterStore, batch: &[Sample]) -> Result<(f64, GradientRecord)>;
}

impl Objective for Model {
    fn loss(&self, store: &ParameterStore, batch: &[Sample]) -> Result<f64> {
        Model::loss(self, store, batch)
    }

    fn loss_and_grad(&self, store: &ParameterStore, batch: &[Sample]) -> Result<(f64, GradientRecord)> {
        self.batch_loss_and_grad(store, batch, ForwardOptions::default())
    }
}

/// Outcome of [`finite_difference_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// Worst `|fd - ad| / max(1, |fd|, |ad|)` over the checked parameters.
    pub max_deviation: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Parameter count above which a uniform random subset is checked.
pub const FD_FULL_CHECK_LIMIT: usize = 4096;

/// Compares autodiff gradients with central differences.
///
/// The deviation is relative for gradients larger than one and absolute
/// below, which keeps near-zero gradients from dominating through rounding.
pub fn finite_difference_check<O: Objective + ?Sized>(objective: &O, store: &ParameterStore, batch: &[Sample], eps: f64) -> Result<FdReport> {
    if !(eps > 0.0) {
        bail!(Config, "finite-difference step must be positive, got {}", eps);
    }
    let (_, grad) = objective.loss_and_grad(store, batch)?;
    let indices: Vec<usize> = if store.len() <= FD_FULL_CHECK_LIMIT {
        (0..store.len()).collect()
    } else {
        let mut r = rng::rng_for(store.len() as u64, &[rng::tag::FD_SUBSET]);
        let mut picked: Vec<usize> = (0..FD_FULL_CHECK_LIMIT).map(|_| r.random_range(0..store.len())).collect();
        picked.sort_unstable();
        picked.dedup();
        picked
    };
    let mut probe = store.clone();
    let mut report = FdReport { max_deviation: 0.0, worst_index: 0, checked: indices.len() };
    for &i in &indices {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + eps;
        let up = objective.loss(&probe, batch)?;
        probe.values_mut()[i] = orig - eps;
        let down = objective.loss(&probe, batch)?;
        probe.values_mut()[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        let ad = grad.values[i];
        let dev = (fd - ad).abs() / 1.0f64.max(fd.abs()).max(ad.abs());
        if dev > report.max_deviation {
            report.max_deviation = dev;
            report.worst_index = i;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn labeled_batch(n: usize, dim: usize, classes: usize, seed: u64) -> Vec<Sample> {
        let mut r = rng::rng_for(seed, &[99]);
        (0..n).map(|i| Sample::labeled((0..dim).map(|_| r.random_range(-1.0..1.0)).collect(), i % classes)).collect()
    }

    #[test]
    fn mlp_parameter_count_and_determinism() {
        let (_, a) = build_model(ModelConfig::mlp(&[4, 8, 3], 42)).unwrap();
        let (_, b) = build_model(ModelConfig::mlp(&[4, 8, 3], 42)).unwrap();
        assert_eq!(a.len(), 4 * 8 + 8 + 8 * 3 + 3);
        assert_eq!(a.len(), 67);
        assert_eq!(a, b);
        let bits_a: Vec<u64> = a.values().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
        let (_, c) = build_model(ModelConfig::mlp(&[4, 8, 3], 43)).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn transformer_logit_shape() {
        let (m, s) = build_model(ModelConfig::transformer(16, 8, 1, 2, 42)).unwrap();
        let z = m.token_logits(&s, &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(z.shape(), &[5, 16]);
        // teacher forcing feeds prompt ++ completion[..-1]
        let z = m.logits(&s, &Sample::sequence(vec![1, 2, 3], vec![4, 5, 6])).unwrap();
        assert_eq!(z.shape(), &[5, 16]);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(build_model(ModelConfig::mlp(&[4], 0)).is_err());
        assert!(build_model(ModelConfig::mlp(&[4, 0, 3], 0)).is_err());
        assert!(build_model(ModelConfig::transformer(16, 9, 1, 2, 0)).is_err());
        assert!(build_model(ModelConfig::transformer(1, 8, 1, 2, 0)).is_err());
    }

    #[test]
    fn bad_samples_rejected() {
        let (m, s) = build_model(ModelConfig::mlp(&[4, 8, 3], 42)).unwrap();
        assert!(m.loss(&s, &[Sample::labeled(vec![0.0; 4], 3)]).is_err());
        assert!(m.loss(&s, &[Sample::labeled(vec![0.0; 5], 0)]).is_err());
        assert!(m.loss(&s, &[Sample::sequence(vec![1], vec![2])]).is_err());
        assert!(m.loss(&s, &[]).is_err());
    }

    #[test]
    fn uniform_logits_loss_is_ln3() {
        let (m, mut s) = build_model(ModelConfig::mlp(&[4, 8, 3], 42)).unwrap();
        let head = s.entry_index("head.weight").unwrap();
        s.entry_values_mut(head).iter_mut().for_each(|v| *v = 0.0);
        let hb = s.entry_index("head.bias").unwrap();
        s.entry_values_mut(hb).iter_mut().for_each(|v| *v = 0.0);
        let loss = m.loss(&s, &[Sample::labeled(vec![0.3, -0.2, 0.9, 0.1], 1)]).unwrap();
        assert!((loss - libm::log(3.0)).abs() < 1e-15);
        assert!((loss - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn per_batch_equals_mean_of_per_sample() {
        let (m, s) = build_model(ModelConfig::mlp(&[4, 8, 3], 7).with_layer_norm(true)).unwrap();
        let batch = labeled_batch(8, 4, 3, 1);
        let (lb, b) = m.loss_and_grad(&s, &batch, Granularity::PerBatch).unwrap();
        let (ls, per) = m.loss_and_grad(&s, &batch, Granularity::PerSample).unwrap();
        assert_eq!(per.len(), 8);
        assert!((lb - ls).abs() < 1e-12);
        for i in 0..s.len() {
            let mean = per.iter().map(|r| r.values[i]).sum::<f64>() / 8.0;
            assert!((mean - b[0].values[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn transformer_per_batch_equals_mean_of_per_sample() {
        let (m, s) = build_model(ModelConfig::transformer(12, 8, 2, 2, 3)).unwrap();
        let batch = vec![Sample::sequence(vec![1, 2, 3, 11], vec![4, 5]), Sample::sequence(vec![7, 11], vec![8, 9, 10]), Sample::sequence(vec![0], vec![1])];
        let (_, b) = m.loss_and_grad(&s, &batch, Granularity::PerBatch).unwrap();
        let (_, per) = m.loss_and_grad(&s, &batch, Granularity::PerSample).unwrap();
        for i in 0..s.len() {
            let mean = per.iter().map(|r| r.values[i]).sum::<f64>() / 3.0;
            assert!((mean - b[0].values[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn forward_is_pure() {
        let (m, s) = build_model(ModelConfig::transformer(16, 8, 1, 2, 42)).unwrap();
        let a = m.token_logits(&s, &[3, 1, 4, 1, 5]).unwrap();
        let b = m.token_logits(&s, &[3, 1, 4, 1, 5]).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn mlp_finite_differences() {
        let (m, s) = build_model(ModelConfig::mlp(&[4, 8, 3], 42)).unwrap();
        let batch = labeled_batch(8, 4, 3, 2);
        let rep = finite_difference_check(&m, &s, &batch, 1e-6).unwrap();
        assert_eq!(rep.checked, 67);
        assert!(rep.max_deviation <= 1e-4, "{:?}", rep);
    }

    #[test]
    fn transformer_finite_differences() {
        let (m, s) = build_model(ModelConfig::transformer(10, 8, 1, 2, 5)).unwrap();
        let batch = vec![Sample::sequence(vec![1, 2, 9], vec![3, 4]), Sample::sequence(vec![5, 9], vec![6])];
        let rep = finite_difference_check(&m, &s, &batch, 1e-6).unwrap();
        assert!(rep.max_deviation <= 1e-4, "{:?}", rep);
    }

    #[test]
    fn zero_weights_give_zero_first_layer_gradients() {
        let (m, mut s) = build_model(ModelConfig::mlp(&[2, 4, 2], 1)).unwrap();
        s.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let batch = vec![Sample::labeled(vec![1.0, -1.0], 0), Sample::labeled(vec![-1.0, 1.0], 1)];
        let (_, g) = m.loss_and_grad(&s, &batch, Granularity::PerBatch).unwrap();
        let w0 = s.entry("layers.0.linear.weight").unwrap().range();
        let b0 = s.entry("layers.0.linear.bias").unwrap().range();
        let hw = s.entry("head.weight").unwrap().range();
        // downstream weights are zero, hidden activations are tanh(0) = 0
        assert!(g[0].values[w0].iter().all(|&v| v == 0.0));
        assert!(g[0].values[b0].iter().all(|&v| v == 0.0));
        assert!(g[0].values[hw].iter().all(|&v| v == 0.0));
        // the symmetric pair cancels the head-bias gradient exactly
        let hb = s.entry("head.bias").unwrap().range();
        assert!(g[0].values[hb].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fd_rejects_nonpositive_step() {
        let (m, s) = build_model(ModelConfig::mlp(&[2, 2], 1)).unwrap();
        let batch = vec![Sample::labeled(vec![1.0, 0.0], 0)];
        assert!(finite_difference_check(&m, &s, &batch, 0.0).is_err());
    }

    #[test]
    fn greedy_generation_is_deterministic() {
        let (m, s) = build_model(ModelConfig::transformer(8, 8, 1, 2, 11)).unwrap();
        let a = m.generate(&s, &[1, 2, 3], 4).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, m.generate(&s, &[1, 2, 3], 4).unwrap());
    }
}
