use alloc::format;
use alloc::vec::Vec;

use super::lora::linear;
use super::{uniform_tensor, BatchGraph, ForwardOptions, ModelConfig, Sample};
use crate::autodiff::{Graph, Target};
use crate::error::Result;
use crate::rng::ChaCha8Rng;
use crate::store::ParameterStore;
use crate::tensor::Tensor;

pub(super) fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ParameterStore> {
    let mut store = ParameterStore::new();
    let sizes = &config.sizes;
    let last = sizes.len() - 2;
    for (l, w) in sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        let prefix = if l == last { "head".into() } else { format!("layers.{}.linear", l) };
        store.push(format!("{}.weight", prefix), uniform_tensor(alloc::vec![fan_out, fan_in], bound, rng)?)?;
        store.push(format!("{}.bias", prefix), uniform_tensor(alloc::vec![fan_out], bound, rng)?)?;
        if l != last && config.layer_norm {
            store.push(format!("layers.{}.norm.weight", l), Tensor::new(alloc::vec![fan_out], alloc::vec![1.0; fan_out])?)?;
            store.push(format!("layers.{}.norm.bias", l), Tensor::zeros(alloc::vec![fan_out])?)?;
        }
    }
    Ok(store)
}

pub(super) fn forward(config: &ModelConfig, store: &ParameterStore, batch: &[Sample], mut opts: ForwardOptions<'_>) -> Result<BatchGraph> {
    let n = batch.len();
    let input_dim = config.sizes[0];
    let mut features = Vec::with_capacity(n * input_dim);
    let mut targets = Vec::with_capacity(n);
    for (row, s) in batch.iter().enumerate() {
        if let Sample::Labeled { features: f, label } = s {
            features.extend_from_slice(f);
            targets.push(Target { row, class: *label, weight: 1.0 / n as f64 });
        }
    }
    let mut graph = Graph::new();
    let mut traces = Vec::new();
    let mut h = graph.input(features, n, input_dim)?;
    let hidden = config.sizes.len() - 2;
    for l in 0..hidden {
        let prefix = format!("layers.{}", l);
        h = linear(&mut graph, store, h, &format!("{}.linear.weight", prefix), Some(&format!("{}.linear.bias", prefix)), &mut traces, &mut opts)?;
        h = graph.tanh(h);
        if config.layer_norm {
            let gamma = graph.param(store, store.index_of(&format!("{}.norm.weight", prefix))?);
            let beta = graph.param(store, store.index_of(&format!("{}.norm.bias", prefix))?);
            h = graph.layer_norm(h, gamma, beta)?;
        }
    }
    let logits = linear(&mut graph, store, h, "head.weight", Some("head.bias"), &mut traces, &mut opts)?;
    Ok(BatchGraph { graph, logits, targets, traces })
}
