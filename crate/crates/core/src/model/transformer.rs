//! Pre-norm decoder-only transformer with learned positions, causal
//! multi-head attention and a GELU feed-forward block.

use alloc::format;
use alloc::vec::Vec;

use super::lora::linear;
use super::{normal_tensor, uniform_tensor, BatchGraph, ForwardOptions, LinearTrace, ModelConfig, Sample};
use crate::autodiff::{Graph, Target, Var};
use crate::error::{bail, Result};
use crate::rng::ChaCha8Rng;
use crate::store::ParameterStore;
use crate::tensor::Tensor;

const EMBED_STD: f64 = 0.1;

fn push_norm(store: &mut ParameterStore, name: &str, d: usize) -> Result<()> {
    store.push(format!("{}.weight", name), Tensor::new(alloc::vec![d], alloc::vec![1.0; d])?)?;
    store.push(format!("{}.bias", name), Tensor::zeros(alloc::vec![d])?)?;
    Ok(())
}

pub(super) fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ParameterStore> {
    let (v, d, f) = (config.vocab, config.d_model, config.ffn_width());
    let mut store = ParameterStore::new();
    store.push("embed_tokens.weight", normal_tensor(alloc::vec![v, d], EMBED_STD, rng)?)?;
    store.push("embed_positions.weight", normal_tensor(alloc::vec![config.max_len, d], EMBED_STD, rng)?)?;
    let bd = 1.0 / libm::sqrt(d as f64);
    let bf = 1.0 / libm::sqrt(f as f64);
    for l in 0..config.layers {
        let p = format!("layers.{}", l);
        push_norm(&mut store, &format!("{}.input_layernorm", p), d)?;
        for proj in ["q_proj", "k_proj", "v_proj", "o_proj"] {
            store.push(format!("{}.self_attn.{}.weight", p, proj), uniform_tensor(alloc::vec![d, d], bd, rng)?)?;
        }
        push_norm(&mut store, &format!("{}.post_attention_layernorm", p), d)?;
        store.push(format!("{}.mlp.up_proj.weight", p), uniform_tensor(alloc::vec![f, d], bd, rng)?)?;
        store.push(format!("{}.mlp.down_proj.weight", p), uniform_tensor(alloc::vec![d, f], bf, rng)?)?;
    }
    push_norm(&mut store, "norm", d)?;
    store.push("lm_head.weight", uniform_tensor(alloc::vec![v, d], bd, rng)?)?;
    Ok(store)
}

fn norm(g: &mut Graph, store: &ParameterStore, x: Var, name: &str) -> Result<Var> {
    let gamma = g.param(store, store.index_of(&format!("{}.weight", name))?);
    let beta = g.param(store, store.index_of(&format!("{}.bias", name))?);
    g.layer_norm(x, gamma, beta)
}

/// Logits `[tokens.len(), vocab]` for one token sequence.
pub(super) fn sequence_logits(
    config: &ModelConfig,
    store: &ParameterStore,
    g: &mut Graph,
    tokens: &[usize],
    traces: &mut Vec<LinearTrace>,
    opts: &mut ForwardOptions<'_>,
) -> Result<Var> {
    let len = tokens.len();
    if len == 0 || len > config.max_len {
        bail!(Sample, "sequence length {} outside 1..={}", len, config.max_len);
    }
    let d = config.d_model;
    let dh = d / config.heads;
    let tok = g.param(store, store.index_of("embed_tokens.weight")?);
    let pos = g.param(store, store.index_of("embed_positions.weight")?);
    let te = g.gather(tok, tokens)?;
    let positions: Vec<usize> = (0..len).collect();
    let pe = g.gather(pos, &positions)?;
    let mut x = g.add(te, pe)?;
    let inv_sqrt = 1.0 / libm::sqrt(dh as f64);
    for l in 0..config.layers {
        let p = format!("layers.{}", l);
        let h = norm(g, store, x, &format!("{}.input_layernorm", p))?;
        let q = linear(g, store, h, &format!("{}.self_attn.q_proj.weight", p), None, traces, opts)?;
        let k = linear(g, store, h, &format!("{}.self_attn.k_proj.weight", p), None, traces, opts)?;
        let v = linear(g, store, h, &format!("{}.self_attn.v_proj.weight", p), None, traces, opts)?;
        let mut heads = Vec::with_capacity(config.heads);
        for hd in 0..config.heads {
            let qh = g.slice_cols(q, hd * dh, dh)?;
            let kh = g.slice_cols(k, hd * dh, dh)?;
            let vh = g.slice_cols(v, hd * dh, dh)?;
            let scores = g.matmul_t(qh, kh)?;
            let scores = g.scale(scores, inv_sqrt);
            let attn = g.causal_softmax(scores)?;
            heads.push(g.matmul(attn, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        let o = linear(g, store, cat, &format!("{}.self_attn.o_proj.weight", p), None, traces, opts)?;
        x = g.add(x, o)?;
        let h = norm(g, store, x, &format!("{}.post_attention_layernorm", p))?;
        let up = linear(g, store, h, &format!("{}.mlp.up_proj.weight", p), None, traces, opts)?;
        let act = g.gelu(up);
        let down = linear(g, store, act, &format!("{}.mlp.down_proj.weight", p), None, traces, opts)?;
        x = g.add(x, down)?;
    }
    let h = norm(g, store, x, "norm")?;
    linear(g, store, h, "lm_head.weight", None, traces, opts)
}

pub(super) fn forward(config: &ModelConfig, store: &ParameterStore, batch: &[Sample], mut opts: ForwardOptions<'_>) -> Result<BatchGraph> {
    let mut graph = Graph::new();
    let mut traces = Vec::new();
    let mut parts = Vec::with_capacity(batch.len());
    let mut targets = Vec::new();
    let mut row_offset = 0;
    let n = batch.len() as f64;
    for s in batch {
        let Sample::Sequence { prompt, completion } = s else {
            bail!(Sample, "transformer models take token sequences");
        };
        let mut tokens = prompt.clone();
        tokens.extend_from_slice(&completion[..completion.len() - 1]);
        let z = sequence_logits(config, store, &mut graph, &tokens, &mut traces, &mut opts)?;
        let w = 1.0 / (n * completion.len() as f64);
        for (j, &c) in completion.iter().enumerate() {
            targets.push(Target { row: row_offset + prompt.len() - 1 + j, class: c, weight: w });
        }
        row_offset += tokens.len();
        parts.push(z);
    }
    let logits = if parts.len() == 1 { parts[0] } else { graph.concat_rows(&parts)? };
    Ok(BatchGraph { graph, logits, targets, traces })
}
