//! Top-k gradient masks and their analyses.
//!
//! A [`GradientMask`] is the strictly ascending list of the `k` parameter
//! indices that may change during one task; every other gradient entry is
//! zeroed before the optimizer sees it.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::importance::{EstimatorTag, ImportanceMap};
use crate::store::{layer_of, GradientRecord, ParameterStore, SubmoduleKind};

/// Trainable-parameter budget, `k = max(1, floor(ratio · |θ|))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsityBudget {
    pub ratio: f64,
    pub resolved_k: usize,
}

impl SparsityBudget {
    pub fn from_ratio(ratio: f64, param_count: usize) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            bail!(Config, "sparsity ratio must lie in (0, 1], got {}", ratio);
        }
        if param_count == 0 {
            bail!(Config, "sparsity budget over an empty parameter set");
        }
        // the relative nudge keeps products like 0.29 * 100 from flooring to 28
        let raw = libm::floor(ratio * param_count as f64 * (1.0 + 1e-12)) as usize;
        let k = raw.min(param_count);
        if k == 0 {
            log::warn!("ratio {} of {} parameters selects none; clamping k to 1", ratio, param_count);
        }
        Ok(Self { ratio, resolved_k: k.max(1) })
    }

    pub fn from_count(k: usize, param_count: usize) -> Result<Self> {
        if k == 0 {
            bail!(Config, "sparsity budget must select at least one parameter");
        }
        if k > param_count {
            return Err(Error::Budget { k, available: param_count });
        }
        Ok(Self { ratio: k as f64 / param_count as f64, resolved_k: k })
    }
}

/// What produced a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskSource {
    Fisher,
    SecondOrder,
    MiguMagnitude,
    LayerNorm,
    Adapter,
}

impl MaskSource {
    const ALL: [MaskSource; 5] = [Self::Fisher, Self::SecondOrder, Self::MiguMagnitude, Self::LayerNorm, Self::Adapter];

    pub fn code(self) -> u8 {
        match self {
            Self::Fisher => 0,
            Self::SecondOrder => 1,
            Self::MiguMagnitude => 2,
            Self::LayerNorm => 3,
            Self::Adapter => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Fisher => "fisher",
            Self::SecondOrder => "second-order",
            Self::MiguMagnitude => "migu-magnitude",
            Self::LayerNorm => "layer-norm",
            Self::Adapter => "adapter",
        }
    }
}

impl From<EstimatorTag> for MaskSource {
    fn from(t: EstimatorTag) -> Self {
        match t {
            EstimatorTag::Fisher => Self::Fisher,
            EstimatorTag::SecondOrder => Self::SecondOrder,
            EstimatorTag::MiguMagnitude => Self::MiguMagnitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradientMask {
    indices: Vec<usize>,
    param_count: usize,
    pub source: MaskSource,
    pub task_id: u32,
}

impl GradientMask {
    /// Validates that `indices` is nonempty, strictly ascending and in range.
    pub fn new(indices: Vec<usize>, param_count: usize, source: MaskSource, task_id: u32) -> Result<Self> {
        if indices.is_empty() {
            bail!(Config, "a mask must select at least one parameter");
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            bail!(Config, "mask indices must be strictly ascending");
        }
        if indices[indices.len() - 1] >= param_count {
            bail!(Config, "mask index {} outside {} parameters", indices[indices.len() - 1], param_count);
        }
        Ok(Self { indices, param_count, source, task_id })
    }

    /// Mask selecting every parameter.
    pub fn full(param_count: usize, source: MaskSource, task_id: u32) -> Result<Self> {
        Self::new((0..param_count).collect(), param_count, source, task_id)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    /// Serialized form: a fixed header then LEB128 index deltas (the first
    /// delta is the first index itself). Layout is documented in FORMATS.md.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(26 + self.indices.len() * 2);
        out.extend_from_slice(MASK_MAGIC);
        out.push(MASK_VERSION);
        out.push(self.source.code());
        out.extend_from_slice(&self.task_id.to_le_bytes());
        out.extend_from_slice(&(self.param_count as u64).to_le_bytes());
        out.extend_from_slice(&(self.indices.len() as u64).to_le_bytes());
        for d in delta_encode(&self.indices) {
            write_varint(&mut out, d as u64);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MASK_HEADER_LEN {
            bail!(Corrupt, "mask header truncated ({} of {} bytes)", bytes.len(), MASK_HEADER_LEN);
        }
        if &bytes[..4] != MASK_MAGIC {
            bail!(Corrupt, "not a mask file (bad magic)");
        }
        if bytes[4] != MASK_VERSION {
            bail!(Corrupt, "unsupported mask version {}", bytes[4]);
        }
        let source = MaskSource::from_code(bytes[5]).ok_or_else(|| Error::Corrupt(alloc::format!("unknown mask source {}", bytes[5])))?;
        let task_id = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
        let param_count = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
        let k = u64::from_le_bytes(bytes[18..26].try_into().unwrap()) as usize;
        if k == 0 || k > param_count {
            bail!(Corrupt, "mask header claims k = {} of {} parameters", k, param_count);
        }
        let mut pos = MASK_HEADER_LEN;
        let mut deltas = Vec::with_capacity(k.min(bytes.len()));
        for i in 0..k {
            let (d, used) = read_varint(&bytes[pos..]).ok_or_else(|| Error::Corrupt(alloc::format!("mask payload truncated at index {} of {}", i, k)))?;
            deltas.push(d as usize);
            pos += used;
        }
        if pos != bytes.len() {
            bail!(Corrupt, "{} trailing bytes after mask payload", bytes.len() - pos);
        }
        let indices = delta_decode(&deltas).ok_or_else(|| Error::Corrupt("mask deltas are not strictly ascending".into()))?;
        if indices[k - 1] >= param_count {
            bail!(Corrupt, "mask index {} out of range for {} parameters", indices[k - 1], param_count);
        }
        Self::new(indices, param_count, source, task_id)
    }
}

const MASK_MAGIC: &[u8; 4] = b"SCLM";
const MASK_VERSION: u8 = 1;
const MASK_HEADER_LEN: usize = 26;

pub fn delta_encode(indices: &[usize]) -> Vec<usize> {
    let mut prev = 0;
    indices
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let d = if i == 0 { x } else { x - prev };
            prev = x;
            d
        })
        .collect()
}

/// Inverse of [`delta_encode`]; `None` if a non-first delta is zero.
pub fn delta_decode(deltas: &[usize]) -> Option<Vec<usize>> {
    let mut out = Vec::with_capacity(deltas.len());
    let mut acc = 0usize;
    for (i, &d) in deltas.iter().enumerate() {
        if i > 0 && d == 0 {
            return None;
        }
        acc = acc.checked_add(d)?;
        out.push(acc);
    }
    Some(out)
}

fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

fn read_varint(bytes: &[u8]) -> Option<(u64, usize)> {
    let mut v = 0u64;
    for (i, &b) in bytes.iter().enumerate().take(10) {
        v |= ((b & 0x7f) as u64) << (7 * i);
        if b & 0x80 == 0 {
            return Some((v, i + 1));
        }
    }
    None
}

/// Which entries may be selected. Embeddings and the output head are
/// eligible unless excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskScope {
    #[serde(default)]
    pub exclude_embeddings: bool,
    #[serde(default)]
    pub exclude_head: bool,
}

impl MaskScope {
    /// Eligible flat indices, or `None` when everything is eligible.
    pub fn candidates(&self, store: &ParameterStore) -> Option<Vec<usize>> {
        if !self.exclude_embeddings && !self.exclude_head {
            return None;
        }
        let mut out = Vec::new();
        for e in store.entries() {
            let kind = SubmoduleKind::classify(&e.name);
            if (self.exclude_embeddings && kind == SubmoduleKind::Embedding) || (self.exclude_head && kind == SubmoduleKind::Head) {
                continue;
            }
            out.extend(e.range());
        }
        Some(out)
    }
}

/// Descending score, then ascending index.
fn rank_order(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// The `k` highest-scoring parameters, ties going to the lower index.
pub fn select_topk(importance: &ImportanceMap, budget: SparsityBudget, task_id: u32) -> Result<GradientMask> {
    select_topk_among(importance, budget, task_id, None)
}

/// [`select_topk`] restricted to `candidates` (ascending flat indices).
///
/// Runs a linear-time selection followed by a sort of the `k` winners only.
pub fn select_topk_among(importance: &ImportanceMap, budget: SparsityBudget, task_id: u32, candidates: Option<&[usize]>) -> Result<GradientMask> {
    let n = importance.len();
    let k = budget.resolved_k;
    if k > n {
        return Err(Error::Budget { k, available: n });
    }
    if let Some(i) = importance.scores.iter().position(|s| !s.is_finite()) {
        bail!(Config, "importance score at index {} is not finite", i);
    }
    let mut pool: Vec<usize> = match candidates {
        Some(c) => c.to_vec(),
        None => (0..n).collect(),
    };
    if k > pool.len() {
        return Err(Error::Budget { k, available: pool.len() });
    }
    let order = rank_order(&importance.scores);
    if k < pool.len() {
        pool.select_nth_unstable_by(k - 1, &order);
        pool.truncate(k);
    }
    pool.sort_unstable();
    GradientMask::new(pool, n, importance.estimator.into(), task_id)
}

/// Zeroes every gradient entry outside the mask.
pub fn apply_mask(grad: &GradientRecord, mask: &GradientMask) -> Result<GradientRecord> {
    if grad.len() != mask.param_count() {
        bail!(Shape, "gradient of {} values against a mask over {}", grad.len(), mask.param_count());
    }
    let mut out = GradientRecord::zeros(grad.len(), grad.granularity);
    for &i in mask.indices() {
        out.values[i] = grad.values[i];
    }
    Ok(out)
}

/// `|a ∩ b| / k` for two equal-budget masks over the same parameters.
pub fn mask_overlap(a: &GradientMask, b: &GradientMask) -> Result<f64> {
    if a.param_count() != b.param_count() {
        bail!(Shape, "masks over {} and {} parameters", a.param_count(), b.param_count());
    }
    if a.k() != b.k() {
        bail!(Config, "overlap needs equal budgets, got k = {} and {}", a.k(), b.k());
    }
    Ok(intersection_size(a.indices(), b.indices()) as f64 / a.k() as f64)
}

pub fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutBucket {
    /// `None` for entries outside the layer stack (embeddings, final norm,
    /// head).
    pub layer: Option<usize>,
    pub kind: SubmoduleKind,
    pub count: usize,
    /// Parameters in the bucket.
    pub size: usize,
    /// `count / size`.
    pub fraction: f64,
}

/// Selected-parameter counts per `(layer, submodule)` bucket, in store order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskLayout {
    pub buckets: Vec<LayoutBucket>,
}

impl MaskLayout {
    pub fn total(&self) -> usize {
        self.buckets.iter().map(|b| b.count).sum()
    }
}

pub fn mask_layout(mask: &GradientMask, store: &ParameterStore) -> Result<MaskLayout> {
    if mask.param_count() != store.len() {
        bail!(Shape, "mask over {} parameters for a store of {}", mask.param_count(), store.len());
    }
    let mut buckets: Vec<LayoutBucket> = Vec::new();
    let mut entry_bucket = vec![0usize; store.entries().len()];
    for (ei, e) in store.entries().iter().enumerate() {
        let (layer, kind) = (layer_of(&e.name), SubmoduleKind::classify(&e.name));
        let slot = match buckets.iter().position(|b| b.layer == layer && b.kind == kind) {
            Some(p) => p,
            None => {
                buckets.push(LayoutBucket { layer, kind, count: 0, size: 0, fraction: 0.0 });
                buckets.len() - 1
            }
        };
        buckets[slot].size += e.len();
        entry_bucket[ei] = slot;
    }
    for &i in mask.indices() {
        let (e, _) = store.locate(i).ok_or_else(|| Error::Shape(alloc::format!("index {} outside store", i)))?;
        buckets[entry_bucket[e]].count += 1;
    }
    for b in &mut buckets {
        b.fraction = b.count as f64 / b.size as f64;
    }
    Ok(MaskLayout { buckets })
}
