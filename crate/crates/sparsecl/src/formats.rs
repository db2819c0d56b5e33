//! On-disk artifacts. Layouts are described in `FORMATS.md`.
//!
//! Binary files share an envelope: magic `SCLF`, version byte, kind byte,
//! length-prefixed provenance JSON, then a kind-specific payload. Integers
//! and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sparsecl_core::continual::{AccessEvent, Event};
use sparsecl_core::importance::{EstimatorTag, ImportanceMap};
use sparsecl_core::masking::GradientMask;
use sparsecl_core::metrics::{BwtNorm, ScoreMatrix};
use sparsecl_core::model::ModelConfig;
use sparsecl_core::store::LoraAdapter;
use sparsecl_core::tasks::MetricKind;
use sparsecl_core::ParameterStore;

use crate::error::{self, CliError, Result};
use crate::provenance::Provenance;

pub const MAGIC: &[u8; 4] = b"SCLF";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FileKind {
    Checkpoint = 1,
    Importance = 2,
    Mask = 3,
}

impl FileKind {
    fn name(self) -> &'static str {
        match self {
            Self::Checkpoint => "checkpoint",
            Self::Importance => "importance",
            Self::Mask => "mask",
        }
    }
}

/// Decoding failure inside a byte buffer; callers attach the path.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct DecodeError(pub String);

type Decoded<T> = std::result::Result<T, DecodeError>;

fn bad<T>(msg: impl Into<String>) -> Decoded<T> {
    Err(DecodeError(msg.into()))
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
    fn json<T: Serialize>(&mut self, v: &T) {
        self.bytes(&serde_json::to_vec(v).expect("artifact metadata serializes"));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Decoded<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return bad(format!("truncated at byte {} (need {} more)", self.pos, n));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Decoded<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Decoded<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Decoded<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Decoded<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Decoded<usize> {
        usize::try_from(self.u64()?).or_else(|_| bad("length overflows usize"))
    }
    fn bytes(&mut self) -> Decoded<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn json<T: for<'de> Deserialize<'de>>(&mut self, what: &str) -> Decoded<T> {
        let b = self.bytes()?;
        serde_json::from_slice(b).or_else(|e| bad(format!("bad {} json: {}", what, e)))
    }
    fn f64s(&mut self, n: usize) -> Decoded<Vec<f64>> {
        if n > (self.buf.len() - self.pos) / 8 {
            return bad(format!("truncated: {} floats declared at byte {}", n, self.pos));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }
    fn finish(&self) -> Decoded<()> {
        if self.pos != self.buf.len() {
            return bad(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

fn envelope(kind: FileKind, prov: &Provenance) -> Writer {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.u8(FORMAT_VERSION);
    w.u8(kind as u8);
    w.json(prov);
    w
}

fn open_envelope(bytes: &[u8], kind: FileKind) -> Decoded<(Provenance, Reader<'_>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return bad("not a sparsecl file (bad magic)");
    }
    let v = r.u8()?;
    if v != FORMAT_VERSION {
        return bad(format!("unsupported format version {}", v));
    }
    let k = r.u8()?;
    if k != kind as u8 {
        return bad(format!("expected a {} file, found kind {}", kind.name(), k));
    }
    let prov = r.json("provenance")?;
    Ok((prov, r))
}

/// A model's configuration and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub store: ParameterStore,
}

pub fn encode_checkpoint(ckpt: &Checkpoint, prov: &Provenance) -> Vec<u8> {
    let mut w = envelope(FileKind::Checkpoint, prov);
    w.json(&ckpt.config);
    let entries = ckpt.store.entries();
    w.u32(entries.len() as u32);
    for e in entries {
        w.bytes(e.name.as_bytes());
        w.u32(e.shape.len() as u32);
        for &d in &e.shape {
            w.u64(d as u64);
        }
        for &v in ckpt.store.entry_values(ckpt.store.entry_index(&e.name).unwrap()) {
            w.f64(v);
        }
    }
    w.json(&ckpt.store.adapters());
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Decoded<(Checkpoint, Provenance)> {
    let (prov, mut r) = open_envelope(bytes, FileKind::Checkpoint)?;
    let config: ModelConfig = r.json("model config")?;
    let n = r.u32()? as usize;
    let mut entries = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let name = String::from_utf8(r.bytes()?.to_vec()).or_else(|_| bad("entry name is not utf-8"))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.len()).collect::<Decoded<Vec<usize>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let Some(count) = count else { return bad(format!("entry `{}` shape overflows", name)) };
        let values = r.f64s(count)?;
        entries.push((name, shape, values));
    }
    let adapters: Vec<LoraAdapter> = r.json("adapters")?;
    r.finish()?;
    let store = ParameterStore::from_parts(entries, adapters).or_else(|e| bad(e.to_string()))?;
    Ok((Checkpoint { config, store }, prov))
}

pub fn encode_importance(map: &ImportanceMap, prov: &Provenance) -> Vec<u8> {
    let mut w = envelope(FileKind::Importance, prov);
    w.u8(map.estimator.code());
    w.f64(map.xi);
    w.u64(map.sample_count as u64);
    w.u64(map.scores.len() as u64);
    for &s in &map.scores {
        w.f64(s);
    }
    w.0
}

pub fn decode_importance(bytes: &[u8]) -> Decoded<(ImportanceMap, Provenance)> {
    let (prov, mut r) = open_envelope(bytes, FileKind::Importance)?;
    let code = r.u8()?;
    let Some(estimator) = EstimatorTag::from_code(code) else { return bad(format!("unknown estimator code {}", code)) };
    let xi = r.f64()?;
    let sample_count = r.len()?;
    let n = r.len()?;
    let scores = r.f64s(n)?;
    r.finish()?;
    let map = ImportanceMap { scores, estimator, sample_count, xi };
    map.validate().or_else(|e| bad(e.to_string()))?;
    Ok((map, prov))
}

/// The payload is [`GradientMask::to_bytes`].
pub fn encode_mask(mask: &GradientMask, prov: &Provenance) -> Vec<u8> {
    let mut w = envelope(FileKind::Mask, prov);
    w.0.extend_from_slice(&mask.to_bytes());
    w.0
}

pub fn decode_mask(bytes: &[u8]) -> Decoded<(GradientMask, Provenance)> {
    let (prov, mut r) = open_envelope(bytes, FileKind::Mask)?;
    let mask = GradientMask::from_bytes(r.rest()).or_else(|e| bad(e.to_string()))?;
    Ok((mask, prov))
}

fn read_with<T>(path: &Path, decode: impl Fn(&[u8]) -> Decoded<T>) -> Result<T> {
    let bytes = error::read(path)?;
    decode(&bytes).map_err(|e| CliError::format(path, e.0))
}

pub fn read_checkpoint(path: &Path) -> Result<(Checkpoint, Provenance)> {
    read_with(path, decode_checkpoint)
}

pub fn read_importance(path: &Path) -> Result<(ImportanceMap, Provenance)> {
    read_with(path, decode_importance)
}

pub fn read_mask(path: &Path) -> Result<(GradientMask, Provenance)> {
    read_with(path, decode_mask)
}

/// One JSON object per line.
pub fn encode_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn decode_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Decoded<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).or_else(|e| bad(format!("line {}: {}", i + 1, e)))?);
    }
    Ok(out)
}

/// First line of `events.jsonl` and `access.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonlHeader {
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum EventLine {
    Header(JsonlHeader),
    Event(Event),
}

pub fn encode_events(events: &[Event], prov: &Provenance) -> String {
    let mut out = encode_jsonl(&[JsonlHeader { provenance: prov.clone() }]);
    out.push_str(&encode_jsonl(events));
    out
}

pub fn decode_events(text: &str) -> Decoded<(Vec<Event>, Provenance)> {
    split_header(decode_jsonl::<EventLine>(text)?, |l| match l {
        EventLine::Header(h) => Ok(h),
        EventLine::Event(e) => Err(e),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum AccessLine {
    Header(JsonlHeader),
    Access(AccessEvent),
}

pub fn encode_access(events: &[AccessEvent], prov: &Provenance) -> String {
    let mut out = encode_jsonl(&[JsonlHeader { provenance: prov.clone() }]);
    out.push_str(&encode_jsonl(events));
    out
}

pub fn decode_access(text: &str) -> Decoded<(Vec<AccessEvent>, Provenance)> {
    split_header(decode_jsonl::<AccessLine>(text)?, |l| match l {
        AccessLine::Header(h) => Ok(h),
        AccessLine::Access(e) => Err(e),
    })
}

fn split_header<L, T>(lines: Vec<L>, split: impl Fn(L) -> std::result::Result<JsonlHeader, T>) -> Decoded<(Vec<T>, Provenance)> {
    let mut it = lines.into_iter();
    let Some(Ok(header)) = it.next().map(&split) else { return bad("line 1: missing provenance header") };
    let mut out = Vec::new();
    for (i, l) in it.enumerate() {
        match split(l) {
            Err(item) => out.push(item),
            Ok(_) => return bad(format!("line {}: unexpected second header", i + 2)),
        }
    }
    Ok((out, header.provenance))
}

/// Identity of a task in a run, used to check runs are comparable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskInfo {
    pub task_id: u32,
    pub name: String,
    pub metric: MetricKind,
    pub train: usize,
    pub eval: usize,
}

/// `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetrics {
    pub provenance: Provenance,
    pub strategy: String,
    pub hyperparameters: BTreeMap<String, f64>,
    pub seed: u64,
    pub ratio: Option<f64>,
    pub tasks: Vec<TaskInfo>,
    /// SHA-256 over every task's samples.
    pub task_digest: String,
    /// `scores[t-1][i-1]` is `R_{t,i}`.
    pub scores: Vec<Vec<f64>>,
    pub op: Vec<f64>,
    pub bwt: Vec<f64>,
    pub bwt_norm: BwtNorm,
    pub ap: Vec<f64>,
    /// `R_{i,i} − R_{T,i}` for every task but the last.
    pub final_forgetting: Vec<f64>,
    /// Trainable parameter count per task.
    pub trainable: Vec<usize>,
}

impl RunMetrics {
    pub fn score_matrix(&self) -> sparsecl_core::Result<ScoreMatrix> {
        ScoreMatrix::from_rows(self.scores.clone())
    }

    pub fn final_op(&self) -> f64 {
        self.op.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_bwt(&self) -> f64 {
        self.bwt.last().copied().unwrap_or(f64::NAN)
    }
}

pub fn encode_metrics(m: &RunMetrics) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("metrics serialize");
    s.push('\n');
    s
}

pub fn read_metrics(path: &Path) -> Result<RunMetrics> {
    let bytes = error::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sparsecl_core::masking::MaskSource;
    use sparsecl_core::model::{attach_lora, build_model, LoraConfig};

    fn prov() -> Provenance {
        Provenance::for_run("ab", 42, Some(0.01))
    }

    #[test]
    fn checkpoint_round_trip_with_adapters() {
        let cfg = ModelConfig::mlp(&[4, 8, 8, 3], 3).with_layer_norm(true);
        let (_, mut store) = build_model(cfg.clone()).unwrap();
        attach_lora(&mut store, &LoraConfig { rank: 2, ..LoraConfig::default() }, "x", 1).unwrap();
        let ckpt = Checkpoint { config: cfg, store };
        let bytes = encode_checkpoint(&ckpt, &prov());
        let (back, p) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(p, prov());
        assert_eq!(encode_checkpoint(&back, &p), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let (_, store) = build_model(ModelConfig::mlp(&[2, 2], 1)).unwrap();
        let ckpt = Checkpoint { config: ModelConfig::mlp(&[2, 2], 1), store };
        let bytes = encode_checkpoint(&ckpt, &prov());
        for cut in [0, 3, 5, 20, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut {}", cut);
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        let mut wrong_kind = bytes.clone();
        wrong_kind[5] = FileKind::Mask as u8;
        assert!(decode_checkpoint(&wrong_kind).is_err());
        assert!(decode_mask(&bytes).is_err());
    }

    #[test]
    fn importance_and_mask_round_trip() {
        let map = ImportanceMap { scores: vec![0.5, 0.0, 0.25], estimator: EstimatorTag::SecondOrder, sample_count: 7, xi: 1e-8 };
        let (back, _) = decode_importance(&encode_importance(&map, &prov())).unwrap();
        assert_eq!(back, map);
        let bad_map = ImportanceMap { scores: vec![1.5], ..map };
        assert!(decode_importance(&encode_importance(&bad_map, &prov())).is_err());

        let mask = GradientMask::new(vec![1, 5, 900], 1000, MaskSource::Fisher, 2).unwrap();
        let (back, p) = decode_mask(&encode_mask(&mask, &prov())).unwrap();
        assert_eq!((back, p), (mask, prov()));
    }

    #[test]
    fn events_round_trip_and_report_line_numbers() {
        let ev = vec![
            Event::TaskStart { task: 1, trainable: 3, params: 10 },
            Event::Epoch { task: 1, epoch: 1, loss: 0.125 },
            Event::Score { task: 1, eval_task: 1, score: 0.5 },
        ];
        let text = encode_events(&ev, &prov());
        assert_eq!(decode_events(&text).unwrap(), (ev, prov()));
        let broken = text.replace("\"epoch\":1", "\"epoch\":\"x\"");
        assert!(decode_events(&broken).unwrap_err().0.starts_with("line 3"));
        assert!(decode_events("").is_err());
    }

    #[test]
    fn metrics_round_trip_exactly() {
        let m = RunMetrics {
            provenance: prov(),
            strategy: "seq-ft".into(),
            hyperparameters: BTreeMap::from([("lr".into(), 0.1 + 0.2)]),
            seed: 42,
            ratio: None,
            tasks: vec![TaskInfo { task_id: 1, name: "a".into(), metric: MetricKind::Accuracy, train: 3, eval: 2 }],
            task_digest: "00".into(),
            scores: vec![vec![1.0 / 3.0]],
            op: vec![1.0 / 3.0],
            bwt: vec![0.0],
            bwt_norm: BwtNorm::OverT,
            ap: vec![1.0 / 3.0],
            final_forgetting: vec![],
            trainable: vec![10],
        };
        let text = encode_metrics(&m);
        let back: RunMetrics = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_metrics(&back), text);
    }
}
