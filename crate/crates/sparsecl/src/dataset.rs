//! Task datasets as JSONL: one sample per line, tagged with its split.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sparsecl_core::model::Sample;
use sparsecl_core::tasks::{MetricKind, TaskSpec};

use crate::error::{self, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Eval,
}

/// Splits to export or read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum SplitSelection {
    Train,
    Eval,
    #[default]
    All,
}

impl SplitSelection {
    fn includes(self, s: Split) -> bool {
        matches!((self, s), (Self::All, _) | (Self::Train, Split::Train) | (Self::Eval, Split::Eval))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    completion: Option<Vec<usize>>,
}

impl Record {
    fn new(split: Split, s: &Sample) -> Self {
        let mut r = Record { split, features: None, label: None, prompt: None, completion: None };
        match s {
            Sample::Labeled { features, label } => {
                r.features = Some(features.clone());
                r.label = Some(*label);
            }
            Sample::Sequence { prompt, completion } => {
                r.prompt = Some(prompt.clone());
                r.completion = Some(completion.clone());
            }
        }
        r
    }

    fn into_sample(self) -> std::result::Result<(Split, Sample), String> {
        match (self.features, self.label, self.prompt, self.completion) {
            (Some(features), Some(label), None, None) => {
                if let Some(j) = features.iter().position(|f| !f.is_finite()) {
                    return Err(format!("feature {} is not finite", j));
                }
                Ok((self.split, Sample::Labeled { features, label }))
            }
            (None, None, Some(prompt), Some(completion)) => {
                if prompt.is_empty() || completion.is_empty() {
                    return Err("prompt and completion must be nonempty".into());
                }
                Ok((self.split, Sample::Sequence { prompt, completion }))
            }
            _ => Err("expected either `features` + `label` or `prompt` + `completion`".into()),
        }
    }
}

/// Train records first, then eval, each in stored order.
pub fn encode_task(task: &TaskSpec, which: SplitSelection) -> String {
    let mut out = String::new();
    for (split, samples) in [(Split::Train, &task.train), (Split::Eval, &task.eval)] {
        if !which.includes(split) {
            continue;
        }
        for s in samples {
            out.push_str(&serde_json::to_string(&Record::new(split, s)).expect("sample serializes"));
            out.push('\n');
        }
    }
    out
}

/// Samples per split, with 1-based line numbers in every error.
pub fn decode_samples(text: &str) -> std::result::Result<(Vec<Sample>, Vec<Sample>), String> {
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| format!("line {}: {}", i + 1, e))?;
        let (split, s) = rec.into_sample().map_err(|e| format!("line {}: {}", i + 1, e))?;
        match split {
            Split::Train => train.push(s),
            Split::Eval => eval.push(s),
        }
    }
    Ok((train, eval))
}

/// Reads a whole task; the metric defaults from the sample kind.
pub fn read_task(path: &Path, task_id: u32, name: Option<String>, metric: Option<MetricKind>) -> Result<TaskSpec> {
    let bytes = error::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::invalid(format!("{}: not utf-8", path.display())))?;
    let (train, eval) = decode_samples(&text).map_err(|e| CliError::invalid(format!("{}: {}", path.display(), e)))?;
    let metric = metric.unwrap_or(match train.first().or(eval.first()) {
        Some(Sample::Sequence { .. }) => MetricKind::TextOverlap,
        _ => MetricKind::Accuracy,
    });
    let name = name.unwrap_or_else(|| path.file_stem().map_or("task".into(), |s| s.to_string_lossy().into_owned()));
    TaskSpec::new(task_id, name, metric, train, eval).map_err(|e| CliError::invalid(format!("{}: {}", path.display(), e)))
}

/// Reads samples from one split only; an empty selection is an error.
pub fn read_samples(path: &Path, which: SplitSelection) -> Result<Vec<Sample>> {
    let bytes = error::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::invalid(format!("{}: not utf-8", path.display())))?;
    let (train, eval) = decode_samples(&text).map_err(|e| CliError::invalid(format!("{}: {}", path.display(), e)))?;
    let out: Vec<Sample> = match which {
        SplitSelection::Train => train,
        SplitSelection::Eval => eval,
        SplitSelection::All => train.into_iter().chain(eval).collect(),
    };
    if out.is_empty() {
        return Err(CliError::invalid(format!("{}: no samples in the selected split", path.display())));
    }
    Ok(out)
}
