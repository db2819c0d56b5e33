//! Mask layout, pairwise overlap and overlap-vs-forgetting reports.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparsecl_core::masking::{mask_layout, mask_overlap, GradientMask, MaskLayout};
use sparsecl_core::metrics::{correlate, CorrelationReport};

use crate::error::{self, CliError, Result};
use crate::formats::{self, RunMetrics};
use crate::provenance::Provenance;
use crate::runner::{checkpoint_path, METRICS_FILE};

/// Masks of a run, in task order, with the store each was applied to.
#[derive(Debug, Clone)]
pub struct MaskSet {
    pub masks: Vec<GradientMask>,
    /// Checkpoint paths for layout, one per mask, when known.
    pub checkpoints: Vec<Option<PathBuf>>,
    pub provenance: Provenance,
}

pub fn masks_of_run(run_dir: &Path) -> Result<MaskSet> {
    let dir = run_dir.join("masks");
    let mut found = Vec::new();
    let entries = std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
    for e in entries {
        let p = e.map_err(|e| CliError::io(&dir, e))?.path();
        if p.extension().is_some_and(|x| x == "mask") {
            found.push(p);
        }
    }
    let mut set = masks_from_files(&found)?;
    let mut order: Vec<usize> = (0..set.masks.len()).collect();
    order.sort_by_key(|&i| set.masks[i].task_id);
    set.masks = order.iter().map(|&i| set.masks[i].clone()).collect();
    // Mask for task t was applied to the store saved at boundary t.
    set.checkpoints = set.masks.iter().map(|m| Some(checkpoint_path(run_dir, m.task_id as usize))).collect();
    Ok(set)
}

pub fn masks_from_files(paths: &[PathBuf]) -> Result<MaskSet> {
    let mut masks = Vec::new();
    let mut provenance = None;
    for p in paths {
        let (m, prov) = formats::read_mask(p)?;
        masks.push(m);
        provenance.get_or_insert(prov);
    }
    let Some(provenance) = provenance else { return Err(CliError::invalid("no mask files found")) };
    Ok(MaskSet { checkpoints: vec![None; masks.len()], masks, provenance })
}

/// `overlap[a][b]`, or `None` where the masks have different budgets or
/// parameter counts.
pub fn overlap_matrix(masks: &[GradientMask]) -> Vec<Vec<Option<f64>>> {
    masks.iter().map(|a| masks.iter().map(|b| mask_overlap(a, b).ok()).collect()).collect()
}

pub fn overlap_csv(masks: &[GradientMask], matrix: &[Vec<Option<f64>>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["task".to_string()];
    header.extend(masks.iter().map(|m| format!("task_{}", m.task_id)));
    w.write_record(&header).map_err(csv_err)?;
    for (m, row) in masks.iter().zip(matrix) {
        let mut rec = vec![m.task_id.to_string()];
        rec.extend(row.iter().map(|v| v.map_or("NA".to_string(), |x| x.to_string())));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish_csv(w)
}

pub fn layout_csv(layout: &MaskLayout) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "kind", "count", "size", "fraction"]).map_err(csv_err)?;
    for b in &layout.buckets {
        w.write_record([
            b.layer.map_or("none".to_string(), |l| l.to_string()),
            b.kind.label().to_string(),
            b.count.to_string(),
            b.size.to_string(),
            b.fraction.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish_csv(w)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Format { path: PathBuf::from("<csv>"), message: e.to_string() }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| csv_err(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapForgettingPair {
    pub i: u32,
    pub t: u32,
    pub overlap: f64,
    pub forgetting: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOutput {
    pub provenance: Provenance,
    pub pairs: Vec<OverlapForgettingPair>,
    pub report: CorrelationReport,
}

/// Every `i < t` with comparable masks: `overlap(M_i, M_t)` against
/// `R_{i,i} − R_{t,i}`.
pub fn overlap_forgetting_pairs(masks: &[GradientMask], metrics: &RunMetrics) -> Result<Vec<OverlapForgettingPair>> {
    let scores = metrics.score_matrix().map_err(|e| CliError::runtime("metrics", e))?;
    let mut pairs = Vec::new();
    for (a, mi) in masks.iter().enumerate() {
        for mt in &masks[a + 1..] {
            let (i, t) = (mi.task_id, mt.task_id);
            let Ok(overlap) = mask_overlap(mi, mt) else { continue };
            let forgetting = scores.forgetting(i as usize, t as usize).map_err(|e| CliError::runtime("metrics", e))?;
            pairs.push(OverlapForgettingPair { i, t, overlap, forgetting });
        }
    }
    Ok(pairs)
}

/// Writes `layout-task-{t}.csv`, `overlap.csv` and, for a run directory,
/// `correlation.json` into `out`. Returns the written paths.
pub fn analyze(set: &MaskSet, run_dir: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    if set.masks.len() < 2 {
        return Err(CliError::invalid(format!("overlap needs at least 2 masks, found {}", set.masks.len())));
    }
    let mut written = Vec::new();
    for (m, ckpt) in set.masks.iter().zip(&set.checkpoints) {
        let Some(ckpt) = ckpt else { continue };
        let (c, _) = formats::read_checkpoint(ckpt)?;
        let layout = mask_layout(m, &c.store).map_err(|e| CliError::runtime(format!("layout of task {}", m.task_id), e))?;
        let p = out.join(format!("layout-task-{}.csv", m.task_id));
        error::write(&p, layout_csv(&layout)?)?;
        written.push(p);
    }
    let matrix = overlap_matrix(&set.masks);
    let p = out.join("overlap.csv");
    error::write(&p, overlap_csv(&set.masks, &matrix)?)?;
    written.push(p);

    if let Some(dir) = run_dir {
        let metrics = formats::read_metrics(&dir.join(METRICS_FILE))?;
        let pairs = overlap_forgetting_pairs(&set.masks, &metrics)?;
        if pairs.len() < 2 {
            return Err(CliError::invalid(format!("correlation needs at least 2 comparable mask pairs, found {}", pairs.len())));
        }
        let xs: Vec<f64> = pairs.iter().map(|p| p.overlap).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.forgetting).collect();
        let report = correlate(&xs, &ys).map_err(|e| CliError::runtime("correlation", e))?;
        let outp = CorrelationOutput { provenance: metrics.provenance.clone(), pairs, report };
        let p = out.join("correlation.json");
        let mut text = serde_json::to_string_pretty(&outp).expect("report serializes");
        text.push('\n');
        error::write(&p, text)?;
        written.push(p);
    }
    Ok(written)
}
