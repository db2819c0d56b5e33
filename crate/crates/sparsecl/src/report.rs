//! Cross-run comparison tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};
use crate::formats::{self, RunMetrics};
use crate::runner::METRICS_FILE;

/// Every `metrics.json` under the given directories, sorted by path.
pub fn find_runs(dirs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for d in dirs {
        if !d.is_dir() {
            return Err(CliError::invalid(format!("{}: not a directory", d.display())));
        }
        for e in walkdir::WalkDir::new(d).sort_by_file_name() {
            let e = e.map_err(|e| CliError::invalid(format!("{}: {}", d.display(), e)))?;
            if e.file_type().is_file() && e.file_name() == METRICS_FILE {
                out.push(e.into_path());
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::invalid("no completed runs (metrics.json) found"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub strategy: String,
    pub ratio: Option<f64>,
    pub seeds: Vec<u64>,
    /// Seed-mean final score per task.
    pub final_scores: Vec<f64>,
    pub op_mean: f64,
    pub op_std: f64,
    pub bwt_mean: f64,
    pub bwt_std: f64,
}

/// Sample standard deviation; 0 for a single value.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn describe(m: &RunMetrics) -> String {
    let names: Vec<String> = m.tasks.iter().map(|t| format!("{}({}/{})", t.name, t.train, t.eval)).collect();
    format!("tasks [{}], digest {}", names.join(", "), m.task_digest)
}

/// Groups runs by strategy and ratio, one row per group, by descending OP.
pub fn build_rows(runs: &[(PathBuf, RunMetrics)]) -> Result<Vec<Row>> {
    let Some((first_path, first)) = runs.first() else { return Err(CliError::invalid("no runs to report")) };
    for (p, m) in &runs[1..] {
        if m.task_digest != first.task_digest || m.tasks != first.tasks {
            return Err(CliError::Invalid(vec![
                "runs use different task sequences:".into(),
                format!("- {}: {}", first_path.display(), describe(first)),
                format!("+ {}: {}", p.display(), describe(m)),
            ]));
        }
    }
    let mut groups: BTreeMap<(String, String), Vec<&RunMetrics>> = BTreeMap::new();
    for (_, m) in runs {
        let key = (m.strategy.clone(), m.ratio.map_or(String::new(), |r| r.to_string()));
        groups.entry(key).or_default().push(m);
    }
    let t = first.tasks.len();
    let mut rows: Vec<Row> = groups
        .into_values()
        .map(|ms| {
            let ops: Vec<f64> = ms.iter().map(|m| m.final_op()).collect();
            let bwts: Vec<f64> = ms.iter().map(|m| m.final_bwt()).collect();
            let (op_mean, op_std) = mean_std(&ops);
            let (bwt_mean, bwt_std) = mean_std(&bwts);
            let final_scores = (0..t).map(|i| ms.iter().map(|m| m.scores.last().map_or(f64::NAN, |r| r[i])).sum::<f64>() / ms.len() as f64).collect();
            let mut seeds: Vec<u64> = ms.iter().map(|m| m.seed).collect();
            seeds.sort_unstable();
            Row { strategy: ms[0].strategy.clone(), ratio: ms[0].ratio, seeds, final_scores, op_mean, op_std, bwt_mean, bwt_std }
        })
        .collect();
    rows.sort_by(|a, b| b.op_mean.total_cmp(&a.op_mean).then_with(|| a.strategy.cmp(&b.strategy)));
    Ok(rows)
}

pub fn header(tasks: usize) -> Vec<String> {
    let mut h = vec!["strategy".to_string(), "ratio".into(), "seeds".into()];
    h.extend((1..=tasks).map(|i| format!("task_{}", i)));
    h.extend(["op_mean", "op_std", "bwt_mean", "bwt_std"].map(String::from));
    h
}

fn cells(r: &Row, prec: Option<usize>) -> Vec<String> {
    let f = |x: f64| match prec {
        Some(p) => format!("{:.*}", p, x),
        None => x.to_string(),
    };
    let mut c = vec![r.strategy.clone(), r.ratio.map_or("-".to_string(), |x| x.to_string()), r.seeds.len().to_string()];
    c.extend(r.final_scores.iter().map(|&x| f(x)));
    c.extend([f(r.op_mean), f(r.op_std), f(r.bwt_mean), f(r.bwt_std)]);
    c
}

pub fn to_csv(rows: &[Row], tasks: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::format(Path::new("<csv>"), e.to_string());
    w.write_record(header(tasks)).map_err(err)?;
    for r in rows {
        w.write_record(cells(r, None)).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::format(Path::new("<csv>"), e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Space-aligned columns, four decimals.
pub fn to_text(rows: &[Row], tasks: usize) -> String {
    let mut table = vec![header(tasks)];
    table.extend(rows.iter().map(|r| cells(r, Some(4))));
    let widths: Vec<usize> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &table {
        let line: Vec<String> =
            r.iter().zip(&widths).enumerate().map(|(j, (c, w))| if j == 0 { format!("{:<w$}", c, w = w) } else { format!("{:>w$}", c, w = w) }).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn load_runs(dirs: &[PathBuf]) -> Result<Vec<(PathBuf, RunMetrics)>> {
    find_runs(dirs)?.into_iter().map(|p| formats::read_metrics(&p).map(|m| (p, m))).collect()
}
