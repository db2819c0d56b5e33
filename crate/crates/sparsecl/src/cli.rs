use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sparsecl_core::importance::{estimate, Estimator, EstimatorTag, DEFAULT_XI};
use sparsecl_core::model::build_model;

use crate::dataset::{self, SplitSelection};
use crate::error::{self, CliError, Result};
use crate::provenance::Provenance;
use crate::{analyze, formats, manifest, report, runner};

#[derive(Debug, Parser)]
#[command(name = "sparsecl", version, about = "Sparse importance-masked continual learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every seed and ratio of a manifest.
    Run {
        manifest: PathBuf,
        /// Parallel runs.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Estimate parameter importance for a checkpoint on a dataset.
    Importance {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Task JSONL file.
        #[arg(long)]
        data: PathBuf,
        /// fisher, second-order or migu-magnitude.
        #[arg(long)]
        estimator: String,
        #[arg(long, default_value_t = DEFAULT_XI)]
        xi: f64,
        #[arg(long, value_enum, default_value_t = SplitSelection::Train)]
        split: SplitSelection,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mask layout, overlap and overlap-vs-forgetting reports.
    Analyze {
        /// A run directory (holding masks/ and metrics.json).
        run: Option<PathBuf>,
        /// Mask files to compare instead of a run.
        #[arg(long, num_args = 1.., conflicts_with = "run")]
        masks: Vec<PathBuf>,
        /// Defaults to `<run>/analysis`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare finished runs.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write report.csv and report.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one task of a manifest as JSONL.
    ExportTask {
        #[arg(long)]
        manifest: PathBuf,
        /// 1-based task position.
        #[arg(long)]
        task: usize,
        #[arg(long, value_enum, default_value_t = SplitSelection::All)]
        split: SplitSelection,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn parse_estimator(name: &str, xi: f64) -> Result<Estimator> {
    let Some(tag) = EstimatorTag::parse(name) else {
        let valid: Vec<&str> = EstimatorTag::ALL.iter().map(|t| t.name()).collect();
        return Err(CliError::invalid(format!("unknown estimator `{}` (valid: {})", name, valid.join(", "))));
    };
    Ok(match tag {
        EstimatorTag::Fisher => Estimator::Fisher,
        EstimatorTag::SecondOrder => {
            if !(xi > 0.0 && xi.is_finite()) {
                return Err(CliError::invalid(format!("xi must be positive, got {}", xi)));
            }
            Estimator::SecondOrder { xi }
        }
        EstimatorTag::MiguMagnitude => Estimator::MiguMagnitude,
    })
}

pub fn cmd_importance(checkpoint: &Path, data: &Path, estimator: &str, xi: f64, split: SplitSelection, out: &Path) -> Result<()> {
    let est = parse_estimator(estimator, xi)?;
    let ckpt_bytes = error::read(checkpoint)?;
    let (ckpt, _) = formats::decode_checkpoint(&ckpt_bytes).map_err(|e| CliError::format(checkpoint, e.0))?;
    let samples = dataset::read_samples(data, split)?;
    let (model, fresh) = build_model(ckpt.config.clone()).map_err(|e| CliError::invalid(format!("checkpoint model: {}", e)))?;
    if !fresh.same_layout(&ckpt.store) && ckpt.store.adapters().is_empty() {
        return Err(CliError::invalid("checkpoint parameters do not match its model config"));
    }
    for (i, s) in samples.iter().enumerate() {
        model.check_sample(s).map_err(|e| CliError::invalid(format!("{}: sample {} does not fit the checkpoint model: {}", data.display(), i + 1, e)))?;
    }
    let map = estimate(&model, &ckpt.store, &samples, est).map_err(|e| CliError::runtime("importance", e))?;
    let data_bytes = error::read(data)?;
    let prov = Provenance::standalone(&[&ckpt_bytes, &data_bytes]);
    error::write(out, formats::encode_importance(&map, &prov))
}

pub fn cmd_export_task(manifest_path: &Path, task: usize, split: SplitSelection, out: &Path) -> Result<()> {
    let v = manifest::load(manifest_path)?;
    let Some(t) = task.checked_sub(1).and_then(|i| v.tasks.get(i)) else {
        return Err(CliError::invalid(format!("--task {}: manifest has tasks 1..={}", task, v.tasks.len())));
    };
    error::write(out, dataset::encode_task(t, split))
}

pub fn cmd_analyze(run: Option<&Path>, masks: &[PathBuf], out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let (set, out) = match run {
        Some(r) => (analyze::masks_of_run(r)?, out.map_or_else(|| r.join("analysis"), Path::to_path_buf)),
        None => {
            if masks.is_empty() {
                return Err(CliError::invalid("give a run directory or --masks"));
            }
            let Some(out) = out else { return Err(CliError::invalid("--out is required with --masks")) };
            (analyze::masks_from_files(masks)?, out.to_path_buf())
        }
    };
    analyze::analyze(&set, run, &out)
}

pub fn cmd_report(dirs: &[PathBuf], out: Option<&Path>) -> Result<String> {
    let runs = report::load_runs(dirs)?;
    let rows = report::build_rows(&runs)?;
    let tasks = runs[0].1.tasks.len();
    let text = report::to_text(&rows, tasks);
    if let Some(out) = out {
        error::write(&out.join("report.csv"), report::to_csv(&rows, tasks)?)?;
        error::write(&out.join("report.txt"), &text)?;
    }
    Ok(text)
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { manifest, workers } => {
            let v = manifest::load(&manifest)?;
            for d in runner::execute(&v, workers)? {
                println!("{}", d.display());
            }
        }
        Command::Importance { checkpoint, data, estimator, xi, split, out } => cmd_importance(&checkpoint, &data, &estimator, xi, split, &out)?,
        Command::Analyze { run, masks, out } => {
            for p in cmd_analyze(run.as_deref(), &masks, out.as_deref())? {
                println!("{}", p.display());
            }
        }
        Command::Report { dirs, out } => print!("{}", cmd_report(&dirs, out.as_deref())?),
        Command::ExportTask { manifest, task, split, out } => cmd_export_task(&manifest, task, split, &out)?,
    }
    Ok(())
}
