//! CSV metrics. Floats are written with 9 significant digits.
//!
//! - `steps.csv`: `step,epoch,lr,train_xent`
//! - `epochs.csv`: `epoch,lr,train_xent,test_error,test_accuracy,mean_abs_norm_dev`
//!   followed by `norm_mean,norm_min,norm_max,oblique_residual` for every
//!   weight layer, prefixed `layer<k>_`
//! - `summary.csv`: one row describing the run
//! - `timing.csv`: `epoch,wall_seconds`, kept apart so the files above are
//!   byte-identical between repeated runs

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::train::TrainReport;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.8e}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

/// Writes the metrics files of `report` into `dir` and returns their paths.
pub fn emit_metrics(report: &TrainReport, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let paths: Vec<PathBuf> =
        ["steps.csv", "epochs.csv", "summary.csv", "timing.csv"].iter().map(|f| dir.join(f)).collect();

    let mut w = writer(&paths[0])?;
    w.write_record(["step", "epoch", "lr", "train_xent"])?;
    for s in &report.steps {
        w.write_record([s.step.to_string(), s.epoch.to_string(), fmt_f64(s.lr), fmt_f64(s.train_xent)])?;
    }
    w.flush().map_err(|e| HarnessError::io(&paths[0], e))?;

    let mut w = writer(&paths[1])?;
    let mut header: Vec<String> =
        ["epoch", "lr", "train_xent", "test_error", "test_accuracy", "mean_abs_norm_dev"].map(String::from).to_vec();
    if let Some(first) = report.epochs.first() {
        for l in &first.layers {
            for field in ["norm_mean", "norm_min", "norm_max", "oblique_residual"] {
                header.push(format!("layer{}_{field}", l.layer));
            }
        }
    }
    w.write_record(&header)?;
    for e in &report.epochs {
        let mut row = vec![
            e.epoch.to_string(),
            fmt_f64(e.lr),
            fmt_f64(e.train_xent),
            fmt_f64(e.test_error),
            fmt_f64(e.test_accuracy()),
            fmt_f64(e.mean_abs_norm_dev),
        ];
        for l in &e.layers {
            row.extend([l.norm_mean, l.norm_min, l.norm_max, l.oblique_residual].map(fmt_f64));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| HarnessError::io(&paths[1], e))?;

    let mut w = writer(&paths[2])?;
    w.write_record([
        "kind",
        "lambda",
        "seed",
        "batch_size",
        "params",
        "steps",
        "epochs",
        "final_test_error",
        "final_test_accuracy",
        "final_mean_abs_norm_dev",
        "diverged",
        "diverged_epoch",
        "diverged_step",
    ])?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let div = report.divergence.as_ref();
    w.write_record([
        report.kind.name().to_string(),
        fmt_f64(report.lambda),
        report.seed.to_string(),
        report.batch_size.to_string(),
        report.param_count.to_string(),
        report.steps.len().to_string(),
        report.epochs.len().to_string(),
        opt(report.final_test_error()),
        opt(report.final_test_error().map(|e| 100.0 - e)),
        opt(report.final_mean_norm_deviation()),
        div.is_some().to_string(),
        div.map(|d| d.epoch.to_string()).unwrap_or_default(),
        div.map(|d| d.step.to_string()).unwrap_or_default(),
    ])?;
    w.flush().map_err(|e| HarnessError::io(&paths[2], e))?;

    let mut w = writer(&paths[3])?;
    w.write_record(["epoch", "wall_seconds"])?;
    for e in &report.epochs {
        w.write_record([e.epoch.to_string(), fmt_f64(e.wall_seconds)])?;
    }
    w.flush().map_err(|e| HarnessError::io(&paths[3], e))?;
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: u64,
    pub epoch: u32,
    pub lr: f64,
    pub train_xent: f64,
}

pub fn read_steps(path: &Path) -> Result<Vec<StepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let parse = |s: &str| -> Result<f64> {
        s.parse().map_err(|_| HarnessError::Config(format!("{}: bad number '{s}'", path.display())))
    };
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(StepRow {
                step: parse(&rec[0])? as u64,
                epoch: parse(&rec[1])? as u32,
                lr: parse(&rec[2])?,
                train_xent: parse(&rec[3])?,
            })
        })
        .collect()
}
