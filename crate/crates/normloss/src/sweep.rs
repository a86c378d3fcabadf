use std::path::Path;

use normloss_core::RegKind;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{create_dir, emit_metrics, fmt_f64};
use crate::train::{report_or_diverged, train};

/// Regularizers compared by the sweeps.
pub const SWEEP_KINDS: [RegKind; 2] = [RegKind::WeightDecay, RegKind::NormLoss];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub kind: RegKind,
    /// The swept value: a regularization factor or a batch size.
    pub value: f64,
    /// `None` for diverged runs.
    pub final_test_error: Option<f64>,
    pub mean_abs_norm_dev: Option<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    /// Column name of the swept value.
    pub parameter: &'static str,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn rows_for(&self, kind: RegKind) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }

    /// `max - min` final test error over the non-diverged runs of `kind`;
    /// `None` with fewer than two such runs.
    pub fn spread(&self, kind: RegKind) -> Option<f64> {
        let errs: Vec<f64> = self.rows_for(kind).filter_map(|r| r.final_test_error).collect();
        if errs.len() < 2 {
            return None;
        }
        let max = errs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = errs.iter().copied().fold(f64::INFINITY, f64::min);
        Some(max - min)
    }

    /// Writes `sweep.csv` (one row per run) and `spread.csv` (one row per kind).
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
        w.write_record([
            "kind",
            self.parameter,
            "final_test_error",
            "final_test_accuracy",
            "mean_abs_norm_dev",
            "diverged",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.kind.name().to_string(),
                fmt_f64(r.value),
                opt(r.final_test_error),
                opt(r.final_test_error.map(|e| 100.0 - e)),
                opt(r.mean_abs_norm_dev),
                r.diverged.to_string(),
            ])?;
        }
        w.flush().map_err(|e| HarnessError::io(dir.join("sweep.csv"), e))?;
        let mut w = csv::Writer::from_path(dir.join("spread.csv"))?;
        w.write_record(["kind", "runs", "test_error_spread"])?;
        for kind in SWEEP_KINDS {
            w.write_record([kind.name().to_string(), self.rows_for(kind).count().to_string(), opt(self.spread(kind))])?;
        }
        w.flush().map_err(|e| HarnessError::io(dir.join("spread.csv"), e))?;
        Ok(())
    }
}

fn run_one(cfg: &ExperimentConfig, value: f64, threads: usize, out: Option<&Path>, tag: &str) -> Result<SweepRow> {
    let report = report_or_diverged(train(cfg, threads))?;
    if let Some(dir) = out {
        emit_metrics(&report, &dir.join(format!("{}_{tag}", cfg.regularizer.kind.name())))?;
    }
    let diverged = report.divergence.is_some();
    Ok(SweepRow {
        kind: cfg.regularizer.kind,
        value,
        final_test_error: if diverged { None } else { report.final_test_error() },
        mean_abs_norm_dev: if diverged { None } else { report.final_mean_norm_deviation() },
        diverged,
    })
}

/// One run per (kind, factor) with the base config's seed.
pub fn sweep_lambda(base: &ExperimentConfig, values: &[f64], threads: usize, out: Option<&Path>) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(HarnessError::Config("sweep-lambda needs at least one value".into()));
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(HarnessError::Config(format!("regularization factor {v} must be finite and non-negative")));
    }
    let mut rows = Vec::new();
    for kind in SWEEP_KINDS {
        for &lambda in values {
            let mut cfg = base.clone();
            cfg.regularizer.kind = kind;
            cfg.regularizer.lambda = lambda;
            rows.push(run_one(&cfg, lambda, threads, out, &format!("lambda_{lambda:e}"))?);
        }
    }
    let table = SweepTable { parameter: "lambda", rows };
    if let Some(dir) = out {
        table.write_csv(dir)?;
    }
    Ok(table)
}

/// One run per (kind, batch size) with the base config's factor and seed.
/// Every size is checked before any run starts.
pub fn sweep_batch_size(
    base: &ExperimentConfig,
    sizes: &[usize],
    threads: usize,
    out: Option<&Path>,
) -> Result<SweepTable> {
    if sizes.is_empty() {
        return Err(HarnessError::Config("sweep-batch needs at least one size".into()));
    }
    let configs = SWEEP_KINDS
        .iter()
        .flat_map(|&kind| sizes.iter().map(move |&b| (kind, b)))
        .map(|(kind, b)| {
            let mut cfg = base.clone();
            cfg.regularizer.kind = kind;
            cfg.batch_size = b;
            cfg.validate().map(|()| cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for cfg in &configs {
        rows.push(run_one(cfg, cfg.batch_size as f64, threads, out, &format!("batch_{}", cfg.batch_size))?);
    }
    let table = SweepTable { parameter: "batch_size", rows };
    if let Some(dir) = out {
        table.write_csv(dir)?;
    }
    Ok(table)
}
