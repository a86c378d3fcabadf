//! Numerical self-checks: finite-difference gradient checks and the
//! norm dynamics under repeated regularizer steps.

use std::path::Path;

use normloss_core::gradcheck::{
    check_model, check_regularizers, total_gradients, ModelCheck, RegularizerCheck, MODEL_STEP,
};
use normloss_core::nn::{Model, ModelSpec};
use normloss_core::optim::{norm_dynamics_iterate, weight_decay_dynamics_iterate};
use normloss_core::{RegularizerConfig, Rng, Tensor};

use crate::error::{HarnessError, Result};
use crate::metrics::{create_dir, fmt_f64};

pub const GRAD_CHECK_LAMBDA: f64 = 0.01;
const GRAD_CHECK_BATCH: usize = 4;

/// The model every gradient check runs on.
pub fn grad_check_spec() -> ModelSpec {
    ModelSpec::mini_resnet([3, 8, 8], 4, 10)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub regularizers: RegularizerCheck,
    pub params: usize,
    pub model: ModelCheck,
    /// Whether a zero norm-loss factor leaves every gradient bit-identical
    /// to the unregularized one.
    pub zero_lambda_exact: bool,
}

impl GradCheckReport {
    /// Worst relative error per layer, in layer order.
    pub fn per_layer(&self) -> Vec<(usize, &'static str, f64)> {
        let mut out: Vec<(usize, &'static str, f64)> = Vec::new();
        for t in &self.model.tensors {
            match out.last_mut() {
                Some(last) if last.0 == t.layer => last.2 = last.2.max(t.max_rel),
                _ => out.push((t.layer, t.layer_kind, t.max_rel)),
            }
        }
        out
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        let path = dir.join("gradcheck.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["target", "layer", "param", "len", "max_rel_error"])?;
        w.write_record([
            "norm_loss".into(),
            String::new(),
            format!("{} matrices", self.regularizers.matrices),
            String::new(),
            fmt_f64(self.regularizers.norm_loss_max_rel),
        ])?;
        w.write_record([
            "weight_decay".into(),
            String::new(),
            format!("{} matrices", self.regularizers.matrices),
            String::new(),
            fmt_f64(self.regularizers.weight_decay_max_rel),
        ])?;
        for t in &self.model.tensors {
            w.write_record([
                t.layer_kind.to_string(),
                t.layer.to_string(),
                format!("{:?}", t.param).to_lowercase(),
                t.len.to_string(),
                fmt_f64(t.max_rel),
            ])?;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
        Ok(())
    }
}

/// Checks both regularizer gradients on `matrices` random matrices and
/// every parameter of the small residual network against central
/// differences of the total loss with norm loss at factor 0.01. Runs in
/// f64 regardless of the training precision.
pub fn grad_check(seed: u64, matrices: usize) -> Result<GradCheckReport> {
    let regularizers = check_regularizers(&mut Rng::derive(seed, 0), matrices)?;
    let mut rng = Rng::derive(seed, 1);
    let spec = grad_check_spec();
    let mut model = Model::<f64>::new(&spec, &mut rng)?;
    let params = model.param_count();
    let mut shape = vec![GRAD_CHECK_BATCH];
    shape.extend_from_slice(&spec.input_shape);
    let x = Tensor::from_vec(&shape, (0..shape.iter().product()).map(|_| rng.normal()).collect())?;
    let classes = spec.classes()?;
    let labels: Vec<usize> = (0..GRAD_CHECK_BATCH).map(|_| rng.below(classes)).collect();

    let plain = total_gradients(&mut model, &x, &labels, &RegularizerConfig::none())?;
    let zero = total_gradients(&mut model, &x, &labels, &RegularizerConfig::norm_loss(0.0))?;
    let zero_lambda_exact = plain == zero;

    let model_check =
        check_model(&mut model, &x, &labels, &RegularizerConfig::norm_loss(GRAD_CHECK_LAMBDA), MODEL_STEP)?;
    Ok(GradCheckReport { regularizers, params, model: model_check, zero_lambda_exact })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsRun {
    pub norm0: f64,
    /// Row norm after each norm-loss step, starting with `norm0`.
    pub norm_loss: Vec<f64>,
    pub weight_decay: Vec<f64>,
    /// First step with `|norm - 1| <= tol`.
    pub steps_to_unit: Option<usize>,
    /// Distance to 1 strictly shrinks until `steps_to_unit` and never grows after.
    pub monotone: bool,
    pub weight_decay_strictly_decreasing: bool,
}

/// Iterates the scalar norm recurrences of norm loss and weight decay from
/// each starting norm.
pub fn dynamics(norms: &[f64], eta: f64, lambda: f64, steps: usize, tol: f64) -> Result<Vec<DynamicsRun>> {
    norms
        .iter()
        .map(|&norm0| {
            let nl = norm_dynamics_iterate(norm0, eta, lambda, steps)?;
            let wd = weight_decay_dynamics_iterate(norm0, eta, lambda, steps)?;
            let dist: Vec<f64> = nl.iter().map(|n| (n - 1.0).abs()).collect();
            let steps_to_unit = dist.iter().position(|&d| d <= tol);
            let strict_until = steps_to_unit.unwrap_or(dist.len() - 1);
            let monotone = dist[..=strict_until].windows(2).all(|w| w[1] < w[0])
                && dist[strict_until..].windows(2).all(|w| w[1] <= w[0]);
            let weight_decay_strictly_decreasing = wd.windows(2).all(|w| w[1] < w[0]);
            Ok(DynamicsRun {
                norm0,
                norm_loss: nl,
                weight_decay: wd,
                steps_to_unit,
                monotone,
                weight_decay_strictly_decreasing,
            })
        })
        .collect()
}

/// Writes `dynamics.csv` (every step of every trajectory) and
/// `dynamics_summary.csv`.
pub fn write_dynamics(runs: &[DynamicsRun], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join("dynamics.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["norm0", "step", "norm_loss", "weight_decay"])?;
    for r in runs {
        for (k, (a, b)) in r.norm_loss.iter().zip(&r.weight_decay).enumerate() {
            w.write_record([fmt_f64(r.norm0), k.to_string(), fmt_f64(*a), fmt_f64(*b)])?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    let path = dir.join("dynamics_summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "norm0",
        "steps_to_unit",
        "monotone",
        "final_norm_loss",
        "final_weight_decay",
        "weight_decay_strictly_decreasing",
    ])?;
    for r in runs {
        w.write_record([
            fmt_f64(r.norm0),
            r.steps_to_unit.map(|s| s.to_string()).unwrap_or_default(),
            r.monotone.to_string(),
            fmt_f64(*r.norm_loss.last().unwrap()),
            fmt_f64(*r.weight_decay.last().unwrap()),
            r.weight_decay_strictly_decreasing.to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    Ok(())
}
