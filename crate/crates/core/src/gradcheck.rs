//! Finite-difference verification of analytic gradients (wide precision).
//!
//! Errors are measured per parameter tensor as
//! `max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|)`, with `a` the
//! analytic and `n` the central-difference gradient. Normalizing by the
//! tensor's largest entry keeps round-off in near-zero components from
//! dominating the figure.

use alloc::vec::Vec;

use num_traits::Float;

use crate::error::Result;
use crate::nn::{Layer, Model, ParamKind};
use crate::regularizers::{
    norm_loss_grad, norm_loss_value, weight_decay_grad, weight_decay_value, RegularizerConfig, WeightMatrix,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Step used for the regularizer checks.
pub const REG_STEP: f64 = 1e-6;
/// Step used for whole-network checks.
pub const MODEL_STEP: f64 = 1e-5;

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Times the step may be divided by four when a central difference is
/// not stable under refinement.
pub const MAX_REFINE: usize = 4;

/// Central difference of a scalar function at `x`, guarded against kinks.
///
/// Piecewise-smooth losses (ReLU) make a difference quotient meaningless
/// when `[x - h, x + h]` straddles a kink. The estimate at `h` is accepted
/// once it agrees with the one at `h / 4`; otherwise the step keeps
/// shrinking, up to [`MAX_REFINE`] times.
pub fn guarded_central(step: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let mut central = |h: f64| -> Result<f64> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
    let mut h = step;
    let mut prev = central(h)?;
    for _ in 0..MAX_REFINE {
        let next = central(h / 4.0)?;
        if (next - prev).abs() <= 1e-6 * prev.abs().max(next.abs()) + 1e-8 {
            return Ok(prev);
        }
        prev = next;
        h /= 4.0;
    }
    Ok(prev)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(x: &mut [f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let plus = f(x);
            x[i] = orig - step;
            let minus = f(x);
            x[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Random `n x p` matrix with `n <= max_rows`, `p <= max_cols`, and row
/// norms spread log-uniformly over `[0.1, 10]`.
pub fn random_weight_matrix(rng: &mut Rng, max_rows: usize, max_cols: usize) -> Result<WeightMatrix<f64>> {
    let n = 1 + rng.below(max_rows);
    let p = 1 + rng.below(max_cols);
    let mut data = Vec::with_capacity(n * p);
    for _ in 0..n {
        let mut row: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
        let norm = Float::sqrt(row.iter().map(|v| v * v).sum::<f64>());
        let target = Float::powf(10.0, 2.0 * rng.uniform() - 1.0);
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v *= target / norm);
        }
        data.extend(row);
    }
    WeightMatrix::from_rows(Tensor::from_vec(&[n, p], data)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerCheck {
    pub matrices: usize,
    pub norm_loss_max_rel: f64,
    pub weight_decay_max_rel: f64,
}

/// Compares both regularizer gradients with central differences of their
/// values on `count` random matrices.
pub fn check_regularizers(rng: &mut Rng, count: usize) -> Result<RegularizerCheck> {
    let mut report = RegularizerCheck { matrices: count, norm_loss_max_rel: 0.0, weight_decay_max_rel: 0.0 };
    for _ in 0..count {
        let w = random_weight_matrix(rng, 8, 16)?;
        let dims = w.dims();
        let shape = [w.rows(), w.row_len()];
        let value_at = |x: &[f64], f: fn(&WeightMatrix<f64>) -> f64| {
            let m =
                WeightMatrix::new(Tensor::from_vec(&shape, x.to_vec()).expect("same shape"), dims).expect("same dims");
            f(&m)
        };
        let mut x = w.tensor().data().to_vec();
        let nl = numeric_gradient(&mut x, REG_STEP, |x| value_at(x, norm_loss_value));
        let wd = numeric_gradient(&mut x, REG_STEP, |x| value_at(x, weight_decay_value));
        report.norm_loss_max_rel = report.norm_loss_max_rel.max(relative_error(norm_loss_grad(&w).data(), &nl));
        report.weight_decay_max_rel =
            report.weight_decay_max_rel.max(relative_error(weight_decay_grad(&w).data(), &wd));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub layer: usize,
    pub layer_kind: &'static str,
    pub param: ParamKind,
    pub len: usize,
    pub max_rel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheck {
    pub params: usize,
    pub tensors: Vec<TensorCheck>,
}

impl ModelCheck {
    pub fn max_rel(&self) -> f64 {
        self.tensors.iter().fold(0.0, |m, t| m.max(t.max_rel))
    }
}

/// Train-mode total loss `L_target + sum_layers lambda L_reg`.
pub fn total_loss(model: &mut Model<f64>, x: &Tensor<f64>, labels: &[usize], reg: &RegularizerConfig) -> Result<f64> {
    let target = model.forward_train(x, labels)?.loss;
    let penalty: f64 = model.weights().iter().map(|(_, w)| reg.penalty(*w)).sum();
    Ok(target + penalty)
}

/// Analytic gradients of [`total_loss`], in parameter order.
pub fn total_gradients(
    model: &mut Model<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    reg: &RegularizerConfig,
) -> Result<Vec<Tensor<f64>>> {
    model.forward_train(x, labels)?;
    model.backward()?;
    Ok(model
        .params_mut()
        .iter()
        .map(|slot| {
            let mut g = slot.grad().clone();
            if let crate::nn::ParamSlot::Weight { w, .. } = slot {
                reg.accumulate_grad(w, &mut g);
            }
            g
        })
        .collect())
}

fn layer_kind(layer: &Layer<f64>) -> &'static str {
    match layer {
        Layer::Dense(_) => "dense",
        Layer::Conv(_) => "conv2d",
        Layer::Relu { .. } => "relu",
        Layer::BatchNorm(_) => "batch_norm",
        Layer::Residual(_) => "residual_add",
        Layer::GlobalAvgPool { .. } => "global_avg_pool",
        Layer::Head { .. } => "softmax_xent_head",
    }
}

/// Checks every parameter of `model` against central differences of the
/// total loss on one batch.
pub fn check_model(
    model: &mut Model<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    reg: &RegularizerConfig,
    step: f64,
) -> Result<ModelCheck> {
    let analytic = total_gradients(model, x, labels, reg)?;
    let mut tensors = Vec::with_capacity(analytic.len());
    let mut params = 0;
    for (slot, grad) in analytic.iter().enumerate() {
        let (layer, kind) = {
            let slots = model.params_mut();
            (slots[slot].layer(), slots[slot].kind())
        };
        let mut numeric = Vec::with_capacity(grad.len());
        for i in 0..grad.len() {
            let orig = model.params_mut()[slot].value_mut().data()[i];
            let d = guarded_central(step, |dx| {
                model.params_mut()[slot].value_mut().data_mut()[i] = orig + dx;
                total_loss(model, x, labels, reg)
            })?;
            model.params_mut()[slot].value_mut().data_mut()[i] = orig;
            numeric.push(d);
        }
        params += grad.len();
        tensors.push(TensorCheck {
            layer,
            layer_kind: layer_kind(&model.layers()[layer]),
            param: kind,
            len: grad.len(),
            max_rel: relative_error(grad.data(), &numeric),
        });
    }
    Ok(ModelCheck { params, tensors })
}

/// Checks the gradient of the target loss with respect to the model input.
pub fn check_input_gradient(model: &mut Model<f64>, x: &Tensor<f64>, labels: &[usize], step: f64) -> Result<f64> {
    model.forward_train(x, labels)?;
    let analytic = model.backward()?;
    let mut data = x.data().to_vec();
    let shape = x.shape().to_vec();
    let mut numeric = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let orig = data[i];
        numeric.push(guarded_central(step, |dx| {
            data[i] = orig + dx;
            let t = Tensor::from_vec(&shape, data.clone())?;
            Ok(model.forward_train(&t, labels)?.loss)
        })?);
        data[i] = orig;
    }
    Ok(relative_error(analytic.data(), &numeric))
}
