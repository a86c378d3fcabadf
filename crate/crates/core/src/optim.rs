//! SGD with momentum, step learning-rate schedules and the three ways of
//! applying a weight regularizer: as a loss term (weight decay, norm loss)
//! whose gradient enters the momentum buffer, or as a hard projection onto
//! the Oblique manifold every `T` steps.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::ParamSlot;
use crate::regularizers::{project_oblique_in_place, RegKind, RegularizerConfig, EPS_NORM};
use crate::scalar::Scalar;
use crate::tensor::{l2_norm, Tensor};

#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    eta: f64,
    momentum: f64,
    nesterov: bool,
    velocity: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(eta: f64, momentum: f64, nesterov: bool) -> Result<Self> {
        let mut s = OptimizerState { eta: 0.0, momentum, nesterov, velocity: Vec::new(), step: 0 };
        s.set_eta(eta)?;
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(s)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn set_eta(&mut self, eta: f64) -> Result<()> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {eta}")));
        }
        self.eta = eta;
        Ok(())
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn nesterov(&self) -> bool {
        self.nesterov
    }

    /// Number of completed [`sgd_step`] calls.
    pub fn step_counter(&self) -> u64 {
        self.step
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }
}

/// One optimizer step over `params`, using the gradients stored in the slots.
///
/// The regularizer gradient is recomputed from the current weights and added
/// to the target gradient of every weight matrix before the velocity update
/// `v <- mu v + g`; the weights then move by `-eta v` (or by
/// `-eta (g + mu v)` with Nesterov). With `mu = 0` this is plain gradient
/// descent on `L_target + lambda L_reg`. Biases and batch-norm parameters
/// are not regularized. Nothing is modified if any gradient is non-finite.
pub fn sgd_step<T: Scalar>(
    params: &mut [ParamSlot<'_, T>],
    reg: &RegularizerConfig,
    opt: &mut OptimizerState<T>,
) -> Result<()> {
    reg.validate()?;
    if let Some(bad) = params.iter().find(|p| !p.grad().is_finite()) {
        return Err(Error::NonFiniteGradient { layer: bad.layer() });
    }
    if opt.velocity.is_empty() {
        opt.velocity = params.iter().map(|p| Tensor::zeros(p.grad().shape())).collect::<Result<_>>()?;
    }
    if opt.velocity.len() != params.len() {
        return Err(Error::shape("optimizer velocity buffers", &[opt.velocity.len()], &[params.len()]));
    }
    for (p, v) in params.iter().zip(&opt.velocity) {
        if p.grad().shape() != v.shape() {
            return Err(Error::shape("optimizer velocity", v.shape(), p.grad().shape()));
        }
    }

    let eta = T::from_f64(opt.eta);
    let mu = T::from_f64(opt.momentum);
    for (p, v) in params.iter_mut().zip(opt.velocity.iter_mut()) {
        let mut g = p.grad().clone();
        if let ParamSlot::Weight { w, .. } = p {
            reg.accumulate_grad(w, &mut g);
        }
        let value = p.value_mut();
        for ((x, vel), &gi) in value.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vel = mu * *vel + gi;
            let step = if opt.nesterov { gi + mu * *vel } else { *vel };
            *x -= eta * step;
        }
    }
    opt.step += 1;
    Ok(())
}

/// Renormalizes every weight row when `reg` is a projection regularizer and
/// `step` is a multiple of its period. Returns whether a projection ran.
/// Weights are checked before any is modified, so a degenerate row leaves
/// all parameters untouched.
pub fn apply_projection_if_due<T: Scalar>(
    params: &mut [ParamSlot<'_, T>],
    reg: &RegularizerConfig,
    step: u64,
) -> Result<bool> {
    reg.validate()?;
    if reg.kind != RegKind::ObliqueProjection || !step.is_multiple_of(reg.projection_period) {
        return Ok(false);
    }
    for p in params.iter() {
        if let ParamSlot::Weight { w, .. } = p {
            for r in 0..w.rows() {
                let norm = l2_norm(w.row(r)).as_f64();
                if !(norm >= EPS_NORM) {
                    return Err(Error::DegenerateRow { row: r, norm });
                }
            }
        }
    }
    for p in params.iter_mut() {
        if let ParamSlot::Weight { w, .. } = p {
            project_oblique_in_place(w)?;
        }
    }
    Ok(true)
}

/// Piecewise-constant learning rate: `initial / factor^k`, where `k` counts
/// the milestones at or before the current epoch.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LrSchedule {
    pub initial: f64,
    pub milestones: Vec<u32>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn new(initial: f64, milestones: Vec<u32>, factor: f64) -> Result<Self> {
        let s = LrSchedule { initial, milestones, factor };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(initial: f64) -> Self {
        LrSchedule { initial, milestones: Vec::new(), factor: 10.0 }
    }

    /// Wide-ResNet CIFAR schedule: 0.1, divided by 5 at epochs 53, 107, 230.
    pub fn wrn_cifar() -> Self {
        LrSchedule { initial: 0.1, milestones: alloc::vec![53, 107, 230], factor: 5.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "initial learning rate must be positive, got {}",
                self.initial
            )));
        }
        if !(self.factor > 1.0) {
            return Err(Error::InvalidArgument(format!("schedule factor must exceed 1, got {}", self.factor)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("milestones must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: u32) -> f64 {
        let drops = self.milestones.iter().take_while(|&&m| m <= epoch).count();
        let mut lr = self.initial;
        for _ in 0..drops {
            lr /= self.factor;
        }
        lr
    }
}

fn check_dynamics(norm0: f64, eta: f64, lambda: f64) -> Result<()> {
    if !(norm0 > 0.0) || !(eta > 0.0) || !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need norm0 > 0, eta > 0, lambda >= 0 (got {norm0}, {eta}, {lambda})"
        )));
    }
    if 2.0 * eta * lambda >= 1.0 {
        return Err(Error::UnstableStep { eta_lambda: eta * lambda });
    }
    Ok(())
}

/// Row-norm trajectory under norm-loss steps with no target gradient:
/// `|w| <- |w| * |1 - 2 eta lambda (1 - 1/|w|)|`. Returns `steps + 1`
/// values starting with `norm0`.
pub fn norm_dynamics_iterate(norm0: f64, eta: f64, lambda: f64, steps: usize) -> Result<Vec<f64>> {
    check_dynamics(norm0, eta, lambda)?;
    let k = 2.0 * eta * lambda;
    let mut out = Vec::with_capacity(steps + 1);
    let mut n = norm0;
    out.push(n);
    for _ in 0..steps {
        n *= (1.0 - k * (1.0 - 1.0 / n)).abs();
        out.push(n);
    }
    Ok(out)
}

/// Row-norm trajectory under weight-decay steps with no target gradient:
/// `|w| <- |w| (1 - 2 eta lambda)`.
pub fn weight_decay_dynamics_iterate(norm0: f64, eta: f64, lambda: f64, steps: usize) -> Result<Vec<f64>> {
    check_dynamics(norm0, eta, lambda)?;
    let k = 1.0 - 2.0 * eta * lambda;
    let mut out = Vec::with_capacity(steps + 1);
    let mut n = norm0;
    out.push(n);
    for _ in 0..steps {
        n *= k;
        out.push(n);
    }
    Ok(out)
}
