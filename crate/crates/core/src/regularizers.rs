//! Norm loss, weight decay and Oblique-manifold operations on weight matrices.
//!
//! A layer's weights are viewed as an `n x p` row-matrix: row `c_o` holds
//! every weight of output filter `c_o`. For a convolution kernel of shape
//! `F_h x F_w x C_i` the row is flattened in `(c_i, i, j)` lexicographic
//! order; a dense layer's row is its fan-in.
//!
//! The norm loss of a matrix is `sum_co (1 - |w_co|)^2`. It is zero exactly
//! on the Oblique manifold (all rows of unit norm) and its gradient
//! `2 w (1 - 1/|w|)` acts like a weight decay whose strength and sign are
//! set per row by the row norm: rows shorter than one are pushed outward,
//! longer rows inward.

use alloc::format;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{dot, l2_norm, sum_sq, Tensor};

/// Rows with a norm below this get a zero norm-loss gradient and cannot be
/// projected onto the unit sphere.
pub const EPS_NORM: f64 = 1e-12;

/// Tolerance on `|w| - 1` accepted by the per-row Riemannian operations.
pub const UNIT_ROW_TOL: f64 = 1e-6;

/// Kernel extents `(F_h, F_w, C_i, C_o)`. Dense layers use `F_h = F_w = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerDims {
    pub fh: usize,
    pub fw: usize,
    pub ci: usize,
    pub co: usize,
}

impl LayerDims {
    pub fn conv(fh: usize, fw: usize, ci: usize, co: usize) -> Self {
        LayerDims { fh, fw, ci, co }
    }

    pub fn dense(fan_in: usize, fan_out: usize) -> Self {
        LayerDims { fh: 1, fw: 1, ci: fan_in, co: fan_out }
    }

    /// Row length `p = F_h * F_w * C_i`.
    pub fn row_len(&self) -> usize {
        self.fh * self.fw * self.ci
    }

    fn validate(&self) -> Result<()> {
        if self.fh == 0 || self.fw == 0 || self.ci == 0 || self.co == 0 {
            return Err(Error::InvalidArgument(format!("layer dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// A layer's parameters in row-matrix form.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeightMatrix<T> {
    w: Tensor<T>,
    dims: LayerDims,
}

impl<T: Scalar> WeightMatrix<T> {
    pub fn new(w: Tensor<T>, dims: LayerDims) -> Result<Self> {
        dims.validate()?;
        let (n, p) = w.dims2()?;
        if n != dims.co || p != dims.row_len() {
            return Err(Error::shape("weight matrix", &[dims.co, dims.row_len()], &[n, p]));
        }
        Ok(WeightMatrix { w, dims })
    }

    /// Matrix without kernel structure: treated as a dense layer with
    /// `n` outputs and fan-in `p`.
    pub fn from_rows(w: Tensor<T>) -> Result<Self> {
        let (n, p) = w.dims2()?;
        Self::new(w, LayerDims::dense(p, n))
    }

    pub fn dims(&self) -> LayerDims {
        self.dims
    }

    pub fn rows(&self) -> usize {
        self.dims.co
    }

    pub fn row_len(&self) -> usize {
        self.dims.row_len()
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.w
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor<T> {
        &mut self.w
    }

    pub fn row(&self, r: usize) -> &[T] {
        self.w.row(r)
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RegKind {
    None,
    WeightDecay,
    NormLoss,
    /// Hard constraint: rows renormalized every `projection_period` steps.
    ObliqueProjection,
}

impl RegKind {
    pub fn name(&self) -> &'static str {
        match self {
            RegKind::None => "none",
            RegKind::WeightDecay => "weight_decay",
            RegKind::NormLoss => "norm_loss",
            RegKind::ObliqueProjection => "oblique_projection",
        }
    }
}

impl core::str::FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RegKind::None),
            "weight_decay" | "wd" => Ok(RegKind::WeightDecay),
            "norm_loss" | "nl" => Ok(RegKind::NormLoss),
            "oblique_projection" | "projection" => Ok(RegKind::ObliqueProjection),
            other => Err(Error::InvalidArgument(format!("unknown regularizer kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegularizerConfig {
    pub kind: RegKind,
    pub lambda: f64,
    pub projection_period: u64,
}

impl RegularizerConfig {
    pub fn new(kind: RegKind, lambda: f64, projection_period: u64) -> Result<Self> {
        let cfg = RegularizerConfig { kind, lambda, projection_period };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn none() -> Self {
        RegularizerConfig { kind: RegKind::None, lambda: 0.0, projection_period: 1 }
    }

    pub fn weight_decay(lambda: f64) -> Self {
        RegularizerConfig { kind: RegKind::WeightDecay, lambda, projection_period: 1 }
    }

    pub fn norm_loss(lambda: f64) -> Self {
        RegularizerConfig { kind: RegKind::NormLoss, lambda, projection_period: 1 }
    }

    pub fn projection(period: u64) -> Self {
        RegularizerConfig { kind: RegKind::ObliqueProjection, lambda: 0.0, projection_period: period }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.projection_period == 0 {
            return Err(Error::InvalidArgument("projection period must be >= 1".into()));
        }
        Ok(())
    }

    /// Penalty `lambda * L_reg(w)` added to the target loss. Projection
    /// contributes no loss term.
    pub fn penalty<T: Scalar>(&self, w: &WeightMatrix<T>) -> T {
        let lambda = T::from_f64(self.lambda);
        match self.kind {
            RegKind::WeightDecay => lambda * weight_decay_value(w),
            RegKind::NormLoss => lambda * norm_loss_value(w),
            RegKind::None | RegKind::ObliqueProjection => T::zero(),
        }
    }

    /// Adds `lambda * dL_reg/dw` into `grad`.
    pub fn accumulate_grad<T: Scalar>(&self, w: &WeightMatrix<T>, grad: &mut Tensor<T>) {
        let lambda = T::from_f64(self.lambda);
        if lambda == T::zero() {
            return;
        }
        let p = w.row_len();
        match self.kind {
            RegKind::WeightDecay => {
                let two_lambda = lambda + lambda;
                for (g, &x) in grad.data_mut().iter_mut().zip(w.tensor().data()) {
                    *g += two_lambda * x;
                }
            }
            RegKind::NormLoss => {
                let g = grad.data_mut();
                for r in 0..w.rows() {
                    let row = w.row(r);
                    let coef = lambda * norm_loss_row_factor(row);
                    for (g, &x) in g[r * p..(r + 1) * p].iter_mut().zip(row) {
                        *g += coef * x;
                    }
                }
            }
            RegKind::None | RegKind::ObliqueProjection => {}
        }
    }
}

/// `2 (1 - 1/|w|)`, the per-row multiplier of the norm-loss gradient.
fn norm_loss_row_factor<T: Scalar>(row: &[T]) -> T {
    let norm = l2_norm(row);
    if norm.as_f64() < EPS_NORM {
        return T::zero();
    }
    let two = T::one() + T::one();
    two * (T::one() - norm.recip())
}

/// `sum_co (1 - |w_co|)^2`.
pub fn norm_loss_value<T: Scalar>(w: &WeightMatrix<T>) -> T {
    (0..w.rows())
        .map(|r| {
            let d = T::one() - l2_norm(w.row(r));
            d * d
        })
        .sum()
}

/// Element `(c_o, j)` is `2 w[c_o, j] (1 - 1/|w_co|)`; rows shorter than
/// [`EPS_NORM`] get zero.
pub fn norm_loss_grad<T: Scalar>(w: &WeightMatrix<T>) -> Tensor<T> {
    let mut g = w.tensor().clone();
    let p = w.row_len();
    for (r, row) in g.data_mut().chunks_mut(p).enumerate() {
        let coef = norm_loss_row_factor(w.row(r));
        row.iter_mut().for_each(|x| *x *= coef);
    }
    g
}

/// Sum of squares of all weights.
pub fn weight_decay_value<T: Scalar>(w: &WeightMatrix<T>) -> T {
    sum_sq(w.tensor().data())
}

pub fn weight_decay_grad<T: Scalar>(w: &WeightMatrix<T>) -> Tensor<T> {
    w.tensor().scale(T::one() + T::one())
}

/// Rescales every row to unit norm.
pub fn project_oblique<T: Scalar>(w: &WeightMatrix<T>) -> Result<WeightMatrix<T>> {
    let mut out = w.clone();
    project_oblique_in_place(&mut out)?;
    Ok(out)
}

/// In-place variant of [`project_oblique`]. On error the matrix is left
/// unmodified.
pub fn project_oblique_in_place<T: Scalar>(w: &mut WeightMatrix<T>) -> Result<()> {
    for r in 0..w.rows() {
        let norm = l2_norm(w.row(r)).as_f64();
        if !(norm >= EPS_NORM) {
            return Err(Error::DegenerateRow { row: r, norm });
        }
    }
    // Normalized in f64 so that f32 rows land within one rounding of unit norm.
    let p = w.row_len();
    for row in w.tensor_mut().data_mut().chunks_mut(p) {
        let norm = Float::sqrt(row.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>());
        row.iter_mut().for_each(|x| *x = T::from_f64(x.as_f64() / norm));
    }
    Ok(())
}

/// `|ddiag(W W^T) - I|_F`: zero iff `w` lies on the Oblique manifold.
pub fn oblique_residual<T: Scalar>(w: &WeightMatrix<T>) -> T {
    (0..w.rows())
        .map(|r| {
            let d = sum_sq(w.row(r)) - T::one();
            d * d
        })
        .sum::<T>()
        .sqrt()
}

fn check_unit_row<T: Scalar>(w_row: &[T], g: &[T]) -> Result<()> {
    if w_row.len() != g.len() {
        return Err(Error::shape("riemannian gradient", &[1, w_row.len()], &[1, g.len()]));
    }
    let norm = l2_norm(w_row).as_f64();
    if !((norm - 1.0).abs() <= UNIT_ROW_TOL) {
        return Err(Error::NotUnitRow { norm });
    }
    Ok(())
}

fn as_row<T: Scalar>(t: &Tensor<T>) -> Result<&[T]> {
    match t.shape() {
        [1, _] | [_] => Ok(t.data()),
        other => Err(Error::shape("weight row", &[1, 0], other)),
    }
}

/// Tangent-space projection of a Euclidean gradient at a unit-norm row:
/// `g - (w . g) w`.
pub fn riemannian_grad<T: Scalar>(w_row: &Tensor<T>, euclid_grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (w, g) = (as_row(w_row)?, as_row(euclid_grad)?);
    check_unit_row(w, g)?;
    let radial = dot(w, g);
    let out = g.iter().zip(w).map(|(&gi, &wi)| gi - radial * wi).collect();
    Tensor::from_vec(&[1, w.len()], out)
}

/// `|(w . g) w| / |g|`, the share of the gradient that is radial. Zero for
/// a zero gradient.
pub fn gradient_dominance_ratio<T: Scalar>(w_row: &Tensor<T>, euclid_grad: &Tensor<T>) -> Result<T> {
    let (w, g) = (as_row(w_row)?, as_row(euclid_grad)?);
    check_unit_row(w, g)?;
    let g_norm = l2_norm(g);
    if g_norm == T::zero() {
        return Ok(T::zero());
    }
    Ok(dot(w, g).abs() * l2_norm(w) / g_norm)
}

/// Which cost [`regularizer_flops`] counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopCount {
    /// Per-step cost of the regularizer of the given kind.
    Regularizer(RegKind),
    /// Extra cost of norm loss over weight decay.
    NormLossOverhead,
}

/// Operation counts per optimizer step for a layer with the given kernel.
///
/// Weight decay costs two operations per weight. Norm loss costs
/// `3 C_o K + C_o + 2 C_o K` with `K = F_h F_w C_i`: squares and sums for
/// the row norms, one root per row, then the scaled update. One projection
/// costs the row norms plus one division per weight, `3 C_o K + C_o`.
pub fn regularizer_flops(dims: LayerDims, count: FlopCount) -> Result<u64> {
    dims.validate()?;
    let co = dims.co as u64;
    let k = dims.row_len() as u64;
    let wd = 2 * co * k;
    let nl = 3 * co * k + co + 2 * co * k;
    Ok(match count {
        FlopCount::Regularizer(RegKind::None) => 0,
        FlopCount::Regularizer(RegKind::WeightDecay) => wd,
        FlopCount::Regularizer(RegKind::NormLoss) => nl,
        FlopCount::Regularizer(RegKind::ObliqueProjection) => 3 * co * k + co,
        FlopCount::NormLossOverhead => nl - wd,
    })
}

/// Forward plus backward cost of a convolution, `6 m C_o C_i F_h F_w I_h I_w`.
pub fn conv_flops(dims: LayerDims, batch: usize, in_h: usize, in_w: usize) -> Result<u64> {
    dims.validate()?;
    if batch == 0 || in_h == 0 || in_w == 0 {
        return Err(Error::InvalidArgument("batch and input extents must be positive".into()));
    }
    Ok(6 * batch as u64 * dims.co as u64 * dims.ci as u64 * dims.fh as u64 * dims.fw as u64 * in_h as u64 * in_w as u64)
}
