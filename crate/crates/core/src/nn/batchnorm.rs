//! Batch normalization over the channel axis (axis 1) of `N x C` or
//! `N x C x H x W` activations.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    /// Biased (population) variance of the batches seen so far.
    pub running_var: Vec<T>,
    /// Weight of the old running value in each update.
    pub momentum: T,
    pub eps: T,
    stats_ready: bool,
    pub(crate) grad_gamma: Tensor<T>,
    pub(crate) grad_beta: Tensor<T>,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
}

/// `(batch, channels, spatial)` view of an activation tensor.
fn layout(shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    if shape.len() < 2 || shape[1] != channels {
        return Err(Error::shape("batch norm input", &[0, channels], shape));
    }
    Ok((shape[0], shape[2..].iter().product()))
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: Tensor::full(&[channels], T::one())?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::from_f64(DEFAULT_MOMENTUM),
            eps: T::from_f64(DEFAULT_EPS),
            stats_ready: false,
            grad_gamma: Tensor::zeros(&[channels])?,
            grad_beta: Tensor::zeros(&[channels])?,
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn has_running_stats(&self) -> bool {
        self.stats_ready
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// Installs running statistics explicitly.
    pub fn set_running_stats(&mut self, mean: Vec<T>, var: Vec<T>) -> Result<()> {
        let c = self.channels();
        if mean.len() != c || var.len() != c || var.iter().any(|v| *v < T::zero()) {
            return Err(Error::InvalidArgument("running stats need one non-negative variance per channel".into()));
        }
        self.running_mean = mean;
        self.running_var = var;
        self.stats_ready = true;
        Ok(())
    }

    pub fn forward_train(&mut self, x: &Tensor<T>, layer: usize) -> Result<Tensor<T>> {
        let c = self.channels();
        let (n, s) = layout(x.shape(), c)?;
        if n < 2 {
            return Err(Error::DegenerateBatch { layer, batch: n });
        }
        let count = T::from_usize(n * s);
        let data = x.data();
        let mut out = vec![T::zero(); x.len()];
        let mut x_hat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); c];
        let rho = self.momentum;
        for ch in 0..c {
            let plane = |b: usize| (b * c + ch) * s..(b * c + ch + 1) * s;
            let mut sum = T::zero();
            for b in 0..n {
                sum += data[plane(b)].iter().copied().sum::<T>();
            }
            let mean = sum / count;
            let mut sq = T::zero();
            for b in 0..n {
                sq += data[plane(b)].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
            }
            let var = sq / count;
            let istd = (var + self.eps).sqrt().recip();
            inv_std[ch] = istd;
            let (g, bt) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for b in 0..n {
                for i in plane(b) {
                    let xh = (data[i] - mean) * istd;
                    x_hat[i] = xh;
                    out[i] = g * xh + bt;
                }
            }
            self.running_mean[ch] = rho * self.running_mean[ch] + (T::one() - rho) * mean;
            self.running_var[ch] = rho * self.running_var[ch] + (T::one() - rho) * var;
        }
        self.stats_ready = true;
        self.cache = Some(Cache { x_hat, inv_std, shape: x.shape().to_vec() });
        Tensor::from_vec(x.shape(), out)
    }

    pub fn forward_eval(&self, x: &Tensor<T>, layer: usize) -> Result<Tensor<T>> {
        if !self.stats_ready {
            return Err(Error::UninitializedStats { layer });
        }
        let c = self.channels();
        let (n, s) = layout(x.shape(), c)?;
        let mut out = x.clone();
        let data = out.data_mut();
        for ch in 0..c {
            let istd = (self.running_var[ch] + self.eps).sqrt().recip();
            let scale = self.gamma.data()[ch] * istd;
            let shift = self.beta.data()[ch] - self.running_mean[ch] * scale;
            for b in 0..n {
                for v in &mut data[(b * c + ch) * s..(b * c + ch + 1) * s] {
                    *v = *v * scale + shift;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>, layer: usize) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::MissingCache { layer })?;
        if dy.shape() != &cache.shape[..] {
            return Err(Error::shape("batch norm upstream gradient", &cache.shape, dy.shape()));
        }
        let c = self.channels();
        let (n, s) = layout(&cache.shape, c)?;
        let count = T::from_usize(n * s);
        let g = dy.data();
        let mut dx = vec![T::zero(); dy.len()];
        for ch in 0..c {
            let plane = |b: usize| (b * c + ch) * s..(b * c + ch + 1) * s;
            let mut d_beta = T::zero();
            let mut d_gamma = T::zero();
            for b in 0..n {
                for i in plane(b) {
                    d_beta += g[i];
                    d_gamma += g[i] * cache.x_hat[i];
                }
            }
            self.grad_beta.data_mut()[ch] = d_beta;
            self.grad_gamma.data_mut()[ch] = d_gamma;
            let k = self.gamma.data()[ch] * cache.inv_std[ch] / count;
            for b in 0..n {
                for i in plane(b) {
                    dx[i] = k * (count * g[i] - d_beta - cache.x_hat[i] * d_gamma);
                }
            }
        }
        Tensor::from_vec(&cache.shape, dx)
    }

    pub(crate) fn cast<U: Scalar>(&self) -> BatchNorm<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        BatchNorm {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: conv(&self.running_mean),
            running_var: conv(&self.running_var),
            momentum: U::from_f64(self.momentum.as_f64()),
            eps: U::from_f64(self.eps.as_f64()),
            stats_ready: self.stats_ready,
            grad_gamma: self.grad_gamma.cast(),
            grad_beta: self.grad_beta.cast(),
            cache: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(shape: &[usize], seed: u64, scale: f64, shift: f64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| shift + scale * rng.normal()).collect()).unwrap()
    }

    fn channel_moments(y: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let (n, c) = (y.shape()[0], y.shape()[1]);
        let s: usize = y.shape()[2..].iter().product();
        let vals: Vec<f64> = (0..n).flat_map(|b| y.data()[(b * c + ch) * s..(b * c + ch + 1) * s].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    }

    #[test]
    fn standardizes_per_channel() {
        let mut bn = BatchNorm::<f64>::new(3).unwrap();
        bn.eps = 0.0;
        let y = bn.forward_train(&random(&[8, 3, 4, 4], 1, 3.0, 5.0), 0).unwrap();
        for ch in 0..3 {
            let (m, v) = channel_moments(&y, ch);
            assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-6, "{m} {v}");
        }
    }

    #[test]
    fn affine_parameters_apply() {
        let mut bn = BatchNorm::<f64>::new(2).unwrap();
        bn.eps = 0.0;
        bn.gamma.fill(2.0);
        bn.beta.fill(3.0);
        let y = bn.forward_train(&random(&[16, 2], 2, 1.0, 0.0), 0).unwrap();
        for ch in 0..2 {
            let (m, v) = channel_moments(&y, ch);
            assert!((m - 3.0).abs() < 1e-9 && (v.sqrt() - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_matches_train_when_stats_agree() {
        let x = random(&[6, 2, 3, 3], 3, 2.0, -1.0);
        let mut bn = BatchNorm::<f64>::new(2).unwrap();
        bn.gamma.data_mut().copy_from_slice(&[0.5, -1.5]);
        bn.beta.data_mut().copy_from_slice(&[0.1, 0.2]);
        let train = bn.forward_train(&x, 0).unwrap();
        // Construct running stats equal to this batch's statistics.
        let (m0, v0) = channel_moments(&x, 0);
        let (m1, v1) = channel_moments(&x, 1);
        bn.set_running_stats(vec![m0, m1], vec![v0, v1]).unwrap();
        let eval = bn.forward_eval(&x, 0).unwrap();
        for (a, b) in train.data().iter().zip(eval.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm::<f64>::new(1).unwrap();
        let a = Tensor::from_vec(&[2, 1], vec![0.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![4.0, 6.0]).unwrap();
        bn.forward_train(&a, 0).unwrap();
        assert!((bn.running_mean[0] - 0.1).abs() < 1e-15);
        assert!((bn.running_var[0] - 1.0).abs() < 1e-15);
        bn.forward_train(&b, 0).unwrap();
        assert!((bn.running_mean[0] - (0.9 * 0.1 + 0.1 * 5.0)).abs() < 1e-15);
        assert!((bn.running_var[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let mut bn = BatchNorm::<f64>::new(2).unwrap();
        let x = random(&[1, 2], 4, 1.0, 0.0);
        assert_eq!(bn.forward_train(&x, 3).unwrap_err(), Error::DegenerateBatch { layer: 3, batch: 1 });
        assert_eq!(bn.forward_eval(&x, 3).unwrap_err(), Error::UninitializedStats { layer: 3 });
        assert_eq!(bn.backward(&x, 3).unwrap_err(), Error::MissingCache { layer: 3 });
    }
}
