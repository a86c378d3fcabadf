use alloc::vec;

use alloc::vec::Vec;
use num_traits::Float;

use super::batchnorm::BatchNorm;
use super::conv::{conv2d_backward, conv2d_forward, ConvGeom, Padding};
use super::{LayerSpec, Mode, ModelSpec};
use crate::error::{Error, Result};
use crate::regularizers::{LayerDims, WeightMatrix};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{gemm, transpose_into, Tensor};

#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub weight: WeightMatrix<T>,
    pub bias: Option<Tensor<T>>,
    grad_w: Tensor<T>,
    grad_b: Option<Tensor<T>>,
    input: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct Conv<T> {
    pub weight: WeightMatrix<T>,
    pub geom: ConvGeom,
    grad_w: Tensor<T>,
    input: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct Residual<T> {
    pub from: usize,
    pub projection: Option<Conv<T>>,
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Conv(Conv<T>),
    Relu { mask: Option<Vec<bool>> },
    BatchNorm(BatchNorm<T>),
    Residual(Residual<T>),
    GlobalAvgPool { input_shape: Option<Vec<usize>> },
    Head { cache: Option<HeadCache<T>> },
}

#[derive(Debug, Clone)]
pub struct HeadCache<T> {
    probs: Vec<T>,
    labels: Vec<usize>,
    classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// A regularized weight matrix (dense, conv or shortcut projection).
    Weight,
    Bias,
    BnScale,
    BnShift,
}

/// Mutable view of one parameter tensor and its latest gradient.
pub enum ParamSlot<'a, T> {
    Weight { layer: usize, w: &'a mut WeightMatrix<T>, grad: &'a Tensor<T> },
    Other { layer: usize, kind: ParamKind, value: &'a mut Tensor<T>, grad: &'a Tensor<T> },
}

impl<T: Scalar> ParamSlot<'_, T> {
    pub fn layer(&self) -> usize {
        match self {
            ParamSlot::Weight { layer, .. } | ParamSlot::Other { layer, .. } => *layer,
        }
    }

    pub fn kind(&self) -> ParamKind {
        match self {
            ParamSlot::Weight { .. } => ParamKind::Weight,
            ParamSlot::Other { kind, .. } => *kind,
        }
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        match self {
            ParamSlot::Weight { w, .. } => w.tensor_mut(),
            ParamSlot::Other { value, .. } => value,
        }
    }

    pub fn grad(&self) -> &Tensor<T> {
        match self {
            ParamSlot::Weight { grad, .. } | ParamSlot::Other { grad, .. } => grad,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// `m x classes`, the head input.
    pub logits: Tensor<T>,
    /// Mean cross-entropy over the batch.
    pub loss: T,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: ModelSpec,
    shapes: Vec<Vec<usize>>,
    layers: Vec<Layer<T>>,
    /// Activations referenced by residual layers, kept during a forward pass.
    saved: Vec<bool>,
}

/// He-normal initialization: variance `2 / fan_in` per weight.
fn he_normal<T: Scalar>(dims: LayerDims, rng: &mut Rng) -> Result<WeightMatrix<T>> {
    let std = Float::sqrt(2.0 / dims.row_len() as f64);
    let data = (0..dims.co * dims.row_len()).map(|_| T::from_f64(std * rng.normal())).collect();
    WeightMatrix::new(Tensor::from_vec(&[dims.co, dims.row_len()], data)?, dims)
}

impl<T: Scalar> Conv<T> {
    fn new(geom: ConvGeom, rng: &mut Rng) -> Result<Self> {
        let dims = LayerDims::conv(geom.fh, geom.fw, geom.in_c, geom.out_c);
        Ok(Conv {
            weight: he_normal(dims, rng)?,
            geom,
            grad_w: Tensor::zeros(&[dims.co, dims.row_len()])?,
            input: None,
        })
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(x, self.weight.tensor(), &self.geom)
    }

    fn backward(&mut self, dy: &Tensor<T>, layer: usize) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or(Error::MissingCache { layer })?;
        let (dx, dw) = conv2d_backward(&x, self.weight.tensor(), dy, &self.geom)?;
        self.grad_w = dw;
        Ok(dx)
    }

    fn cast<U: Scalar>(&self) -> Conv<U> {
        Conv {
            weight: WeightMatrix::new(self.weight.tensor().cast(), self.weight.dims()).expect("same dims"),
            geom: self.geom,
            grad_w: self.grad_w.cast(),
            input: None,
        }
    }
}

impl<T: Scalar> Dense<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let m = x.shape()[0];
        let (out, fan_in) = (self.weight.rows(), self.weight.row_len());
        if x.len() != m * fan_in {
            return Err(Error::shape("dense input", &[m, fan_in], x.shape()));
        }
        let mut w_t = vec![T::zero(); fan_in * out];
        transpose_into(self.weight.tensor().data(), out, fan_in, &mut w_t);
        let mut y = vec![T::zero(); m * out];
        if let Some(b) = &self.bias {
            for row in y.chunks_mut(out) {
                row.copy_from_slice(b.data());
            }
        }
        gemm(m, fan_in, out, x.data(), &w_t, &mut y);
        Tensor::from_vec(&[m, out], y)
    }

    fn backward(&mut self, dy: &Tensor<T>, layer: usize) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or(Error::MissingCache { layer })?;
        let m = x.shape()[0];
        let (out, fan_in) = (self.weight.rows(), self.weight.row_len());
        let mut dy_t = vec![T::zero(); out * m];
        transpose_into(dy.data(), m, out, &mut dy_t);
        let mut dw = vec![T::zero(); out * fan_in];
        gemm(out, m, fan_in, &dy_t, x.data(), &mut dw);
        self.grad_w = Tensor::from_vec(&[out, fan_in], dw)?;
        if let Some(gb) = &mut self.grad_b {
            gb.fill(T::zero());
            for row in dy.data().chunks(out) {
                for (g, &d) in gb.data_mut().iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        let mut dx = vec![T::zero(); m * fan_in];
        gemm(m, out, fan_in, dy.data(), self.weight.tensor().data(), &mut dx);
        Tensor::from_vec(x.shape(), dx)
    }
}

fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let &[m, c, h, w] = x.shape() else {
        return Err(Error::shape("global average pool input", &[0, 0, 0, 0], x.shape()));
    };
    let inv = T::from_usize(h * w).recip();
    let data = x.data().chunks(h * w).map(|plane| plane.iter().copied().sum::<T>() * inv).collect();
    Tensor::from_vec(&[m, c], data)
}

/// Mean cross-entropy and softmax probabilities of `m x k` logits.
fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Vec<T>)> {
    let (m, k) = logits.dims2()?;
    if labels.len() != m {
        return Err(Error::shape("labels", &[m], &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(alloc::format!("label {bad} out of range for {k} classes")));
    }
    let mut probs = vec![T::zero(); m * k];
    let mut loss = T::zero();
    for (i, (row, p)) in logits.data().chunks(k).zip(probs.chunks_mut(k)).enumerate() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (pj, &v) in p.iter_mut().zip(row) {
            *pj = (v - max).exp();
            z += *pj;
        }
        p.iter_mut().for_each(|pj| *pj /= z);
        loss += z.ln() + max - row[labels[i]];
    }
    Ok((loss / T::from_usize(m), probs))
}

impl<T: Scalar> Model<T> {
    /// Builds a model with freshly initialized parameters. The spec is
    /// shape-checked first.
    pub fn new(spec: &ModelSpec, rng: &mut Rng) -> Result<Self> {
        let shapes = spec.infer_shapes()?;
        let mut saved = vec![false; shapes.len()];
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (k, ls) in spec.layers.iter().enumerate() {
            let x = &shapes[k];
            let layer = match *ls {
                LayerSpec::Dense { inputs, outputs, bias } => {
                    let dims = LayerDims::dense(inputs, outputs);
                    Layer::Dense(Dense {
                        weight: he_normal(dims, rng)?,
                        bias: if bias { Some(Tensor::zeros(&[outputs])?) } else { None },
                        grad_w: Tensor::zeros(&[outputs, inputs])?,
                        grad_b: if bias { Some(Tensor::zeros(&[outputs])?) } else { None },
                        input: None,
                    })
                }
                LayerSpec::Conv2d { out_channels, kernel, stride, padding, .. } => {
                    Layer::Conv(Conv::new(ConvGeom::new(x, out_channels, kernel, stride, padding)?, rng)?)
                }
                LayerSpec::Relu => Layer::Relu { mask: None },
                LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNorm::new(channels)?),
                LayerSpec::ResidualAdd { from, projection } => {
                    saved[from] = true;
                    let projection = match projection {
                        Some(p) => Some(Conv::new(
                            ConvGeom::new(&shapes[from], p.out_channels, (1, 1), p.stride, Padding::Same)?,
                            rng,
                        )?),
                        None => None,
                    };
                    Layer::Residual(Residual { from, projection })
                }
                LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool { input_shape: None },
                LayerSpec::SoftmaxXentHead => Layer::Head { cache: None },
            };
            layers.push(layer);
        }
        Ok(Model { spec: spec.clone(), shapes, layers, saved })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn classes(&self) -> usize {
        self.shapes.last().map(|s| s[0]).unwrap_or(0)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        let shape = x.shape();
        if shape.len() < 2 || shape[1..] != self.shapes[0][..] {
            let mut expected = vec![0];
            expected.extend_from_slice(&self.shapes[0]);
            return Err(Error::shape("model input batch", &expected, shape));
        }
        Ok(shape[0])
    }

    pub fn forward(&mut self, x: &Tensor<T>, labels: &[usize], mode: Mode) -> Result<ForwardOutput<T>> {
        match mode {
            Mode::Train => self.forward_train(x, labels),
            Mode::Eval => self.forward_eval(x, labels),
        }
    }

    /// Train-mode pass: batch statistics, running-stat updates, and caches
    /// for [`backward`](Self::backward).
    pub fn forward_train(&mut self, x: &Tensor<T>, labels: &[usize]) -> Result<ForwardOutput<T>> {
        self.check_input(x)?;
        let mut saved: Vec<Option<Tensor<T>>> = vec![None; self.saved.len()];
        let mut a = x.clone();
        for k in 0..self.layers.len() {
            if self.saved[k] {
                saved[k] = Some(a.clone());
            }
            a = match &mut self.layers[k] {
                Layer::Dense(d) => {
                    let y = d.forward(&a)?;
                    d.input = Some(a);
                    y
                }
                Layer::Conv(c) => {
                    let y = c.forward(&a)?;
                    c.input = Some(a);
                    y
                }
                Layer::Relu { mask } => {
                    *mask = Some(a.data().iter().map(|&v| v > T::zero()).collect());
                    relu(&a)
                }
                Layer::BatchNorm(bn) => bn.forward_train(&a, k)?,
                Layer::Residual(r) => {
                    let src = saved[r.from].as_ref().expect("residual source saved");
                    let shortcut = match &mut r.projection {
                        Some(p) => {
                            let y = p.forward(src)?;
                            p.input = Some(src.clone());
                            y
                        }
                        None => src.clone(),
                    };
                    a.add(&shortcut)?
                }
                Layer::GlobalAvgPool { input_shape } => {
                    *input_shape = Some(a.shape().to_vec());
                    global_avg_pool(&a)?
                }
                Layer::Head { cache } => {
                    let (loss, probs) = softmax_xent(&a, labels)?;
                    *cache = Some(HeadCache { probs, labels: labels.to_vec(), classes: a.shape()[1] });
                    return Ok(ForwardOutput { logits: a, loss });
                }
            };
        }
        unreachable!("model spec ends with a head")
    }

    /// Eval-mode pass: running batch-norm statistics, no state change.
    pub fn forward_eval(&self, x: &Tensor<T>, labels: &[usize]) -> Result<ForwardOutput<T>> {
        let logits = self.predict(x)?;
        let (loss, _) = softmax_xent(&logits, labels)?;
        Ok(ForwardOutput { logits, loss })
    }

    /// Eval-mode logits.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut saved: Vec<Option<Tensor<T>>> = vec![None; self.saved.len()];
        let mut a = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            if self.saved[k] {
                saved[k] = Some(a.clone());
            }
            a = match layer {
                Layer::Dense(d) => d.forward(&a)?,
                Layer::Conv(c) => c.forward(&a)?,
                Layer::Relu { .. } => relu(&a),
                Layer::BatchNorm(bn) => bn.forward_eval(&a, k)?,
                Layer::Residual(r) => {
                    let src = saved[r.from].as_ref().expect("residual source saved");
                    match &r.projection {
                        Some(p) => a.add(&p.forward(src)?)?,
                        None => a.add(src)?,
                    }
                }
                Layer::GlobalAvgPool { .. } => global_avg_pool(&a)?,
                Layer::Head { .. } => return Ok(a),
            };
        }
        unreachable!("model spec ends with a head")
    }

    /// Backpropagates the mean loss; returns its gradient with respect to
    /// the model input.
    pub fn backward(&mut self) -> Result<Tensor<T>> {
        self.backward_scaled(T::one())
    }

    /// Backpropagates `loss_scale * loss` from the last train-mode forward
    /// pass. Parameter gradients are overwritten, not accumulated. The
    /// caches are consumed.
    pub fn backward_scaled(&mut self, loss_scale: T) -> Result<Tensor<T>> {
        let n = self.layers.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n + 1];
        for k in (0..n).rev() {
            let dy = grads[k + 1].take();
            let dx = match &mut self.layers[k] {
                Layer::Head { cache } => {
                    let c = cache.take().ok_or(Error::MissingCache { layer: k })?;
                    let m = c.labels.len();
                    let scale = loss_scale / T::from_usize(m);
                    let mut g = c.probs;
                    for (row, &label) in g.chunks_mut(c.classes).zip(&c.labels) {
                        row[label] -= T::one();
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    Tensor::from_vec(&[m, c.classes], g)?
                }
                layer => {
                    let dy = dy.ok_or(Error::MissingCache { layer: k })?;
                    match layer {
                        Layer::Dense(d) => d.backward(&dy, k)?,
                        Layer::Conv(c) => c.backward(&dy, k)?,
                        Layer::Relu { mask } => {
                            let mask = mask.take().ok_or(Error::MissingCache { layer: k })?;
                            let mut g = dy;
                            for (v, keep) in g.data_mut().iter_mut().zip(mask) {
                                if !keep {
                                    *v = T::zero();
                                }
                            }
                            g
                        }
                        Layer::BatchNorm(bn) => bn.backward(&dy, k)?,
                        Layer::Residual(r) => {
                            let shortcut = match &mut r.projection {
                                Some(p) => p.backward(&dy, k)?,
                                None => dy.clone(),
                            };
                            accumulate(&mut grads[r.from], shortcut)?;
                            dy
                        }
                        Layer::GlobalAvgPool { input_shape } => {
                            let shape = input_shape.take().ok_or(Error::MissingCache { layer: k })?;
                            let plane = shape[2] * shape[3];
                            let inv = T::from_usize(plane).recip();
                            let data = dy.data().iter().flat_map(|&g| core::iter::repeat_n(g * inv, plane)).collect();
                            Tensor::from_vec(&shape, data)?
                        }
                        Layer::Head { .. } => unreachable!(),
                    }
                }
            };
            accumulate(&mut grads[k], dx)?;
        }
        Ok(grads[0].take().expect("input gradient"))
    }

    /// Every trainable tensor with its gradient, in a fixed order: layers in
    /// sequence; within a layer weight before bias, scale before shift.
    pub fn params_mut(&mut self) -> Vec<ParamSlot<'_, T>> {
        let mut out = Vec::new();
        for (layer, l) in self.layers.iter_mut().enumerate() {
            match l {
                Layer::Dense(d) => {
                    out.push(ParamSlot::Weight { layer, w: &mut d.weight, grad: &d.grad_w });
                    if let (Some(b), Some(gb)) = (&mut d.bias, &d.grad_b) {
                        out.push(ParamSlot::Other { layer, kind: ParamKind::Bias, value: b, grad: gb });
                    }
                }
                Layer::Conv(c) => out.push(ParamSlot::Weight { layer, w: &mut c.weight, grad: &c.grad_w }),
                Layer::Residual(Residual { projection: Some(p), .. }) => {
                    out.push(ParamSlot::Weight { layer, w: &mut p.weight, grad: &p.grad_w })
                }
                Layer::BatchNorm(bn) => {
                    out.push(ParamSlot::Other {
                        layer,
                        kind: ParamKind::BnScale,
                        value: &mut bn.gamma,
                        grad: &bn.grad_gamma,
                    });
                    out.push(ParamSlot::Other {
                        layer,
                        kind: ParamKind::BnShift,
                        value: &mut bn.beta,
                        grad: &bn.grad_beta,
                    });
                }
                _ => {}
            }
        }
        out
    }

    /// Regularized weight matrices with their layer index.
    pub fn weights(&self) -> Vec<(usize, &WeightMatrix<T>)> {
        let mut out = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Dense(d) => out.push((k, &d.weight)),
                Layer::Conv(c) => out.push((k, &c.weight)),
                Layer::Residual(Residual { projection: Some(p), .. }) => out.push((k, &p.weight)),
                _ => {}
            }
        }
        out
    }

    /// Copies of all parameter gradients in [`params_mut`](Self::params_mut) order.
    pub fn gradients(&mut self) -> Vec<Tensor<T>> {
        self.params_mut().iter().map(|p| p.grad().clone()).collect()
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.grad().len()).sum()
    }

    /// Same parameters and running statistics in another precision. Caches
    /// are not carried over.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => Layer::Dense(Dense {
                    weight: WeightMatrix::new(d.weight.tensor().cast(), d.weight.dims()).expect("same dims"),
                    bias: d.bias.as_ref().map(Tensor::cast),
                    grad_w: d.grad_w.cast(),
                    grad_b: d.grad_b.as_ref().map(Tensor::cast),
                    input: None,
                }),
                Layer::Conv(c) => Layer::Conv(c.cast()),
                Layer::Relu { .. } => Layer::Relu { mask: None },
                Layer::BatchNorm(bn) => Layer::BatchNorm(bn.cast()),
                Layer::Residual(r) => {
                    Layer::Residual(Residual { from: r.from, projection: r.projection.as_ref().map(Conv::cast) })
                }
                Layer::GlobalAvgPool { .. } => Layer::GlobalAvgPool { input_shape: None },
                Layer::Head { .. } => Layer::Head { cache: None },
            })
            .collect();
        Model { spec: self.spec.clone(), shapes: self.shapes.clone(), layers, saved: self.saved.clone() }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.axpy(T::one(), &g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
