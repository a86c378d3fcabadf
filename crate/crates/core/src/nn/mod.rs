//! Feed-forward networks with hand-written backpropagation.
//!
//! A model is an ordered list of layers. Activation `0` is the model input
//! and activation `k + 1` is the output of layer `k`; a residual layer adds
//! an earlier activation (optionally through a strided 1x1 projection) to
//! its input. The last layer is always the softmax cross-entropy head.

mod batchnorm;
mod conv;
mod model;

use alloc::vec;
use alloc::vec::Vec;

pub use batchnorm::BatchNorm;
pub use conv::{conv2d_backward, conv2d_forward, ConvGeom, Padding};
pub use model::{ForwardOutput, Layer, Model, ParamKind, ParamSlot};

use crate::error::{Error, Result};
use crate::regularizers::LayerDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// 1x1 convolution applied on a residual shortcut when the block changes
/// channel count or resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Projection {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum LayerSpec {
    /// Fully connected; any input shape is flattened to `inputs` features.
    Dense {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
    },
    Relu,
    BatchNorm {
        channels: usize,
    },
    /// Adds activation `from` to the layer input.
    ResidualAdd {
        from: usize,
        projection: Option<Projection>,
    },
    GlobalAvgPool,
    SoftmaxXentHead,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::ResidualAdd { .. } => "residual_add",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::SoftmaxXentHead => "softmax_xent_head",
        }
    }

    pub fn conv3x3(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        LayerSpec::Conv2d { in_channels, out_channels, kernel: (3, 3), stride, padding: Padding::Same }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    /// Shape of one example: `[C, H, W]` or `[features]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// `(from, to)` activation pairs joined by residual layers: layer `k`
    /// adds activation `from` into activation `k + 1`.
    pub fn skip_connections(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(k, l)| match l {
                LayerSpec::ResidualAdd { from, .. } => Some((*from, k + 1)),
                _ => None,
            })
            .collect()
    }

    /// Per-example shape of every activation, input first. Fails on the
    /// first layer whose input does not fit.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::shape("model input", &[], &self.input_shape));
        }
        match self.layers.last() {
            Some(LayerSpec::SoftmaxXentHead) => {}
            _ => return Err(Error::InvalidArgument("model must end with a softmax_xent_head layer".into())),
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (k, layer) in self.layers.iter().enumerate() {
            let x = &shapes[k];
            let next = match *layer {
                LayerSpec::Dense { inputs, outputs, .. } => {
                    let fan_in: usize = x.iter().product();
                    if fan_in != inputs || outputs == 0 {
                        return Err(Error::shape("dense input", &[inputs], x));
                    }
                    vec![outputs]
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                    if x.first() != Some(&in_channels) {
                        return Err(Error::shape("conv2d input channels", &[in_channels], x));
                    }
                    ConvGeom::new(x, out_channels, kernel, stride, padding)?.out_shape().to_vec()
                }
                LayerSpec::Relu => x.clone(),
                LayerSpec::BatchNorm { channels } => {
                    if x.first() != Some(&channels) {
                        return Err(Error::shape("batch norm channels", &[channels], x));
                    }
                    x.clone()
                }
                LayerSpec::ResidualAdd { from, projection } => {
                    if from > k {
                        return Err(Error::InvalidArgument(alloc::format!(
                            "residual layer {k} refers to later activation {from}"
                        )));
                    }
                    let src = &shapes[from];
                    let shortcut = match projection {
                        None => src.clone(),
                        Some(p) => {
                            if src.first() != Some(&p.in_channels) {
                                return Err(Error::shape("residual projection input", &[p.in_channels], src));
                            }
                            ConvGeom::new(src, p.out_channels, (1, 1), p.stride, Padding::Same)?.out_shape().to_vec()
                        }
                    };
                    if &shortcut != x {
                        return Err(Error::shape("residual shortcut", x, &shortcut));
                    }
                    x.clone()
                }
                LayerSpec::GlobalAvgPool => match x[..] {
                    [c, _, _] => vec![c],
                    _ => return Err(Error::shape("global average pool input", &[0, 0, 0], x)),
                },
                LayerSpec::SoftmaxXentHead => {
                    if k + 1 != self.layers.len() || x.len() != 1 || x[0] < 2 {
                        return Err(Error::shape("softmax head (last layer, >= 2 classes)", &[0], x));
                    }
                    x.clone()
                }
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn classes(&self) -> Result<usize> {
        Ok(self.infer_shapes()?.last().map(|s| s[0]).unwrap_or(0))
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::BatchNorm { .. }))
    }

    /// Kernel extents of every regularized weight matrix, in parameter order.
    pub fn weight_dims(&self) -> Vec<LayerDims> {
        let mut out = Vec::new();
        for l in &self.layers {
            match *l {
                LayerSpec::Dense { inputs, outputs, .. } => out.push(LayerDims::dense(inputs, outputs)),
                LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                    out.push(LayerDims::conv(kernel.0, kernel.1, in_channels, out_channels))
                }
                LayerSpec::ResidualAdd { projection: Some(p), .. } => {
                    out.push(LayerDims::conv(1, 1, p.in_channels, p.out_channels))
                }
                _ => {}
            }
        }
        out
    }

    /// Softmax regression.
    pub fn linear(features: usize, classes: usize) -> Self {
        ModelSpec {
            input_shape: vec![features],
            layers: vec![
                LayerSpec::Dense { inputs: features, outputs: classes, bias: true },
                LayerSpec::SoftmaxXentHead,
            ],
        }
    }

    /// One hidden layer with batch norm, then a linear head.
    pub fn mlp_bn(features: usize, hidden: usize, classes: usize) -> Self {
        ModelSpec {
            input_shape: vec![features],
            layers: vec![
                LayerSpec::Dense { inputs: features, outputs: hidden, bias: false },
                LayerSpec::BatchNorm { channels: hidden },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: hidden, outputs: classes, bias: true },
                LayerSpec::SoftmaxXentHead,
            ],
        }
    }

    /// Small residual network: a 3x3 stem with `width` channels, two basic
    /// blocks at `width`, two at `2 * width` (the first one strided), global
    /// average pooling and a dense head.
    pub fn mini_resnet(input_shape: [usize; 3], width: usize, classes: usize) -> Self {
        let mut layers = vec![
            LayerSpec::conv3x3(input_shape[0], width, 1),
            LayerSpec::BatchNorm { channels: width },
            LayerSpec::Relu,
        ];
        let mut channels = width;
        for (out, stride) in [(width, 1), (width, 1), (2 * width, 2), (2 * width, 1)] {
            basic_block(&mut layers, channels, out, stride);
            channels = out;
        }
        layers.push(LayerSpec::GlobalAvgPool);
        layers.push(LayerSpec::Dense { inputs: channels, outputs: classes, bias: true });
        layers.push(LayerSpec::SoftmaxXentHead);
        ModelSpec { input_shape: input_shape.to_vec(), layers }
    }
}

/// conv-bn-relu-conv-bn, shortcut add, relu.
fn basic_block(layers: &mut Vec<LayerSpec>, in_c: usize, out_c: usize, stride: usize) {
    let block_input = layers.len();
    let projection =
        (in_c != out_c || stride != 1).then_some(Projection { in_channels: in_c, out_channels: out_c, stride });
    layers.extend([
        LayerSpec::conv3x3(in_c, out_c, stride),
        LayerSpec::BatchNorm { channels: out_c },
        LayerSpec::Relu,
        LayerSpec::conv3x3(out_c, out_c, 1),
        LayerSpec::BatchNorm { channels: out_c },
        LayerSpec::ResidualAdd { from: block_input, projection },
        LayerSpec::Relu,
    ]);
}
