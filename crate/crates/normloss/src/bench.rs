use std::time::Instant;

use normloss_core::nn::{LayerSpec, Model, ModelSpec};
use normloss_core::optim::{sgd_step, OptimizerState};
use normloss_core::regularizers::{conv_flops, regularizer_flops, FlopCount, LayerDims};
use normloss_core::{RegKind, RegularizerConfig, Rng, Tensor};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerFlops {
    pub layer: usize,
    pub dims: LayerDims,
    pub conv_flops: u64,
    pub norm_loss_overhead: u64,
}

impl LayerFlops {
    pub fn ratio(&self) -> f64 {
        self.norm_loss_overhead as f64 / self.conv_flops as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub batch: usize,
    pub steps: usize,
    /// Median seconds per training step.
    pub median_none: f64,
    pub median_weight_decay: f64,
    pub median_norm_loss: f64,
    pub layers: Vec<LayerFlops>,
}

impl BenchReport {
    pub fn ratio_nl_wd(&self) -> f64 {
        self.median_norm_loss / self.median_weight_decay
    }

    pub fn ratio_wd_none(&self) -> f64 {
        self.median_weight_decay / self.median_none
    }

    /// Largest per-layer norm-loss overhead relative to the layer's convolution.
    pub fn max_flop_ratio(&self) -> f64 {
        self.layers.iter().map(LayerFlops::ratio).fold(0.0, f64::max)
    }

    pub fn total_flop_ratio(&self) -> f64 {
        let over: u64 = self.layers.iter().map(|l| l.norm_loss_overhead).sum();
        let conv: u64 = self.layers.iter().map(|l| l.conv_flops).sum();
        over as f64 / conv as f64
    }
}

/// Analytic norm-loss overhead of every convolution in `spec`, including
/// shortcut projections.
pub fn flop_table(spec: &ModelSpec, batch: usize) -> Result<Vec<LayerFlops>> {
    let shapes = spec.infer_shapes()?;
    let mut out = Vec::new();
    for (k, layer) in spec.layers.iter().enumerate() {
        let (dims, input) = match layer {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                (LayerDims::conv(kernel.0, kernel.1, *in_channels, *out_channels), &shapes[k])
            }
            LayerSpec::ResidualAdd { from, projection: Some(p) } => {
                (LayerDims::conv(1, 1, p.in_channels, p.out_channels), &shapes[*from])
            }
            _ => continue,
        };
        out.push(LayerFlops {
            layer: k,
            dims,
            conv_flops: conv_flops(dims, batch, input[1], input[2])?,
            norm_loss_overhead: regularizer_flops(dims, FlopCount::NormLossOverhead)?,
        });
    }
    Ok(out)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times full training steps (forward, backward, update) for no
/// regularizer, weight decay and norm loss on identical models and inputs.
/// Steps of the three kinds are interleaved, in rotating order, so that
/// machine load drifts affect all of them alike; `warmup` rounds are
/// discarded.
pub fn bench_overhead(
    spec: &ModelSpec,
    batch: usize,
    steps: usize,
    warmup: usize,
    lambda: f64,
    seed: u64,
) -> Result<BenchReport> {
    if steps == 0 || batch == 0 {
        return Err(HarnessError::Config("bench needs positive steps and batch".into()));
    }
    let classes = spec.classes()?;
    let mut rng = Rng::derive(seed, 0);
    let mut shape = vec![batch];
    shape.extend_from_slice(&spec.input_shape);
    let x = Tensor::from_vec(&shape, (0..shape.iter().product()).map(|_| rng.normal() as f32).collect())?;
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(classes)).collect();

    let base = Model::<f32>::new(spec, &mut Rng::derive(seed, 1))?;
    let kinds =
        [RegularizerConfig::none(), RegularizerConfig::weight_decay(lambda), RegularizerConfig::norm_loss(lambda)];
    let mut runs: Vec<(Model<f32>, OptimizerState<f32>, Vec<f64>)> = kinds
        .iter()
        .map(|_| Ok((base.clone(), OptimizerState::new(0.01, 0.9, false)?, Vec::with_capacity(steps))))
        .collect::<Result<_>>()?;

    for round in 0..warmup + steps {
        for j in 0..kinds.len() {
            let k = (round + j) % kinds.len();
            let (model, opt, times) = &mut runs[k];
            let t = Instant::now();
            model.forward_train(&x, &labels)?;
            model.backward()?;
            sgd_step(&mut model.params_mut(), &kinds[k], opt)?;
            let dt = t.elapsed().as_secs_f64();
            if round >= warmup {
                times.push(dt);
            }
        }
    }
    let mut medians = runs.into_iter().map(|(_, _, t)| median(t));
    debug_assert_eq!(kinds.map(|k| k.kind), [RegKind::None, RegKind::WeightDecay, RegKind::NormLoss]);
    Ok(BenchReport {
        batch,
        steps,
        median_none: medians.next().unwrap(),
        median_weight_decay: medians.next().unwrap(),
        median_norm_loss: medians.next().unwrap(),
        layers: flop_table(spec, batch)?,
    })
}
