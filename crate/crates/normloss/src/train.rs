use std::sync::mpsc;
use std::time::Instant;

use normloss_core::data::{
    apply_normalization, augment, compute_norm_stats, synth_blobs, AugmentPolicy, CifarVariant, Dataset,
};
use normloss_core::nn::Model;
use normloss_core::optim::{apply_projection_if_due, sgd_step, OptimizerState};
use normloss_core::regularizers::oblique_residual;
use normloss_core::{Error, RegKind, Rng, Tensor, WeightMatrix};

use crate::cifar::load_cifar;
use crate::config::{DataSource, ExperimentConfig};
use crate::error::{HarnessError, Result};

// Independent random streams derived from the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_TRAIN_DATA: u64 = 1;
const STREAM_TEST_DATA: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_AUGMENT: u64 = 4;

const EVAL_BATCH: usize = 500;

/// Stream `tag`, item `index` of the run seeded with `seed`.
pub fn sub_rng(seed: u64, tag: u64, index: u64) -> Rng {
    Rng::derive(Rng::derive(seed, tag).next_u64(), index)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based count of optimizer steps taken so far.
    pub step: u64,
    pub epoch: u32,
    pub lr: f64,
    pub train_xent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormStats {
    pub layer: usize,
    pub rows: usize,
    pub norm_mean: f64,
    pub norm_min: f64,
    pub norm_max: f64,
    /// Mean of `|row norm - 1|`.
    pub mean_abs_dev: f64,
    pub oblique_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f64,
    /// Mean training cross-entropy over the epoch's steps.
    pub train_xent: f64,
    /// Percent of misclassified test examples.
    pub test_error: f64,
    pub layers: Vec<LayerNormStats>,
    /// `|row norm - 1|` averaged over the rows of every weight layer.
    pub mean_abs_norm_dev: f64,
    pub wall_seconds: f64,
}

impl EpochRecord {
    pub fn test_accuracy(&self) -> f64 {
        100.0 - self.test_error
    }

    pub fn max_oblique_residual(&self) -> f64 {
        self.layers.iter().map(|l| l.oblique_residual).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub epoch: u32,
    pub step: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub kind: RegKind,
    pub lambda: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub param_count: usize,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Set when the run stopped on a non-finite loss or gradient. `steps`
    /// and `epochs` then end at the last good step and epoch.
    pub divergence: Option<Divergence>,
}

impl TrainReport {
    pub fn final_epoch(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn final_test_error(&self) -> Option<f64> {
        self.final_epoch().map(|e| e.test_error)
    }

    pub fn final_mean_norm_deviation(&self) -> Option<f64> {
        self.final_epoch().map(|e| e.mean_abs_norm_dev)
    }

    pub fn wall_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.wall_seconds).sum()
    }
}

/// Loads (or synthesizes) the train and test splits, applying subsets and
/// normalization.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.data;
    let (mut train, mut test) = match d.source {
        DataSource::Blobs => {
            let make = |tag, per_class| -> Result<Dataset> {
                let seed = Rng::derive(cfg.seed, tag).next_u64();
                let mut ds = synth_blobs(seed, d.classes, d.dim, per_class, d.spread)?;
                if let Some(shape) = &d.shape {
                    let mut full = vec![ds.len()];
                    full.extend_from_slice(shape);
                    ds.images = ds.images.reshape(&full)?;
                }
                Ok(ds)
            };
            let mut test = make(STREAM_TEST_DATA, d.test_per_class)?;
            test.split = normloss_core::data::Split::Test;
            (make(STREAM_TRAIN_DATA, d.train_per_class)?, test)
        }
        DataSource::Cifar10 | DataSource::Cifar100 => {
            let variant = if d.source == DataSource::Cifar10 { CifarVariant::Cifar10 } else { CifarVariant::Cifar100 };
            let path = d.path.as_ref().ok_or_else(|| HarnessError::Config("CIFAR sources need data.path".into()))?;
            load_cifar(path, variant)?
        }
    };
    if let Some(n) = d.subset_per_class {
        train = train.subset_per_class(n)?;
    }
    if let Some(n) = d.test_subset_per_class {
        test = test.subset_per_class(n)?;
    }
    if d.normalize {
        let stats = compute_norm_stats(&train)?;
        train = apply_normalization(&train, &stats)?;
        test = apply_normalization(&test, &stats)?;
    }
    Ok((train, test))
}

/// Minibatch index lists for one epoch. The final partial batch is kept;
/// with batch norm a trailing single example joins the previous batch.
pub fn epoch_batches(seed: u64, epoch: u32, n: usize, batch_size: usize, batch_norm: bool) -> Vec<Vec<usize>> {
    let perm = sub_rng(seed, STREAM_SHUFFLE, epoch as u64).permutation(n);
    let mut batches: Vec<Vec<usize>> = perm.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batch_norm && batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

struct Batch {
    x: Tensor<f32>,
    labels: Vec<usize>,
}

fn make_batch(ds: &Dataset, idx: &[usize], policy: Option<&AugmentPolicy>, rng: Rng) -> Result<Batch> {
    let (mut x, labels) = ds.gather(idx)?;
    if let Some(policy) = policy {
        x = augment(&x, policy, &mut { rng })?;
    }
    Ok(Batch { x, labels })
}

/// Percent of misclassified examples; eval-mode batch norm, no augmentation.
pub fn evaluate(model: &Model<f32>, ds: &Dataset) -> Result<f64> {
    let mut wrong = 0usize;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, labels) = ds.gather(chunk)?;
        let logits = model.predict(&x)?;
        let (_, k) = logits.dims2()?;
        for (row, &label) in logits.data().chunks(k).zip(&labels) {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
            if best.1.is_nan() || best.0 != label || row.iter().any(|v| v.is_nan()) {
                wrong += 1;
            }
        }
    }
    Ok(100.0 * wrong as f64 / ds.len().max(1) as f64)
}

pub fn layer_norm_stats(layer: usize, w: &WeightMatrix<f32>) -> LayerNormStats {
    let wide = WeightMatrix::new(w.tensor().cast::<f64>(), w.dims()).expect("same shape");
    let norms = wide.tensor().row_l2_norms().expect("rank 2");
    let n = norms.data();
    let rows = n.len();
    LayerNormStats {
        layer,
        rows,
        norm_mean: n.iter().sum::<f64>() / rows as f64,
        norm_min: n.iter().copied().fold(f64::INFINITY, f64::min),
        norm_max: n.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_abs_dev: n.iter().map(|v| (v - 1.0).abs()).sum::<f64>() / rows as f64,
        oblique_residual: oblique_residual(&wide),
    }
}

pub fn model_norm_stats(model: &Model<f32>) -> (Vec<LayerNormStats>, f64) {
    let layers: Vec<LayerNormStats> = model.weights().into_iter().map(|(l, w)| layer_norm_stats(l, w)).collect();
    let rows: usize = layers.iter().map(|l| l.rows).sum();
    let dev = layers.iter().map(|l| l.mean_abs_dev * l.rows as f64).sum::<f64>() / rows.max(1) as f64;
    (layers, dev)
}

enum StepOutcome {
    Ok(f64),
    Diverged(String),
}

fn train_step(
    model: &mut Model<f32>,
    batch: &Batch,
    reg: &normloss_core::RegularizerConfig,
    opt: &mut OptimizerState<f32>,
) -> Result<StepOutcome> {
    let out = model.forward_train(&batch.x, &batch.labels)?;
    let loss = out.loss as f64;
    if !loss.is_finite() {
        return Ok(StepOutcome::Diverged(format!("non-finite training loss {loss}")));
    }
    model.backward()?;
    let mut slots = model.params_mut();
    match sgd_step(&mut slots, reg, opt) {
        Ok(()) => {}
        Err(Error::NonFiniteGradient { layer }) => {
            return Ok(StepOutcome::Diverged(format!("non-finite gradient in layer {layer}")));
        }
        Err(e) => return Err(e.into()),
    }
    apply_projection_if_due(&mut slots, reg, opt.step_counter())?;
    Ok(StepOutcome::Ok(loss))
}

/// Trains `cfg` on its data. `threads > 1` prepares the next minibatch on a
/// second thread; every batch draws from its own sub-seed, so the result
/// does not depend on `threads`.
pub fn train(cfg: &ExperimentConfig, threads: usize) -> Result<TrainReport> {
    cfg.validate()?;
    let (train_ds, test_ds) = load_data(cfg)?;
    train_on(cfg, &train_ds, &test_ds, threads)
}

pub fn train_on(cfg: &ExperimentConfig, train_ds: &Dataset, test_ds: &Dataset, threads: usize) -> Result<TrainReport> {
    cfg.validate()?;
    let spec = cfg.model_spec()?;
    if train_ds.sample_shape() != spec.input_shape.as_slice() {
        return Err(Error::InvalidShape {
            context: "training examples",
            expected: spec.input_shape.clone(),
            actual: train_ds.sample_shape().to_vec(),
        }
        .into());
    }
    let reg = cfg.regularizer();
    let schedule = cfg.schedule()?;
    let policy = cfg.data.augment.map(AugmentPolicy::from);
    let batch_norm = spec.has_batch_norm();

    let mut model = Model::<f32>::new(&spec, &mut sub_rng(cfg.seed, STREAM_INIT, 0))?;
    let mut opt = OptimizerState::<f32>::new(cfg.optimizer.lr, cfg.optimizer.momentum, cfg.optimizer.nesterov)?;
    let mut report = TrainReport {
        kind: reg.kind,
        lambda: reg.lambda,
        seed: cfg.seed,
        batch_size: cfg.batch_size,
        param_count: model.param_count(),
        steps: Vec::new(),
        epochs: Vec::new(),
        divergence: None,
    };

    let mut batch_counter = 0u64;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = schedule.lr_at(epoch);
        opt.set_eta(lr)?;
        let batches = epoch_batches(cfg.seed, epoch, train_ds.len(), cfg.batch_size, batch_norm);
        let first_batch = batch_counter;
        batch_counter += batches.len() as u64;
        let batch_rng = |b: usize| sub_rng(cfg.seed, STREAM_AUGMENT, first_batch + b as u64);

        let mut losses = Vec::with_capacity(batches.len());
        let mut diverged = None;
        let mut run = |batch: Batch| -> Result<bool> {
            match train_step(&mut model, &batch, &reg, &mut opt)? {
                StepOutcome::Ok(loss) => {
                    losses.push(loss);
                    report.steps.push(StepRecord { step: opt.step_counter(), epoch, lr, train_xent: loss });
                    Ok(true)
                }
                StepOutcome::Diverged(reason) => {
                    diverged = Some(reason);
                    Ok(false)
                }
            }
        };

        if threads > 1 {
            std::thread::scope(|s| -> Result<()> {
                let (tx, rx) = mpsc::sync_channel::<Result<Batch>>(2);
                let batches = &batches;
                s.spawn(move || {
                    for (b, idx) in batches.iter().enumerate() {
                        if tx.send(make_batch(train_ds, idx, policy.as_ref(), batch_rng(b))).is_err() {
                            break;
                        }
                    }
                });
                for batch in rx {
                    if !run(batch?)? {
                        break;
                    }
                }
                Ok(())
            })?;
        } else {
            for (b, idx) in batches.iter().enumerate() {
                if !run(make_batch(train_ds, idx, policy.as_ref(), batch_rng(b))?)? {
                    break;
                }
            }
        }

        let (layers, dev) = model_norm_stats(&model);
        if diverged.is_none() && !layers.iter().all(|l| l.norm_mean.is_finite()) {
            diverged = Some("non-finite weights".into());
        }
        if let Some(reason) = diverged {
            let step = opt.step_counter() + 1;
            report.divergence = Some(Divergence { epoch, step, reason: reason.clone() });
            return Err(HarnessError::Diverged { epoch, step, reason, report: Box::new(report) });
        }
        let test_error = evaluate(&model, test_ds)?;
        report.epochs.push(EpochRecord {
            epoch,
            lr,
            train_xent: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
            test_error,
            layers,
            mean_abs_norm_dev: dev,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(report)
}

/// Unwraps a diverged run into its truncated report.
pub fn report_or_diverged(result: Result<TrainReport>) -> Result<TrainReport> {
    match result {
        Err(HarnessError::Diverged { report, .. }) => Ok(*report),
        other => other,
    }
}
