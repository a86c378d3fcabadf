//! Labeled image datasets, normalization, augmentation, the CIFAR binary
//! record format, and a synthetic Gaussian-blob dataset.
//!
//! CIFAR record layout: CIFAR-10 records are 3073 bytes, one label byte
//! followed by 3 x 1024 pixel bytes stored channel-planar (all red values,
//! then green, then blue, each plane row-major over 32 x 32). CIFAR-100
//! records are 3074 bytes: a coarse label byte, a fine label byte, then the
//! same pixel block. Pixels decode to `byte / 255`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `N x C x H x W` images or `N x features` vectors.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split: Split,
    /// CIFAR-100 coarse labels, kept so records re-encode exactly.
    pub coarse_labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, class_count: usize, split: Split) -> Result<Self> {
        if images.rank() < 2 || images.shape()[0] != labels.len() {
            return Err(Error::shape("dataset images", &[labels.len()], images.shape()));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::CorruptRecord { index, label, class_count });
        }
        Ok(Dataset { images, labels, class_count, split, coarse_labels: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of a single example.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let s = self.sample_len();
        &self.images.data()[i * s..(i + 1) * s]
    }

    /// Examples at `indices`, stacked into one batch.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let s = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * s);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        Ok((Tensor::from_vec(&shape, data)?, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// The first `per_class` examples of every class, in original order.
    pub fn subset_per_class(&self, per_class: usize) -> Result<Self> {
        let mut taken = vec![0usize; self.class_count];
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let c = &mut taken[self.labels[i]];
                *c += 1;
                *c <= per_class
            })
            .collect();
        if keep.is_empty() {
            return Err(Error::InvalidArgument("subset is empty".into()));
        }
        let (images, labels) = self.gather(&keep)?;
        let coarse_labels = self.coarse_labels.as_ref().map(|c| keep.iter().map(|&i| c[i]).collect());
        Ok(Dataset { images, labels, class_count: self.class_count, split: self.split, coarse_labels })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
const PIXELS: usize = CIFAR_CHANNELS * CIFAR_SIDE * CIFAR_SIDE;

impl CifarVariant {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + PIXELS
    }

    pub fn class_count(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

/// Decodes a buffer of whole CIFAR records.
pub fn decode_cifar(bytes: &[u8], variant: CifarVariant, split: Split) -> Result<Dataset> {
    let rec = variant.record_len();
    if bytes.is_empty() || !bytes.len().is_multiple_of(rec) {
        let whole = (bytes.len() / rec).max(1) * rec;
        return Err(Error::CorruptFile { expected: whole, actual: bytes.len() });
    }
    let n = bytes.len() / rec;
    let classes = variant.class_count();
    let mut labels = Vec::with_capacity(n);
    let mut coarse = Vec::new();
    let mut pixels = Vec::with_capacity(n * PIXELS);
    for (index, record) in bytes.chunks_exact(rec).enumerate() {
        let label = record[variant.label_bytes() - 1] as usize;
        if label >= classes {
            return Err(Error::CorruptRecord { index, label, class_count: classes });
        }
        if variant == CifarVariant::Cifar100 {
            coarse.push(record[0]);
        }
        labels.push(label);
        pixels.extend(record[variant.label_bytes()..].iter().map(|&b| b as f32 / 255.0));
    }
    let images = Tensor::from_vec(&[n, CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE], pixels)?;
    let mut ds = Dataset::new(images, labels, classes, split)?;
    if variant == CifarVariant::Cifar100 {
        ds.coarse_labels = Some(coarse);
    }
    Ok(ds)
}

/// Inverse of [`decode_cifar`]. Pixels are rounded to the nearest byte.
pub fn encode_cifar(ds: &Dataset, variant: CifarVariant) -> Result<Vec<u8>> {
    if ds.sample_shape() != [CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE] {
        return Err(Error::shape("cifar image", &[CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE], ds.sample_shape()));
    }
    if ds.class_count > variant.class_count() {
        return Err(Error::InvalidArgument(format!("{} classes do not fit {variant:?}", ds.class_count)));
    }
    let mut out = Vec::with_capacity(ds.len() * variant.record_len());
    for i in 0..ds.len() {
        if variant == CifarVariant::Cifar100 {
            out.push(ds.coarse_labels.as_ref().map_or(0, |c| c[i]));
        }
        out.push(ds.labels[i] as u8);
        out.extend(ds.sample(i).iter().map(|&p| Float::round(p.clamp(0.0, 1.0) * 255.0) as u8));
    }
    Ok(out)
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// `(channels, values per channel per example)`; channels are axis 1.
fn channel_layout(ds: &Dataset) -> (usize, usize) {
    let shape = ds.sample_shape();
    (shape[0], shape[1..].iter().product())
}

/// Population statistics of every channel over the whole split.
pub fn compute_norm_stats(train: &Dataset) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("cannot compute statistics of an empty split".into()));
    }
    let (c, s) = channel_layout(train);
    let count = (train.len() * s) as f64;
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    for ch in 0..c {
        let values = || (0..train.len()).flat_map(move |i| train.sample(i)[ch * s..(ch + 1) * s].iter());
        let m = values().map(|&v| v as f64).sum::<f64>() / count;
        let var = values().map(|&v| (v as f64 - m) * (v as f64 - m)).sum::<f64>() / count;
        if !(var > 0.0) {
            return Err(Error::DegenerateChannel { channel: ch });
        }
        mean[ch] = m;
        std[ch] = Float::sqrt(var);
    }
    Ok(NormStats { mean, std })
}

fn map_channels(ds: &Dataset, stats: &NormStats, f: impl Fn(f64, f64, f64) -> f64) -> Result<Dataset> {
    let (c, s) = channel_layout(ds);
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(Error::shape("normalization statistics", &[c], &[stats.mean.len()]));
    }
    let mut out = ds.clone();
    for (idx, v) in out.images.data_mut().iter_mut().enumerate() {
        let ch = (idx / s) % c;
        *v = f(*v as f64, stats.mean[ch], stats.std[ch]) as f32;
    }
    Ok(out)
}

pub fn apply_normalization(ds: &Dataset, stats: &NormStats) -> Result<Dataset> {
    map_channels(ds, stats, |v, m, s| (v - m) / s)
}

pub fn invert_normalization(ds: &Dataset, stats: &NormStats) -> Result<Dataset> {
    map_channels(ds, stats, |v, m, s| v * s + m)
}

/// Train-time augmentation: zero padding, a uniformly placed crop, and a
/// random horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPolicy {
    pub pad: usize,
    pub crop: (usize, usize),
    pub hflip_prob: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy { pad: 4, crop: (32, 32), hflip_prob: 0.5 }
    }
}

impl AugmentPolicy {
    pub fn identity(h: usize, w: usize) -> Self {
        AugmentPolicy { pad: 0, crop: (h, w), hflip_prob: 0.0 }
    }

    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.crop.0 == 0 || self.crop.1 == 0 || self.crop.0 > h + 2 * self.pad || self.crop.1 > w + 2 * self.pad {
            return Err(Error::InvalidArgument(format!(
                "crop {:?} does not fit {h}x{w} padded by {}",
                self.crop, self.pad
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::InvalidArgument(format!("flip probability {} outside [0, 1]", self.hflip_prob)));
        }
        Ok(())
    }
}

/// Crops one `C x H x W` image out of its zero-padded version. The crop's
/// top-left corner is `(oy, ox)` in padded coordinates; `flip` mirrors the
/// result horizontally.
#[allow(clippy::too_many_arguments)]
pub fn pad_crop_flip(
    img: &[f32],
    (c, h, w): (usize, usize, usize),
    pad: usize,
    (oy, ox): (usize, usize),
    (ch, cw): (usize, usize),
    flip: bool,
    out: &mut [f32],
) {
    for k in 0..c {
        for y in 0..ch {
            let sy = (oy + y).checked_sub(pad).filter(|&v| v < h);
            for x in 0..cw {
                let xx = if flip { cw - 1 - x } else { x };
                let sx = (ox + xx).checked_sub(pad).filter(|&v| v < w);
                out[(k * ch + y) * cw + x] = match (sy, sx) {
                    (Some(sy), Some(sx)) => img[(k * h + sy) * w + sx],
                    _ => 0.0,
                };
            }
        }
    }
}

/// Augments a batch of `m x C x H x W` images. Labels are unaffected.
pub fn augment(batch: &Tensor<f32>, policy: &AugmentPolicy, rng: &mut Rng) -> Result<Tensor<f32>> {
    let &[m, c, h, w] = batch.shape() else {
        return Err(Error::shape("augment batch", &[0, 0, 0, 0], batch.shape()));
    };
    policy.validate(h, w)?;
    let (ch, cw) = policy.crop;
    let mut out = vec![0.0; m * c * ch * cw];
    for (img, dst) in batch.data().chunks(c * h * w).zip(out.chunks_mut(c * ch * cw)) {
        let oy = rng.below(h + 2 * policy.pad - ch + 1);
        let ox = rng.below(w + 2 * policy.pad - cw + 1);
        let flip = rng.bernoulli(policy.hflip_prob);
        pad_crop_flip(img, (c, h, w), policy.pad, (oy, ox), (ch, cw), flip, dst);
    }
    Tensor::from_vec(&[m, c, ch, cw], out)
}

/// Center of class `c`: `+-r e_axis` with the axis cycling through the
/// dimensions, sign alternating between consecutive classes, and radius
/// `r = 2, 4, 6, ...` growing once every axis/sign pair is used.
pub fn blob_center(class: usize, dim: usize) -> Vec<f64> {
    let mut center = vec![0.0; dim];
    let axis = (class / 2) % dim;
    let radius = 2.0 * (1 + class / (2 * dim)) as f64;
    center[axis] = if class.is_multiple_of(2) { radius } else { -radius };
    center
}

/// Isotropic Gaussian clusters, `per_class` points around every
/// [`blob_center`] with standard deviation `spread`. Examples are ordered
/// by class.
pub fn synth_blobs(seed: u64, classes: usize, dim: usize, per_class: usize, spread: f64) -> Result<Dataset> {
    if classes < 2 || dim < 2 || per_class == 0 || !(spread >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "synthetic blobs need classes >= 2, dim >= 2, per_class >= 1, spread >= 0 \
             (got {classes}, {dim}, {per_class}, {spread})"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        let center = blob_center(class, dim);
        for _ in 0..per_class {
            data.extend(center.iter().map(|&c| (c + spread * rng.normal()) as f32));
            labels.push(class);
        }
    }
    let images = Tensor::from_vec(&[classes * per_class, dim], data)?;
    Dataset::new(images, labels, classes, Split::Train)
}
