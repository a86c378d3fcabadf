//! CIFAR binary files on disk.
//!
//! CIFAR-10 ships as `data_batch_1.bin` .. `data_batch_5.bin` (10,000
//! records each) and `test_batch.bin`; CIFAR-100 as `train.bin` (50,000
//! records) and `test.bin` (10,000). Both are looked up in the given
//! directory and in the archive's own subdirectory inside it.

use std::path::{Path, PathBuf};

use normloss_core::data::{decode_cifar, CifarVariant, Dataset, Split};
use normloss_core::{Error, Tensor};

use crate::error::{HarnessError, Result};

fn layout(variant: CifarVariant) -> (&'static str, Vec<(&'static str, usize)>, (&'static str, usize)) {
    match variant {
        CifarVariant::Cifar10 => (
            "cifar-10-batches-bin",
            (1..=5)
                .map(|i| {
                    (
                        [
                            "data_batch_1.bin",
                            "data_batch_2.bin",
                            "data_batch_3.bin",
                            "data_batch_4.bin",
                            "data_batch_5.bin",
                        ][i - 1],
                        10_000,
                    )
                })
                .collect(),
            ("test_batch.bin", 10_000),
        ),
        CifarVariant::Cifar100 => ("cifar-100-binary", vec![("train.bin", 50_000)], ("test.bin", 10_000)),
    }
}

/// Directory that actually holds the binaries: `dir` itself or the
/// archive subdirectory below it.
pub fn resolve_dir(dir: &Path, variant: CifarVariant) -> Option<PathBuf> {
    let (sub, _, (test, _)) = layout(variant);
    [dir.to_path_buf(), dir.join(sub)].into_iter().find(|d| d.join(test).is_file())
}

/// Reads one file and checks it holds exactly `records` records.
pub fn load_file(path: &Path, variant: CifarVariant, split: Split, records: Option<usize>) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    if let Some(n) = records {
        let expected = n * variant.record_len();
        if bytes.len() != expected {
            return Err(Error::CorruptFile { expected, actual: bytes.len() }.into());
        }
    }
    Ok(decode_cifar(&bytes, variant, split)?)
}

pub fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
    let mut iter = parts.into_iter();
    let Some(mut first) = iter.next() else {
        return Err(HarnessError::Config("no CIFAR files to concatenate".into()));
    };
    let sample_shape = first.sample_shape().to_vec();
    let mut data = std::mem::replace(&mut first.images, Tensor::zeros(&[1])?).into_vec();
    for part in iter {
        if part.sample_shape() != sample_shape.as_slice() || part.class_count != first.class_count {
            return Err(Error::InvalidArgument("CIFAR parts disagree in shape or classes".into()).into());
        }
        data.extend_from_slice(part.images.data());
        first.labels.extend_from_slice(&part.labels);
        if let (Some(a), Some(b)) = (first.coarse_labels.as_mut(), part.coarse_labels.as_ref()) {
            a.extend_from_slice(b);
        }
    }
    let mut shape = vec![first.labels.len()];
    shape.extend_from_slice(&sample_shape);
    first.images = Tensor::from_vec(&shape, data)?;
    Ok(first)
}

/// Loads the full train and test splits with exact record counts.
pub fn load_cifar(dir: &Path, variant: CifarVariant) -> Result<(Dataset, Dataset)> {
    let (_, train_files, (test_file, test_n)) = layout(variant);
    let root = resolve_dir(dir, variant).ok_or_else(|| {
        HarnessError::io(
            dir.join(test_file),
            std::io::Error::new(std::io::ErrorKind::NotFound, "CIFAR binaries not found"),
        )
    })?;
    let train = train_files
        .iter()
        .map(|(name, n)| load_file(&root.join(name), variant, Split::Train, Some(*n)))
        .collect::<Result<Vec<_>>>()?;
    let test = load_file(&root.join(test_file), variant, Split::Test, Some(test_n))?;
    Ok((concat(train)?, test))
}
