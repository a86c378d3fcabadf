use normloss_core::data::{
    apply_normalization, augment, blob_center, compute_norm_stats, decode_cifar, encode_cifar, invert_normalization,
    synth_blobs, AugmentPolicy, CifarVariant, Split,
};
use normloss_core::{Error, Rng, Tensor};
use proptest::prelude::*;

const RECORD_PIXELS: usize = 3 * 32 * 32;

fn records(variant: CifarVariant) -> impl Strategy<Value = Vec<u8>> {
    let classes = variant.class_count() as u8;
    let one =
        (0u8..20, 0..classes, prop::collection::vec(any::<u8>(), RECORD_PIXELS)).prop_map(move |(coarse, fine, px)| {
            let mut r = Vec::with_capacity(variant.record_len());
            if variant == CifarVariant::Cifar100 {
                r.push(coarse);
            }
            r.push(fine);
            r.extend(px);
            r
        });
    prop::collection::vec(one, 1..4).prop_map(|rs| rs.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cifar10_round_trip_is_byte_identical(bytes in records(CifarVariant::Cifar10)) {
        let ds = decode_cifar(&bytes, CifarVariant::Cifar10, Split::Train).unwrap();
        prop_assert_eq!(ds.len(), bytes.len() / 3073);
        prop_assert!(ds.labels.iter().all(|&l| l < 10));
        prop_assert_eq!(encode_cifar(&ds, CifarVariant::Cifar10).unwrap(), bytes);
    }

    #[test]
    fn cifar100_round_trip_is_byte_identical(bytes in records(CifarVariant::Cifar100)) {
        let ds = decode_cifar(&bytes, CifarVariant::Cifar100, Split::Test).unwrap();
        prop_assert_eq!(encode_cifar(&ds, CifarVariant::Cifar100).unwrap(), bytes);
    }

    #[test]
    fn truncated_files_are_rejected(bytes in records(CifarVariant::Cifar10), cut in 1usize..3072) {
        let short = &bytes[..bytes.len() - cut];
        let err = decode_cifar(short, CifarVariant::Cifar10, Split::Train).unwrap_err();
        prop_assert!(
            matches!(err, Error::CorruptFile { .. }),
            "unexpected error {:?}",
            err
        );
    }

    #[test]
    fn augmentation_keeps_shape_and_content(seed in any::<u64>(), m in 1usize..4, pad in 0usize..5) {
        let mut rng = Rng::new(seed);
        let data: Vec<f32> = (0..m * 3 * 8 * 8).map(|_| rng.uniform() as f32 + 0.5).collect();
        let batch = Tensor::from_vec(&[m, 3, 8, 8], data).unwrap();
        let policy = AugmentPolicy { pad, crop: (8, 8), hflip_prob: 0.5 };
        let out = augment(&batch, &policy, &mut rng).unwrap();
        prop_assert_eq!(out.shape(), batch.shape());
        // Every output pixel is either padding or copied from the same image.
        for (src, dst) in batch.data().chunks(192).zip(out.data().chunks(192)) {
            prop_assert!(dst.iter().all(|v| *v == 0.0 || src.contains(v)));
        }
        let identity = augment(&batch, &AugmentPolicy::identity(8, 8), &mut rng).unwrap();
        prop_assert_eq!(identity, batch);
    }

    #[test]
    fn normalization_is_invertible(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let data: Vec<f32> = (0..6 * 3 * 4 * 4).map(|_| rng.uniform() as f32).collect();
        let images = Tensor::from_vec(&[6, 3, 4, 4], data).unwrap();
        let ds = normloss_core::data::Dataset::new(images, vec![0, 1, 0, 1, 0, 1], 2, Split::Train).unwrap();
        let stats = compute_norm_stats(&ds).unwrap();
        let normalized = apply_normalization(&ds, &stats).unwrap();
        let renorm = compute_norm_stats(&normalized).unwrap();
        for (m, s) in renorm.mean.iter().zip(&renorm.std) {
            prop_assert!(m.abs() < 1e-5 && (s - 1.0).abs() < 1e-5);
        }
        let back = invert_normalization(&normalized, &stats).unwrap();
        for (a, b) in back.images.data().iter().zip(ds.images.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
        prop_assert_eq!(back.labels, ds.labels);
    }
}

#[test]
fn blobs_are_separable_by_nearest_center() {
    let ds = synth_blobs(3, 4, 2, 500, 0.5).unwrap();
    let centers: Vec<Vec<f64>> = (0..4).map(|c| blob_center(c, 2)).collect();
    let correct = (0..ds.len())
        .filter(|&i| {
            let x = ds.sample(i);
            let dist = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - *b as f64).powi(2)).sum::<f64>();
            let best = (0..4).min_by(|&a, &b| dist(&centers[a]).total_cmp(&dist(&centers[b]))).unwrap();
            best == ds.labels[i]
        })
        .count();
    assert!(correct as f64 / ds.len() as f64 >= 0.99);
}

#[test]
fn blobs_are_deterministic_per_seed() {
    assert_eq!(synth_blobs(9, 2, 4, 10, 1.0).unwrap(), synth_blobs(9, 2, 4, 10, 1.0).unwrap());
    assert_ne!(synth_blobs(9, 2, 4, 10, 1.0).unwrap(), synth_blobs(10, 2, 4, 10, 1.0).unwrap());
}
