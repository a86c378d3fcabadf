mod common;

use common::fixture_records;
use normloss::cifar::{concat, load_cifar, load_file, resolve_dir};
use normloss_core::data::{encode_cifar, CifarVariant, Split};

#[test]
fn fixture_file_round_trips_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    for variant in [CifarVariant::Cifar10, CifarVariant::Cifar100] {
        let bytes = fixture_records(5, 12, variant);
        let path = dir.path().join("fixture.bin");
        std::fs::write(&path, &bytes).unwrap();
        let ds = load_file(&path, variant, Split::Train, Some(12)).unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.sample_shape(), &[3, 32, 32]);
        assert!(ds.labels.iter().all(|&l| l < variant.class_count()));
        assert_eq!(encode_cifar(&ds, variant).unwrap(), bytes);
    }
}

#[test]
fn wrong_record_count_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.bin");
    std::fs::write(&path, fixture_records(1, 3, CifarVariant::Cifar10)).unwrap();
    let err = load_file(&path, CifarVariant::Cifar10, Split::Test, Some(4)).unwrap_err();
    assert_eq!(err.category(), "corrupt-file");
    std::fs::write(&path, &fixture_records(1, 3, CifarVariant::Cifar10)[..3073 * 2 + 100]).unwrap();
    let err = load_file(&path, CifarVariant::Cifar10, Split::Test, None).unwrap_err();
    assert_eq!(err.category(), "corrupt-file");
}

#[test]
fn missing_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(resolve_dir(dir.path(), CifarVariant::Cifar10).is_none());
    let err = load_cifar(dir.path(), CifarVariant::Cifar10).unwrap_err();
    assert_eq!(err.category(), "io");
}

#[test]
fn archive_subdirectory_is_found() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("cifar-100-binary");
    std::fs::create_dir(&sub).unwrap();
    std::fs::write(sub.join("test.bin"), fixture_records(2, 1, CifarVariant::Cifar100)).unwrap();
    assert_eq!(resolve_dir(dir.path(), CifarVariant::Cifar100), Some(sub));
    // train.bin is missing.
    assert_eq!(load_cifar(dir.path(), CifarVariant::Cifar100).unwrap_err().category(), "io");
}

#[test]
fn concatenation_keeps_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut parts = Vec::new();
    let mut all = Vec::new();
    for seed in 0..3 {
        let bytes = fixture_records(seed, 4, CifarVariant::Cifar10);
        let path = dir.path().join(format!("part{seed}.bin"));
        std::fs::write(&path, &bytes).unwrap();
        parts.push(load_file(&path, CifarVariant::Cifar10, Split::Train, Some(4)).unwrap());
        all.extend(bytes);
    }
    let joined = concat(parts).unwrap();
    assert_eq!(joined.len(), 12);
    assert_eq!(encode_cifar(&joined, CifarVariant::Cifar10).unwrap(), all);
}
