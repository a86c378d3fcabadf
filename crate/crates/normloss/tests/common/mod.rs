#![allow(dead_code)]

use std::path::PathBuf;

use normloss::config::ExperimentConfig;
use normloss_core::data::CifarVariant;
use normloss_core::Rng;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&config_path(name)).unwrap()
}

/// `count` records with random pixels and in-range labels.
pub fn fixture_records(seed: u64, count: usize, variant: CifarVariant) -> Vec<u8> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(count * variant.record_len());
    for _ in 0..count {
        if variant == CifarVariant::Cifar100 {
            out.push(rng.below(20) as u8);
        }
        out.push(rng.below(variant.class_count()) as u8);
        out.extend((0..3 * 32 * 32).map(|_| rng.below(256) as u8));
    }
    out
}
