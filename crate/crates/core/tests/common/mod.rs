#![allow(dead_code)]

use fedsim_core::data::{partition_label_skew, synth_classification};
use fedsim_core::federation::{FederatedData, RunConfig};

/// Stand-in for label-skewed MNIST: 10 Gaussian classes in 10 dimensions, 20k
/// training samples spread over 100 devices with `n_digits` labels each.
pub const SEPARATION: f64 = 7.0;
pub const MU: f64 = 0.01;

pub fn surrogate(n_digits: usize, seed: u64) -> FederatedData {
    let all = synth_classification(22_000, 10, 10, SEPARATION, seed).unwrap();
    let (train, test) = all.split_tail(2_000).unwrap();
    let partitions = partition_label_skew(&train, 100, n_digits, None, seed).unwrap();
    FederatedData {
        train,
        test: Some(test),
        partitions,
    }
}

/// Small version for quick engine checks: 2k samples on 20 devices.
pub fn small(n_digits: usize, seed: u64) -> FederatedData {
    let all = synth_classification(2_200, 5, 5, 4.0, seed).unwrap();
    let (train, test) = all.split_tail(200).unwrap();
    let partitions = partition_label_skew(&train, 20, n_digits, None, seed).unwrap();
    FederatedData {
        train,
        test: Some(test),
        partitions,
    }
}

pub fn base_config(seed: u64) -> RunConfig {
    RunConfig {
        mu: MU,
        seed,
        ..RunConfig::default()
    }
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
