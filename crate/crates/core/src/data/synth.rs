use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Gaussian class clusters with identity covariance.
///
/// Class `c` is centred at `separation / sqrt(2) * e_c`, so every pair of
/// class means lies exactly `separation` apart. Sample `i` has label
/// `i mod classes`, which keeps the classes balanced.
pub fn synth_classification(
    n: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::Config(format!(
            "need at least one sample per class ({n} samples, {classes} classes)"
        )));
    }
    if classes > dim {
        return Err(Error::Config(format!(
            "{classes} equidistant class means need dimension >= {classes}, got {dim}"
        )));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::Config(format!("separation must be finite and >= 0, got {separation}")));
    }
    let offset = separation / std::f64::consts::SQRT_2;
    let mut rng = stream(seed, Purpose::Synthetic, 0, 0);
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(if j == label { z + offset } else { z });
        }
        labels.push(label);
    }
    Dataset::new(features, labels, dim, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = synth_classification(50, 4, 3, 2.0, 1).unwrap();
        let b = synth_classification(50, 4, 3, 2.0, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_classification(50, 4, 3, 2.0, 2).unwrap());
    }

    #[test]
    fn class_means_are_separated() {
        let n = 30_000;
        let data = synth_classification(n, 3, 3, 4.0, 7).unwrap();
        let mut means = vec![vec![0.0; 3]; 3];
        for i in 0..n {
            for (m, x) in means[data.label(i)].iter_mut().zip(data.sample(i)) {
                *m += x / (n / 3) as f64;
            }
        }
        let dist = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };
        assert!((dist(&means[0], &means[1]) - 4.0).abs() < 0.1);
        assert!((dist(&means[1], &means[2]) - 4.0).abs() < 0.1);
    }

    #[test]
    fn validation() {
        assert!(synth_classification(2, 5, 3, 1.0, 0).is_err());
        assert!(synth_classification(10, 2, 3, 1.0, 0).is_err());
        assert!(synth_classification(10, 5, 3, -1.0, 0).is_err());
    }
}
