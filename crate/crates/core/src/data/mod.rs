//! Datasets, device partitions and per-round subsampling.

mod idx;
mod partition;
mod synth;

pub use idx::{encode_idx_images, encode_idx_labels, load_idx_dataset, parse_idx, IdxTensor};
pub use partition::{partition_iid, partition_label_skew};
pub use synth::synth_classification;

use rand::Rng;

use crate::error::{Error, Result};

/// A labelled sample set. Features are stored row-major, `n × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Argument("dataset must contain at least one sample".into()));
        }
        if dim == 0 || classes == 0 {
            return Err(Error::Argument("dimension and class count must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Config(format!(
                "feature matrix has {} entries, expected {} x {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Argument(format!("label {bad} out of range for {classes} classes")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("features must be finite".into()));
        }
        Ok(Self {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sample dimension `u`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copies the selected rows into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, labels, self.dim, self.classes)
    }

    /// Splits off the last `count` samples.
    pub fn split_tail(&self, count: usize) -> Result<(Dataset, Dataset)> {
        if count == 0 || count >= self.len() {
            return Err(Error::Argument(format!(
                "cannot split {count} samples off a dataset of {}",
                self.len()
            )));
        }
        let head: Vec<usize> = (0..self.len() - count).collect();
        let tail: Vec<usize> = (self.len() - count..self.len()).collect();
        Ok((self.select(&head)?, self.select(&tail)?))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// How local mini-batches are drawn from a device's samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSampling {
    /// Each step draws `b` indices uniformly with replacement.
    WithReplacement,
    /// One `E * b` subsample without replacement per round, consumed in
    /// consecutive batches.
    Subsample,
}

/// The samples held by one device, as indices into the parent dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DevicePartition {
    pub device_id: usize,
    pub sample_indices: Vec<usize>,
}

impl DevicePartition {
    pub fn new(device_id: usize, sample_indices: Vec<usize>) -> Self {
        Self {
            device_id,
            sample_indices,
        }
    }

    /// `n_k`.
    pub fn len(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }

    pub fn label_set(&self, data: &Dataset) -> Vec<usize> {
        let mut labels: Vec<usize> = self.sample_indices.iter().map(|&i| data.label(i)).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }
}

/// Uniform sample of `size` distinct indices from the partition, in random
/// order. Returned values are dataset indices.
pub fn subsample<R: Rng + ?Sized>(partition: &DevicePartition, size: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = partition.len();
    if size > n {
        return Err(Error::Config(format!(
            "subsample of size {size} exceeds partition size {n} on device {}",
            partition.device_id
        )));
    }
    Ok(rand::seq::index::sample(rng, n, size)
        .into_iter()
        .map(|j| partition.sample_indices[j])
        .collect())
}
