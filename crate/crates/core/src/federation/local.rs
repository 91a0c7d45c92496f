use rand::Rng;

use super::config::{Algorithm, RunConfig};
use crate::data::{subsample, BatchSampling, Dataset, DevicePartition};
use crate::error::{Error, Result};
use crate::model::{minibatch_gradient, Batch};
use crate::privacy::{amplified_epsilon, calibrate_sigma_sq, perturb_in_place, sensitivity};
use crate::rng::{stream, Purpose};

/// SCAFFOLD control variates: the server's `c` and one `c_i` per device.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVariates {
    pub global: Vec<f64>,
    pub local: Vec<Vec<f64>>,
}

impl ControlVariates {
    pub fn zeros(devices: usize, dim: usize) -> Self {
        Self {
            global: vec![0.0; dim],
            local: vec![vec![0.0; dim]; devices],
        }
    }
}

/// What one device computes in one round, before compression.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub delta: Vec<f64>,
    /// `c_i^+ - c_i` (SCAFFOLD only).
    pub delta_c: Option<Vec<f64>>,
    pub sigma_sq: f64,
    /// Amplified per-round epsilon (private runs only).
    pub eps_prime: Option<f64>,
}

/// Everything a device needs besides its own data.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub cfg: &'a RunConfig,
    pub data: &'a Dataset,
    pub round: usize,
    pub eta: f64,
    pub batch: usize,
}

enum Batches {
    Replacement,
    Subset(Vec<usize>),
}

/// Runs the device's local solver from `x`.
///
/// Local SGD for every algorithm (`dist_sgd` is the `E = 1` case), with the
/// SCAFFOLD correction `- c_i + c` when `variates` is given. Private runs
/// clip per-sample gradients, then add Gaussian noise to the finished
/// update.
pub fn local_update(
    ctx: RoundContext<'_>,
    partition: &DevicePartition,
    x: &[f64],
    variates: Option<(&[f64], &[f64])>,
) -> Result<LocalUpdate> {
    let cfg = ctx.cfg;
    let device = partition.device_id;
    let steps = cfg.local_steps;
    let b = ctx.batch;
    let n_k = partition.len();
    if n_k == 0 {
        return Err(Error::Config(format!("device {device} holds no samples")));
    }
    let mut batch_rng = stream(cfg.seed, Purpose::Batches, ctx.round, device);
    let batches = match cfg.batch_sampling() {
        BatchSampling::WithReplacement => Batches::Replacement,
        BatchSampling::Subsample => Batches::Subset(subsample(partition, steps * b, &mut batch_rng)?),
    };
    let clip = cfg.privacy.as_ref().map(|p| p.clip);

    let mut y = x.to_vec();
    let mut drawn = vec![0usize; b];
    for t in 0..steps {
        let idx: &[usize] = match &batches {
            Batches::Replacement => {
                for slot in drawn.iter_mut() {
                    *slot = partition.sample_indices[batch_rng.gen_range(0..n_k)];
                }
                &drawn
            }
            Batches::Subset(subset) => &subset[t * b..(t + 1) * b],
        };
        let g = minibatch_gradient(&y, Batch::of(ctx.data, idx), cfg.mu, clip)?;
        match variates {
            Some((c_local, c_global)) => {
                for (((yj, gj), cl), cg) in y.iter_mut().zip(&g).zip(c_local).zip(c_global) {
                    *yj -= ctx.eta * (gj - cl + cg);
                }
            }
            None => {
                for (yj, gj) in y.iter_mut().zip(&g) {
                    *yj -= ctx.eta * gj;
                }
            }
        }
    }
    let mut delta: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();

    let mut sigma_sq = 0.0;
    let mut eps_prime = None;
    if let (Algorithm::DpFedPaq, Some(p)) = (cfg.algorithm, cfg.privacy.as_ref()) {
        let gamma = (steps * b) as f64 / n_k as f64;
        sigma_sq = match p.sigma_sq_override {
            Some(v) => v,
            None => {
                let delta_f = sensitivity(ctx.eta, steps, p.clip, b, p.sensitivity);
                calibrate_sigma_sq(delta_f, p.epsilon, p.delta, gamma)?
            }
        };
        let mut noise_rng = stream(cfg.seed, Purpose::Noise, ctx.round, device);
        perturb_in_place(&mut delta, sigma_sq, &mut noise_rng);
        eps_prime = Some(amplified_epsilon(p.epsilon, b, n_k, steps)?);
    }

    if delta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            round: ctx.round,
            device,
        });
    }

    let delta_c = variates.map(|(c_local, c_global)| {
        let scale = 1.0 / (steps as f64 * ctx.eta);
        c_local
            .iter()
            .zip(c_global)
            .zip(&delta)
            .map(|((cl, cg), d)| (cl - cg - scale * d) - cl)
            .collect()
    });

    Ok(LocalUpdate {
        delta,
        delta_c,
        sigma_sq,
        eps_prime,
    })
}
