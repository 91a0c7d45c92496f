//! Round-based training engine.
//!
//! Every round the coordinator schedules `M` devices, each runs its local
//! solver from the broadcast model, the updates are compressed, encoded,
//! decoded and averaged in ascending device order. Device work within a round
//! runs in parallel; since every device draws from its own keyed streams and
//! the merge order is fixed, the result matches a sequential run bit for bit.

mod config;
mod local;
mod schedule;

pub use config::{lr, Algorithm, Compression, Horizon, LrMode, PrivacyConfig, RunConfig};
pub use local::{local_update, ControlVariates, LocalUpdate, RoundContext};
pub use schedule::schedule;

use rayon::prelude::*;

use crate::compressor::{decode, dequantize, encode, identity_bit_cost, quantize};
use crate::data::{BatchSampling, Dataset, DevicePartition};
use crate::error::{Error, Result};
use crate::linalg::dist_sq;
use crate::model::{accuracy, loss_at, param_count, Batch, ModelState};
use crate::rng::{stream, Purpose};

/// Training data of a run.
#[derive(Debug, Clone)]
pub struct FederatedData {
    pub train: Dataset,
    /// Held-out set for accuracy; the training set is used when absent.
    pub test: Option<Dataset>,
    pub partitions: Vec<DevicePartition>,
}

impl FederatedData {
    pub fn dim(&self) -> usize {
        param_count(self.train.dim(), self.train.classes())
    }
}

/// Metrics after one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    /// Rounds completed, starting at 1.
    pub round: usize,
    pub iteration: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    /// `||x - x*||^2`, NaN without a reference optimum.
    pub dist_sq_to_opt: f64,
    pub bits_round: u64,
    pub bits_cumulative: u64,
    /// Mean amplified epsilon of the round's devices, NaN for non-private runs.
    pub eps_prime: f64,
    /// Mean noise variance of the round's devices.
    pub sigma_sq: f64,
}

/// `x + (eta_g / M) * sum(updates)`, summed in the given order.
pub fn aggregate(x: &[f64], updates: &[Vec<f64>], eta_g: f64, participants: usize) -> Result<Vec<f64>> {
    if updates.len() != participants {
        return Err(Error::Internal(format!(
            "expected {participants} updates, received {}",
            updates.len()
        )));
    }
    let mut sum = vec![0.0; x.len()];
    for u in updates {
        if u.len() != x.len() {
            return Err(Error::Internal(format!(
                "update of length {} for a model of length {}",
                u.len(),
                x.len()
            )));
        }
        for (s, v) in sum.iter_mut().zip(u) {
            *s += v;
        }
    }
    let scale = eta_g / participants as f64;
    Ok(x.iter().zip(&sum).map(|(xi, si)| xi + scale * si).collect())
}

struct DeviceOutcome {
    update: Vec<f64>,
    delta_c: Option<Vec<f64>>,
    bits: u64,
    sigma_sq: f64,
    eps_prime: Option<f64>,
}

/// A run in progress.
pub struct Federation<'a> {
    cfg: RunConfig,
    data: &'a FederatedData,
    reference: Option<&'a [f64]>,
    state: ModelState,
    variates: Option<ControlVariates>,
    batch: usize,
    bits_cumulative: u64,
}

impl<'a> Federation<'a> {
    /// Starts from the zero model.
    pub fn new(cfg: &RunConfig, data: &'a FederatedData, reference: Option<&'a [f64]>) -> Result<Self> {
        let cfg = cfg.normalized()?;
        if data.partitions.len() != cfg.devices {
            return Err(Error::Config(format!(
                "{} partitions for {} devices",
                data.partitions.len(),
                cfg.devices
            )));
        }
        if let Some((pos, _)) = data
            .partitions
            .iter()
            .enumerate()
            .find(|(pos, p)| p.device_id != *pos || p.is_empty())
        {
            return Err(Error::Config(format!(
                "partition {pos} is empty or out of device order"
            )));
        }
        let dim = data.dim();
        if let Some(r) = reference {
            if r.len() != dim {
                return Err(Error::Config(format!(
                    "reference optimum has {} parameters, expected {dim}",
                    r.len()
                )));
            }
        }
        let n_min = data.partitions.iter().map(DevicePartition::len).min().unwrap_or(0);
        let batch = match cfg.privacy.and_then(|p| p.gamma) {
            Some(gamma) => ((gamma * n_min as f64 / cfg.local_steps as f64).round() as usize).max(1),
            None => cfg.batch,
        };
        if cfg.batch_sampling() == BatchSampling::Subsample && cfg.local_steps * batch > n_min {
            return Err(Error::Config(format!(
                "E*b = {} exceeds the smallest partition ({n_min} samples)",
                cfg.local_steps * batch
            )));
        }
        let variates = (cfg.algorithm == Algorithm::Scaffold).then(|| ControlVariates::zeros(cfg.devices, dim));
        Ok(Self {
            cfg,
            data,
            reference,
            state: ModelState::zeros(dim),
            variates,
            batch,
            bits_cumulative: 0,
        })
    }

    pub fn with_initial(mut self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.state.dim() {
            return Err(Error::Config(format!(
                "initial model has {} parameters, expected {}",
                params.len(),
                self.state.dim()
            )));
        }
        self.state.params = params;
        Ok(self)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn variates(&self) -> Option<&ControlVariates> {
        self.variates.as_ref()
    }

    /// Mini-batch size in effect (resolved from `gamma` for private runs).
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn is_done(&self) -> bool {
        self.state.round >= self.cfg.rounds()
    }

    fn transmit(&self, delta: Vec<f64>, round: usize, device: usize) -> Result<(Vec<f64>, u64)> {
        let dim = delta.len();
        if self.cfg.algorithm == Algorithm::Scaffold {
            // model and control-variate deltas, both uncompressed
            return Ok((delta, 2 * identity_bit_cost(dim) as u64));
        }
        match self.cfg.compression {
            Compression::None => Ok((delta, identity_bit_cost(dim) as u64)),
            Compression::Qsgd(levels) => {
                let mut rng = stream(self.cfg.seed, Purpose::Quantize, round, device);
                let q = quantize(&delta, levels, &mut rng)?;
                let wire = encode(&q)?;
                let received = decode(&wire.bytes, dim, levels)?;
                Ok((dequantize(&received), wire.payload_bits as u64))
            }
        }
    }

    fn device_round(&self, device: usize, eta: f64) -> Result<DeviceOutcome> {
        let round = self.state.round;
        let ctx = RoundContext {
            cfg: &self.cfg,
            data: &self.data.train,
            round,
            eta,
            batch: self.batch,
        };
        let variates = self
            .variates
            .as_ref()
            .map(|v| (v.local[device].as_slice(), v.global.as_slice()));
        let local = local_update(ctx, &self.data.partitions[device], &self.state.params, variates)?;
        let (update, bits) = self.transmit(local.delta, round, device)?;
        Ok(DeviceOutcome {
            update,
            delta_c: local.delta_c,
            bits,
            sigma_sq: local.sigma_sq,
            eps_prime: local.eps_prime,
        })
    }

    /// Executes one round and returns its metrics.
    pub fn step(&mut self) -> Result<RoundRecord> {
        let k = self.state.round;
        let eta = lr(k, &self.cfg)?;
        let scheduled = schedule(self.cfg.devices, self.cfg.participants, k, self.cfg.seed)?;
        let outcomes: Vec<Result<DeviceOutcome>> = scheduled
            .par_iter()
            .map(|&device| self.device_round(device, eta))
            .collect();
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

        let bits_round: u64 = outcomes.iter().map(|o| o.bits).sum();
        let m = outcomes.len() as f64;
        let sigma_sq = outcomes.iter().map(|o| o.sigma_sq).sum::<f64>() / m;
        let eps_prime = if outcomes.iter().all(|o| o.eps_prime.is_some()) {
            outcomes.iter().filter_map(|o| o.eps_prime).sum::<f64>() / m
        } else {
            f64::NAN
        };

        if let Some(v) = self.variates.as_mut() {
            let scale = 1.0 / self.cfg.devices as f64;
            for (&device, o) in scheduled.iter().zip(&outcomes) {
                let dc = o.delta_c.as_ref().expect("scaffold devices report delta_c");
                for ((g, l), d) in v.global.iter_mut().zip(v.local[device].iter_mut()).zip(dc) {
                    *g += scale * d;
                    *l += d;
                }
            }
        }

        let updates: Vec<Vec<f64>> = outcomes.into_iter().map(|o| o.update).collect();
        let next = aggregate(&self.state.params, &updates, self.cfg.eta_g, self.cfg.participants)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                round: k,
                device: scheduled[0],
            });
        }
        self.state.params = next;
        self.state.round += 1;
        self.state.iteration += self.cfg.local_steps;
        self.bits_cumulative += bits_round;

        let eval = self.data.test.as_ref().unwrap_or(&self.data.train);
        Ok(RoundRecord {
            round: self.state.round,
            iteration: self.state.iteration,
            train_loss: loss_at(&self.state.params, Batch::full(&self.data.train), self.cfg.mu)?,
            test_accuracy: accuracy(&self.state.params, Batch::full(eval))?,
            dist_sq_to_opt: self
                .reference
                .map_or(f64::NAN, |r| dist_sq(&self.state.params, r)),
            bits_round,
            bits_cumulative: self.bits_cumulative,
            eps_prime,
            sigma_sq,
        })
    }

    /// Runs the remaining rounds.
    pub fn run_to_end(&mut self) -> Result<Vec<RoundRecord>> {
        let mut records = Vec::with_capacity(self.cfg.rounds().saturating_sub(self.state.round));
        while !self.is_done() {
            records.push(self.step()?);
        }
        Ok(records)
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub final_state: ModelState,
}

/// Trains for the configured number of rounds from the zero model.
pub fn run(cfg: &RunConfig, data: &FederatedData, reference: Option<&[f64]>) -> Result<RunOutput> {
    let mut fed = Federation::new(cfg, data, reference)?;
    let records = fed.run_to_end()?;
    Ok(RunOutput {
        records,
        final_state: fed.state().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_examples() {
        let x = vec![1.0, -2.0, 0.5];
        assert_eq!(aggregate(&x, &[vec![0.0; 3], vec![0.0; 3]], 1.0, 2).unwrap(), x);
        let u = vec![0.25, 4.0, -1.5];
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        assert_eq!(aggregate(&x, &[u.clone(), neg], 1.0, 2).unwrap(), x);
        assert_eq!(aggregate(&x, std::slice::from_ref(&u), 1.0, 1).unwrap(), vec![1.25, 2.0, -1.0]);
        assert!(matches!(aggregate(&x, std::slice::from_ref(&u), 1.0, 2), Err(Error::Internal(_))));
        assert!(aggregate(&x, &[vec![0.0; 2]], 1.0, 1).is_err());
    }
}
