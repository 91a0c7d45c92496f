use std::fmt;
use std::str::FromStr;

use crate::data::BatchSampling;
use crate::error::{Error, Result};
use crate::privacy::SensitivityMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    DistSgd,
    FedAvg,
    FedPaq,
    DpFedPaq,
    Scaffold,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dist_sgd" => Algorithm::DistSgd,
            "fedavg" => Algorithm::FedAvg,
            "fedpaq" => Algorithm::FedPaq,
            "dp_fedpaq" => Algorithm::DpFedPaq,
            "scaffold" => Algorithm::Scaffold,
            other => return Err(Error::Config(format!("unknown algorithm '{other}'"))),
        })
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::DistSgd => "dist_sgd",
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedPaq => "fedpaq",
            Algorithm::DpFedPaq => "dp_fedpaq",
            Algorithm::Scaffold => "scaffold",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrMode {
    /// `eta0 / (1 + kE/100)`.
    Experimental,
    /// `4 / (mu (kE + 4E))`.
    Theoretical,
}

impl FromStr for LrMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "experimental" => Ok(LrMode::Experimental),
            "theoretical" => Ok(LrMode::Theoretical),
            other => Err(Error::Config(format!("unknown learning-rate mode '{other}'"))),
        }
    }
}

/// Training length, given either in rounds or in local iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Rounds(usize),
    Iterations(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compression {
    None,
    Qsgd(u32),
}

impl FromStr for Compression {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(Compression::None);
        }
        match s.parse::<u32>() {
            Ok(levels) if levels >= 1 => Ok(Compression::Qsgd(levels)),
            _ => Err(Error::Config(format!(
                "quantization level must be a positive integer or 'none', got '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub clip: f64,
    pub sensitivity: SensitivityMode,
    /// Target subsampling ratio. When set, the batch size becomes
    /// `round(gamma * n_min / E)` with `n_min` the smallest partition.
    pub gamma: Option<f64>,
    /// Replaces the calibrated noise variance. Meant for degenerate-case
    /// checks such as `sigma_sq = 0`.
    pub sigma_sq_override: Option<f64>,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            delta: 1e-4,
            clip: 1.0,
            sensitivity: SensitivityMode::Derived,
            gamma: Some(0.2),
            sigma_sq_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub devices: usize,
    pub participants: usize,
    pub local_steps: usize,
    pub horizon: Horizon,
    pub batch: usize,
    pub compression: Compression,
    pub eta0: f64,
    pub lr_mode: LrMode,
    pub mu: f64,
    pub privacy: Option<PrivacyConfig>,
    pub eta_g: f64,
    pub seed: u64,
    /// Overrides the algorithm's default mini-batch sampling.
    pub sampling: Option<BatchSampling>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::FedPaq,
            devices: 100,
            participants: 10,
            local_steps: 10,
            horizon: Horizon::Rounds(100),
            batch: 10,
            compression: Compression::Qsgd(10),
            eta0: 0.1,
            lr_mode: LrMode::Experimental,
            mu: 0.01,
            privacy: None,
            eta_g: 1.0,
            seed: 0,
            sampling: None,
        }
    }
}

impl RunConfig {
    /// Applies the constraints each algorithm imposes and validates the
    /// result.
    ///
    /// * `dist_sgd`: one local step, full participation, no compression.
    /// * `fedavg`, `scaffold`: no compression.
    /// * only `dp_fedpaq` is private, and it always uses `eta_g = 1`.
    pub fn normalized(&self) -> Result<RunConfig> {
        let mut cfg = self.clone();
        match cfg.algorithm {
            Algorithm::DistSgd => {
                cfg.local_steps = 1;
                cfg.participants = cfg.devices;
                cfg.compression = Compression::None;
                cfg.privacy = None;
            }
            Algorithm::FedAvg | Algorithm::Scaffold => {
                cfg.compression = Compression::None;
                cfg.privacy = None;
            }
            Algorithm::FedPaq => cfg.privacy = None,
            Algorithm::DpFedPaq => {
                if cfg.privacy.is_none() {
                    return Err(Error::Config("dp_fedpaq needs privacy parameters".into()));
                }
                cfg.eta_g = 1.0;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.devices == 0 {
            return fail("device count must be at least 1".into());
        }
        if self.participants == 0 || self.participants > self.devices {
            return fail(format!(
                "participants per round must lie in [1, {}], got {}",
                self.devices, self.participants
            ));
        }
        if self.local_steps == 0 {
            return fail("local steps must be at least 1".into());
        }
        if self.batch == 0 {
            return fail("batch size must be at least 1".into());
        }
        if !(self.eta0 > 0.0) || !(self.eta_g > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if !(self.mu >= 0.0) {
            return fail(format!("regularization must be nonnegative, got {}", self.mu));
        }
        if self.lr_mode == LrMode::Theoretical && !(self.mu > 0.0) {
            return fail("theoretical learning rate needs mu > 0".into());
        }
        if let Some(p) = &self.privacy {
            if !(p.epsilon > 0.0) || !(p.delta > 0.0 && p.delta < 1.0) || !(p.clip > 0.0) {
                return fail(format!("invalid privacy parameters {p:?}"));
            }
            if let Some(g) = p.gamma {
                if !(g > 0.0 && g <= 1.0) {
                    return fail(format!("gamma must lie in (0, 1], got {g}"));
                }
            }
            if let SensitivityMode::Fixed(v) = p.sensitivity {
                if !(v > 0.0) {
                    return fail(format!("sensitivity must be positive, got {v}"));
                }
            }
        }
        Ok(())
    }

    /// Number of rounds `K`.
    pub fn rounds(&self) -> usize {
        match self.horizon {
            Horizon::Rounds(k) => k,
            Horizon::Iterations(t) => t / self.local_steps,
        }
    }

    /// Total local iterations `T`.
    pub fn iterations(&self) -> usize {
        match self.horizon {
            Horizon::Rounds(k) => k * self.local_steps,
            Horizon::Iterations(t) => t,
        }
    }

    pub fn batch_sampling(&self) -> BatchSampling {
        self.sampling.unwrap_or(match self.algorithm {
            Algorithm::DpFedPaq => BatchSampling::Subsample,
            _ => BatchSampling::WithReplacement,
        })
    }
}

/// Step size of round `k`.
pub fn lr(round: usize, cfg: &RunConfig) -> Result<f64> {
    let ke = (round * cfg.local_steps) as f64;
    match cfg.lr_mode {
        LrMode::Experimental => Ok(cfg.eta0 / (1.0 + ke / 100.0)),
        LrMode::Theoretical => {
            if !(cfg.mu > 0.0) {
                return Err(Error::Config("theoretical learning rate needs mu > 0".into()));
            }
            Ok(4.0 / (cfg.mu * (ke + 4.0 * cfg.local_steps as f64)))
        }
    }
}
