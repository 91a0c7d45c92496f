//! Clipping, Gaussian-mechanism calibration and subsampling amplification.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::norm;

/// Rescales `g` onto the ball of radius `bound` if it lies outside.
pub fn clip(g: &[f64], bound: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, bound);
    out
}

/// In-place [`clip`]. Vectors already inside the ball are left untouched.
pub fn clip_in_place(g: &mut [f64], bound: f64) {
    let n = norm(g);
    if n > bound {
        let scale = bound / n;
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
}

/// How the L2 sensitivity of one local update is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SensitivityMode {
    /// User-supplied `Δ_f`.
    Fixed(f64),
    /// `2 * eta * E * C / b`: replacing one sample changes each of the `E`
    /// averaged, clipped mini-batch steps by at most `2 * eta * C / b`.
    Derived,
}

pub fn sensitivity(eta: f64, local_steps: usize, clip: f64, batch: usize, mode: SensitivityMode) -> f64 {
    match mode {
        SensitivityMode::Fixed(v) => v,
        SensitivityMode::Derived => 2.0 * eta * local_steps as f64 * clip / batch as f64,
    }
}

/// Noise variance of the subsampled Gaussian mechanism:
/// `2 Δ² ln(1.25 / (δ/γ)) / (ε / 2γ)²`.
pub fn calibrate_sigma_sq(delta_f: f64, epsilon: f64, delta: f64, gamma: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Domain(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let relaxed = delta / gamma;
    if relaxed >= 1.25 {
        return Err(Error::Domain(format!(
            "delta/gamma = {relaxed} leaves a nonpositive logarithm"
        )));
    }
    let eps_scaled = epsilon / (2.0 * gamma);
    Ok(2.0 * delta_f * delta_f * (1.25 / relaxed).ln() / (eps_scaled * eps_scaled))
}

/// `ln(1 + (1 - (1 - b/n)^E) (e^ε - 1))`: the guarantee of an ε-DP step run
/// on `E` mini-batches of size `b` drawn without replacement from `n` samples.
pub fn amplified_epsilon(epsilon: f64, batch: usize, n: usize, local_steps: usize) -> Result<f64> {
    if batch == 0 || local_steps == 0 {
        return Err(Error::Config("batch size and local steps must be positive".into()));
    }
    if batch > n {
        return Err(Error::Config(format!("batch size {batch} exceeds local dataset size {n}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    // 1 - (1 - b/n)^E, accurate for small b/n
    let hit = -(local_steps as f64 * (-(batch as f64 / n as f64)).ln_1p()).exp_m1();
    Ok((hit * epsilon.exp_m1()).ln_1p())
}

/// `x + z` with `z ~ N(0, sigma_sq I)`. No draws are made when `sigma_sq` is 0.
pub fn gaussian_perturb<R: Rng + ?Sized>(x: &[f64], sigma_sq: f64, rng: &mut R) -> Vec<f64> {
    let mut out = x.to_vec();
    perturb_in_place(&mut out, sigma_sq, rng);
    out
}

pub fn perturb_in_place<R: Rng + ?Sized>(x: &mut [f64], sigma_sq: f64, rng: &mut R) {
    if sigma_sq == 0.0 {
        return;
    }
    let sigma = sigma_sq.sqrt();
    for v in x.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += sigma * z;
    }
}

/// Calibrated privacy parameters of one device in one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub delta: f64,
    pub clip: f64,
    /// Subsampling ratio `E b / n_k`.
    pub gamma: f64,
    pub sensitivity: f64,
    pub sigma_sq: f64,
}

impl PrivacySpec {
    pub fn calibrated(epsilon: f64, delta: f64, clip: f64, gamma: f64, sensitivity: f64) -> Result<Self> {
        if !(clip > 0.0) {
            return Err(Error::Config(format!("clipping bound must be positive, got {clip}")));
        }
        if !(sensitivity > 0.0) {
            return Err(Error::Config(format!("sensitivity must be positive, got {sensitivity}")));
        }
        Ok(Self {
            epsilon,
            delta,
            clip,
            gamma,
            sensitivity,
            sigma_sq: calibrate_sigma_sq(sensitivity, epsilon, delta, gamma)?,
        })
    }
}
