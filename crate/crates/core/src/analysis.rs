//! Convergence-bound evaluation and communication-budget accounting.

use std::f64::consts::E as EULER;

use crate::data::{Dataset, DevicePartition};
use crate::error::{Error, Result};
use crate::model::{gradient_dispersion, ModelState, ProblemConstants};

/// Run shape entering the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSetting {
    pub local_steps: usize,
    pub participants: usize,
    pub devices: usize,
    /// Total local iterations `T`.
    pub iterations: usize,
    /// `(epsilon, delta)`; `None` drops the privacy term entirely.
    pub privacy: Option<(f64, f64)>,
}

/// The six terms of the bound and their sum. `terms[5]` is zero for
/// non-private settings, where the term does not exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    pub terms: [f64; 6],
    pub total: f64,
}

/// Upper bound on `E||x_K - x*||^2` after `T` iterations of private FedPaq
/// with the theoretical step size.
///
/// `dist0` is `E||x_0 - x*||^2` and `n_k` the per-device dataset size.
pub fn theorem1_bound(
    c: &ProblemConstants,
    setting: &BoundSetting,
    q: f64,
    dist0: f64,
    n_k: usize,
) -> Result<BoundTerms> {
    c.validate()?;
    let BoundSetting {
        local_steps,
        participants,
        devices,
        iterations,
        privacy,
    } = *setting;
    if local_steps == 0 || participants == 0 || devices == 0 || iterations == 0 || n_k == 0 {
        return Err(Error::Argument(format!("bound needs positive E, M, N, T and n_k: {setting:?}")));
    }
    if !(q >= 0.0) || !(dist0 >= 0.0) {
        return Err(Error::Argument(format!("q = {q} and dist0 = {dist0} must be nonnegative")));
    }
    let e = local_steps as f64;
    let m = participants as f64;
    let n = devices as f64;
    let t = iterations as f64;
    let b = c.batch as f64;
    let mu2 = c.mu * c.mu;
    let g2 = c.grad_bound * c.grad_bound;
    let s2 = c.sigma_grad * c.sigma_grad;
    let l2 = c.lambda_het * c.lambda_het;

    let mut terms = [0.0; 6];
    terms[0] = 16.0 * e * e / (t * t) * dist0;
    terms[1] = 16.0 / mu2 * (2.0 * q * g2 / m + q * g2 / n) * e / t;
    terms[2] = 16.0 / mu2 * (4.0 * EULER * s2 / (b * m) + 3.0 * c.smoothness * l2 / c.mu + s2 / (b * n)) / t;
    terms[3] = 128.0 * EULER * l2 / (mu2 * m) * (e - 1.0) / t;
    terms[4] = 128.0 * g2 / mu2 * (e - 1.0) * (e - 1.0) / t;
    if let Some((eps, delta)) = privacy {
        if !(eps > 0.0) || !(delta > 0.0) {
            return Err(Error::Domain(format!("privacy term needs eps, delta > 0, got ({eps}, {delta})")));
        }
        let nk = n_k as f64;
        let log = (1.25 * e * b / (nk * delta)).ln();
        if !(log > 0.0) {
            return Err(Error::Domain(format!(
                "ln(1.25 E b / (n_k delta)) = {log} is not positive"
            )));
        }
        terms[5] = 4096.0 * c.dim as f64 * g2 * b * b * (1.0 + q) * log / (m * nk * nk * eps * eps) * e.powi(3) / t;
    }
    Ok(BoundTerms {
        terms,
        total: terms.iter().sum(),
    })
}

/// Uplink capacity times training duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommBudget {
    /// Bits per second.
    pub capacity: f64,
    /// Seconds.
    pub duration: f64,
    /// Bits per transmitted update.
    pub beta: f64,
}

impl CommBudget {
    /// Total bits `B`.
    pub fn total_bits(&self) -> f64 {
        self.capacity * self.duration
    }

    /// `alpha = B / (T beta)`, so that `M = alpha E` spends the budget.
    pub fn alpha(&self, iterations: usize) -> f64 {
        self.total_bits() / (iterations as f64 * self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetCheck {
    pub feasible: bool,
    /// `B - K M beta`; negative when infeasible.
    pub slack: f64,
}

pub fn budget_check(rounds: usize, participants: usize, beta: f64, total_bits: f64) -> BudgetCheck {
    let used = rounds as f64 * participants as f64 * beta;
    BudgetCheck {
        feasible: used <= total_bits,
        slack: total_bits - used,
    }
}

/// Everything except `(E, M)` held fixed in a trade-off sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffSetting {
    pub devices: usize,
    pub iterations: usize,
    /// Largest `E` tried.
    pub max_local_steps: usize,
    pub privacy: Option<(f64, f64)>,
    pub q: f64,
    pub dist0: f64,
    pub n_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffRow {
    pub local_steps: usize,
    pub participants: usize,
    pub rounds: usize,
    pub bound: BoundTerms,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffReport {
    pub alpha: f64,
    pub rows: Vec<TradeoffRow>,
    /// Index into `rows` of the smallest feasible bound.
    pub minimizer: Option<usize>,
}

impl TradeoffReport {
    pub fn is_feasible(&self) -> bool {
        self.minimizer.is_some()
    }

    pub fn best(&self) -> Option<&TradeoffRow> {
        self.minimizer.map(|i| &self.rows[i])
    }
}

/// Spends a fixed bit budget as `M = floor(alpha E)` (capped at `N`) for
/// every `E` up to the limit and evaluates the bound for each pair. Pairs
/// with `M = 0` cannot be run and are left out; if none remain the report
/// is empty and has no minimizer.
pub fn dominant_tradeoff(
    setting: &TradeoffSetting,
    budget: &CommBudget,
    c: &ProblemConstants,
) -> Result<TradeoffReport> {
    if setting.iterations == 0 || !(budget.beta > 0.0) {
        return Err(Error::Argument("trade-off needs T > 0 and beta > 0".into()));
    }
    let total = budget.total_bits();
    let t = setting.iterations as f64;
    let mut rows = Vec::new();
    for e in 1..=setting.max_local_steps.min(setting.iterations) {
        let m = ((total * e as f64 / (t * budget.beta)).floor() as usize).min(setting.devices);
        if m == 0 {
            continue;
        }
        let rounds = setting.iterations / e;
        let bound = theorem1_bound(
            c,
            &BoundSetting {
                local_steps: e,
                participants: m,
                devices: setting.devices,
                iterations: setting.iterations,
                privacy: setting.privacy,
            },
            setting.q,
            setting.dist0,
            setting.n_k,
        )?;
        rows.push(TradeoffRow {
            local_steps: e,
            participants: m,
            rounds,
            bound,
            feasible: budget_check(rounds, m, budget.beta, total).feasible,
        });
    }
    let minimizer = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.feasible)
        .min_by(|a, b| a.1.bound.total.total_cmp(&b.1.bound.total))
        .map(|(i, _)| i);
    Ok(TradeoffReport {
        alpha: budget.alpha(setting.iterations),
        rows,
        minimizer,
    })
}

/// Pointwise heterogeneity `sqrt((1/N) sum_i ||grad f_i(x) - grad f(x)||^2)`,
/// a lower estimate of `lambda`.
pub fn heterogeneity_lambda(
    data: &Dataset,
    partitions: &[DevicePartition],
    x: &ModelState,
    mu: f64,
) -> Result<f64> {
    gradient_dispersion(data, partitions, &x.params, mu)
}
