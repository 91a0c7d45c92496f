//! Communication-budget trade-off report.

use std::fs;
use std::path::{Path, PathBuf};

use fedsim_core::analysis::{dominant_tradeoff, CommBudget, TradeoffReport, TradeoffSetting};
use fedsim_core::compressor::{bit_cost, identity_bit_cost, q_factor};
use fedsim_core::data::DevicePartition;
use fedsim_core::federation::{Algorithm, Compression};
use fedsim_core::linalg::norm_sq;
use fedsim_core::model::{estimate_constants, ModelState};

use crate::config::{RawConfig, Settings};
use crate::error::CliError;
use crate::runner::{build_problem, fmt_f64};

pub const BOUND_HEADER: &str = "E,M,K,bound_total,term1,term2,term3,term4,term5,term6,feasible";

pub fn write_report(path: &Path, report: &TradeoffReport) -> Result<(), CliError> {
    let mut out = String::from(BOUND_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{}",
            r.local_steps,
            r.participants,
            r.rounds,
            fmt_f64(r.bound.total)
        ));
        for t in r.bound.terms {
            out.push(',');
            out.push_str(&fmt_f64(t));
        }
        out.push_str(if r.feasible { ",true\n" } else { ",false\n" });
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Estimates the problem constants on the configured data (probing at the
/// zero model and the reference optimum) and evaluates every `(E, M)` pair
/// the budget allows.
pub fn bound_report(raw: &RawConfig, seed: Option<u64>, out_dir: Option<PathBuf>) -> Result<(PathBuf, TradeoffReport), CliError> {
    let mut settings = Settings::from_raw(raw)?;
    if let Some(s) = seed {
        settings.run.seed = s;
    }
    let cfg = settings
        .run
        .normalized()
        .map_err(|e| CliError::core("run configuration", e))?;
    let b = &settings.bound;
    let capacity = b
        .capacity
        .ok_or_else(|| CliError::Config("bound.capacity (bits per second) is required".into()))?;
    let duration = b
        .duration
        .ok_or_else(|| CliError::Config("bound.duration (seconds) is required".into()))?;

    let problem = build_problem(&settings, settings.data.seed.unwrap_or(cfg.seed))?;
    let data = &problem.data;
    let d = data.dim();
    let mut probes = vec![ModelState::zeros(d)];
    if let Some(r) = &problem.reference {
        probes.push(ModelState::from_params(r.clone()));
    }
    let clip = cfg.privacy.map(|p| p.clip);
    let mut c = estimate_constants(
        &data.train,
        &data.partitions,
        cfg.mu,
        cfg.batch,
        cfg.batch_sampling(),
        &probes,
        clip,
    )
    .map_err(|e| CliError::core("estimating problem constants", e))?;
    c.smoothness = b.smoothness.unwrap_or(c.smoothness);
    c.sigma_grad = b.sigma.unwrap_or(c.sigma_grad);
    c.lambda_het = b.lambda.unwrap_or(c.lambda_het);
    c.grad_bound = b.grad_bound.unwrap_or(c.grad_bound);

    let (beta, q) = match cfg.compression {
        Compression::None => (identity_bit_cost(d) as f64, 0.0),
        Compression::Qsgd(s) => (bit_cost(d, s) as f64, q_factor(d, s)),
    };
    let dist0 = match (b.dist0, &problem.reference) {
        (Some(v), _) => v,
        (None, Some(r)) => norm_sq(r),
        (None, None) => {
            return Err(CliError::Config(
                "bound.dist0 is required when reference.solve = false".into(),
            ))
        }
    };
    let setting = TradeoffSetting {
        devices: cfg.devices,
        iterations: b.iterations.unwrap_or(cfg.iterations()),
        max_local_steps: b.max_local_steps.unwrap_or(cfg.devices),
        privacy: (cfg.algorithm == Algorithm::DpFedPaq)
            .then(|| cfg.privacy.map(|p| (p.epsilon, p.delta)))
            .flatten(),
        q,
        dist0,
        n_k: data.partitions.iter().map(DevicePartition::len).min().unwrap_or(0),
    };
    let budget = CommBudget {
        capacity,
        duration,
        beta,
    };
    let report = dominant_tradeoff(&setting, &budget, &c).map_err(|e| CliError::core("evaluating the bound", e))?;
    let out_dir = out_dir.unwrap_or(settings.out_dir);
    fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    let path = out_dir.join("bound.csv");
    write_report(&path, &report)?;
    Ok((path, report))
}
