mod common;

use common::small;
use fedsim_core::analysis::{
    dominant_tradeoff, heterogeneity_lambda, theorem1_bound, BoundSetting, CommBudget, TradeoffSetting,
};
use fedsim_core::compressor::{bit_cost, q_factor};
use fedsim_core::data::{BatchSampling, DevicePartition};
use fedsim_core::federation::{run, Algorithm, Horizon, LrMode, RunConfig};
use fedsim_core::linalg::norm_sq;
use fedsim_core::model::{estimate_constants, solve_reference_optimum, ModelState, ProblemConstants};

fn constants(lambda: f64) -> ProblemConstants {
    ProblemConstants {
        smoothness: 2.0,
        mu: 0.5,
        sigma_grad: 1.0,
        lambda_het: lambda,
        grad_bound: 1.0,
        batch: 10,
        dim: 20,
    }
}

fn tradeoff_setting(q: f64) -> TradeoffSetting {
    TradeoffSetting {
        devices: 100,
        iterations: 1000,
        max_local_steps: 50,
        privacy: Some((1.0, 1e-4)),
        q,
        dist0: 1.0,
        n_k: 600,
    }
}

#[test]
fn homogeneous_devices_have_no_heterogeneity() {
    let data = small(2, 1);
    let all: Vec<usize> = (0..data.train.len()).collect();
    let same: Vec<DevicePartition> = (0..5).map(|i| DevicePartition::new(i, all.clone())).collect();
    let x = ModelState::from_params((0..data.dim()).map(|j| (j as f64).sin()).collect());
    assert!(heterogeneity_lambda(&data.train, &same, &x, 0.01).unwrap() <= 1e-12);
    assert_eq!(heterogeneity_lambda(&data.train, &same[..1], &x, 0.01).unwrap(), 0.0);
}

#[test]
fn skew_raises_heterogeneity() {
    let x0 = ModelState::zeros(small(1, 0).dim());
    for seed in 0..3 {
        let one = small(1, seed);
        let all = small(5, seed);
        let l1 = heterogeneity_lambda(&one.train, &one.partitions, &x0, 0.01).unwrap();
        let l5 = heterogeneity_lambda(&all.train, &all.partitions, &x0, 0.01).unwrap();
        assert!(l1 > l5, "seed {seed}: {l1} vs {l5}");
    }
}

#[test]
fn without_heterogeneity_fewest_local_steps_win() {
    let budget = CommBudget {
        capacity: 1e4,
        duration: 1e3,
        beta: 1e3,
    };
    let report = dominant_tradeoff(&tradeoff_setting(0.1), &budget, &constants(0.0)).unwrap();
    let smallest = report.rows.iter().filter(|r| r.feasible).map(|r| r.local_steps).min().unwrap();
    assert_eq!(report.best().unwrap().local_steps, smallest);
}

#[test]
fn lossier_compressor_raises_every_bound() {
    let budget = CommBudget {
        capacity: 1e4,
        duration: 1e3,
        beta: 1e3,
    };
    let fine = dominant_tradeoff(&tradeoff_setting(0.1), &budget, &constants(1.0)).unwrap();
    let coarse = dominant_tradeoff(&tradeoff_setting(2.0), &budget, &constants(1.0)).unwrap();
    assert_eq!(fine.rows.len(), coarse.rows.len());
    for (a, b) in fine.rows.iter().zip(&coarse.rows) {
        assert!(b.bound.total > a.bound.total);
    }
}

#[test]
fn budget_rows_respect_the_budget() {
    let d = 7850;
    let beta = bit_cost(d, 10) as f64;
    let budget = CommBudget {
        capacity: beta * 50.0,
        duration: 20.0,
        beta,
    };
    let setting = TradeoffSetting {
        q: q_factor(d, 10),
        ..tradeoff_setting(0.0)
    };
    let report = dominant_tradeoff(&setting, &budget, &constants(1.0)).unwrap();
    for r in &report.rows {
        assert!(r.participants >= 1 && r.participants <= 100);
        assert_eq!(r.feasible, (r.rounds * r.participants) as f64 * beta <= budget.total_bits());
    }
}

/// The bound is a worst case over constants that are themselves only
/// estimated here, so a violation is reported rather than failed.
#[test]
fn bound_dominates_empirical_distance() {
    let data = small(2, 4);
    let mu = 0.1;
    let opt = solve_reference_optimum(&data.train, mu, 1e-10).unwrap();
    let cfg = RunConfig {
        algorithm: Algorithm::FedPaq,
        devices: 20,
        participants: 5,
        local_steps: 5,
        horizon: Horizon::Rounds(40),
        lr_mode: LrMode::Theoretical,
        mu,
        seed: 4,
        ..RunConfig::default()
    };
    let out = run(&cfg, &data, Some(&opt.params)).unwrap();
    let probes = [ModelState::zeros(data.dim()), opt.clone()];
    let c = estimate_constants(&data.train, &data.partitions, mu, cfg.batch, BatchSampling::WithReplacement, &probes, None)
        .unwrap();
    let setting = BoundSetting {
        local_steps: 5,
        participants: 5,
        devices: 20,
        iterations: 200,
        privacy: None,
    };
    let bound = theorem1_bound(&c, &setting, q_factor(data.dim(), 10), norm_sq(&opt.params), 100).unwrap();
    let empirical = out.records.last().unwrap().dist_sq_to_opt;
    assert!(bound.total.is_finite() && empirical.is_finite());
    if empirical > bound.total {
        eprintln!("warning: empirical distance {empirical} exceeds bound {}", bound.total);
    }
}
