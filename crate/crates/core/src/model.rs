//! L2-regularised multinomial logistic regression.
//!
//! Parameters are a flat vector laid out class by class: for class `c` the
//! `u` weights occupy `c*(u+1) .. c*(u+1)+u` and the bias sits at
//! `c*(u+1)+u`. The objective over a batch is the mean softmax cross-entropy
//! plus `(mu/2) * ||x||^2`, which is `mu`-strongly convex.

use crate::data::{BatchSampling, Dataset, DevicePartition};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, norm_sq};

/// Parameters plus the round/iteration counters of the run that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub params: Vec<f64>,
    pub round: usize,
    pub iteration: usize,
}

impl ModelState {
    pub fn zeros(dim: usize) -> Self {
        Self::from_params(vec![0.0; dim])
    }

    pub fn from_params(params: Vec<f64>) -> Self {
        Self {
            params,
            round: 0,
            iteration: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}

/// Number of parameters for `classes` classes over `u`-dimensional samples.
pub fn param_count(u: usize, classes: usize) -> usize {
    classes * (u + 1)
}

/// Constants of the convergence analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    /// Smoothness `L`.
    pub smoothness: f64,
    /// Strong convexity `mu`.
    pub mu: f64,
    /// Per-sample stochastic gradient deviation `sigma`; a batch of `b` has
    /// variance at most `sigma^2 / b`.
    pub sigma_grad: f64,
    /// Heterogeneity `lambda`.
    pub lambda_het: f64,
    /// Stochastic gradient norm bound `G`.
    pub grad_bound: f64,
    pub batch: usize,
    pub dim: usize,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu > 0.0
            && self.smoothness >= self.mu
            && self.sigma_grad >= 0.0
            && self.lambda_het >= 0.0
            && self.grad_bound > 0.0
            && self.batch >= 1
            && self.dim >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent problem constants: {self:?}")))
        }
    }
}

/// A view of some rows of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    data: &'a Dataset,
    indices: Option<&'a [usize]>,
}

impl<'a> Batch<'a> {
    pub fn full(data: &'a Dataset) -> Self {
        Self { data, indices: None }
    }

    pub fn of(data: &'a Dataset, indices: &'a [usize]) -> Self {
        Self {
            data,
            indices: Some(indices),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.map_or(self.data.len(), <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rows(&self) -> impl Iterator<Item = usize> + 'a {
        let idx = self.indices;
        (0..self.len()).map(move |j| match idx {
            Some(ix) => ix[j],
            None => j,
        })
    }

    fn check(&self, params: &[f64]) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let expected = param_count(self.data.dim(), self.data.classes());
        if params.len() != expected {
            return Err(Error::Config(format!(
                "model has {} parameters, data layout needs {expected}",
                params.len()
            )));
        }
        Ok(())
    }
}

/// Softmax probabilities for one sample, written into `out`.
fn class_probs(params: &[f64], x: &[f64], out: &mut [f64]) {
    let stride = x.len() + 1;
    for (c, p) in out.iter_mut().enumerate() {
        let row = &params[c * stride..(c + 1) * stride];
        *p = dot(&row[..x.len()], x) + row[x.len()];
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for p in out.iter_mut() {
        *p = (*p - max).exp();
        total += *p;
    }
    for p in out.iter_mut() {
        *p /= total;
    }
}

/// Cross-entropy of one sample; stable for large logits.
fn sample_ce(params: &[f64], x: &[f64], label: usize, logits: &mut [f64]) -> f64 {
    let stride = x.len() + 1;
    for (c, z) in logits.iter_mut().enumerate() {
        let row = &params[c * stride..(c + 1) * stride];
        *z = dot(&row[..x.len()], x) + row[x.len()];
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Adds `scale * (p - e_label) ⊗ [x; 1]` into `grad`.
fn add_ce_gradient(grad: &mut [f64], probs: &[f64], x: &[f64], label: usize, scale: f64) {
    let stride = x.len() + 1;
    for (c, &p) in probs.iter().enumerate() {
        let r = scale * (p - f64::from(u8::from(c == label)));
        let row = &mut grad[c * stride..(c + 1) * stride];
        for (g, xi) in row[..x.len()].iter_mut().zip(x) {
            *g += r * xi;
        }
        row[x.len()] += r;
    }
}

pub fn loss(state: &ModelState, batch: Batch<'_>, mu: f64) -> Result<f64> {
    loss_at(&state.params, batch, mu)
}

pub fn loss_at(params: &[f64], batch: Batch<'_>, mu: f64) -> Result<f64> {
    batch.check(params)?;
    let mut logits = vec![0.0; batch.data.classes()];
    let ce: f64 = batch
        .rows()
        .map(|i| sample_ce(params, batch.data.sample(i), batch.data.label(i), &mut logits))
        .sum();
    Ok(ce / batch.len() as f64 + 0.5 * mu * norm_sq(params))
}

pub fn gradient(state: &ModelState, batch: Batch<'_>, mu: f64) -> Result<Vec<f64>> {
    gradient_at(&state.params, batch, mu)
}

/// Full gradient of [`loss_at`].
pub fn gradient_at(params: &[f64], batch: Batch<'_>, mu: f64) -> Result<Vec<f64>> {
    batch.check(params)?;
    let mut grad = vec![0.0; params.len()];
    let mut probs = vec![0.0; batch.data.classes()];
    let scale = 1.0 / batch.len() as f64;
    for i in batch.rows() {
        let x = batch.data.sample(i);
        class_probs(params, x, &mut probs);
        add_ce_gradient(&mut grad, &probs, x, batch.data.label(i), scale);
    }
    for (g, p) in grad.iter_mut().zip(params) {
        *g += mu * p;
    }
    Ok(grad)
}

/// Gradient of the regularised loss on a single sample.
pub fn sample_gradient(params: &[f64], data: &Dataset, i: usize, mu: f64, out: &mut [f64]) {
    let mut probs = vec![0.0; data.classes()];
    let x = data.sample(i);
    class_probs(params, x, &mut probs);
    for (o, p) in out.iter_mut().zip(params) {
        *o = mu * p;
    }
    add_ce_gradient(out, &probs, x, data.label(i), 1.0);
}

/// Mini-batch gradient built as the mean of per-sample gradients, each
/// rescaled to norm at most `clip` when a bound is given. A per-sample
/// gradient already inside the ball is used as is.
pub fn minibatch_gradient(params: &[f64], batch: Batch<'_>, mu: f64, clip: Option<f64>) -> Result<Vec<f64>> {
    batch.check(params)?;
    let mut sum = vec![0.0; params.len()];
    let mut g = vec![0.0; params.len()];
    for i in batch.rows() {
        sample_gradient(params, batch.data, i, mu, &mut g);
        if let Some(c) = clip {
            crate::privacy::clip_in_place(&mut g, c);
        }
        for (s, v) in sum.iter_mut().zip(&g) {
            *s += v;
        }
    }
    let n = batch.len() as f64;
    for s in &mut sum {
        *s /= n;
    }
    Ok(sum)
}

/// Fraction of rows whose most probable class equals the label.
pub fn accuracy(params: &[f64], batch: Batch<'_>) -> Result<f64> {
    batch.check(params)?;
    let mut probs = vec![0.0; batch.data.classes()];
    let correct = batch
        .rows()
        .filter(|&i| {
            class_probs(params, batch.data.sample(i), &mut probs);
            let best = probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (c, &p)| if p > acc.1 { (c, p) } else { acc })
                .0;
            best == batch.data.label(i)
        })
        .count();
    Ok(correct as f64 / batch.len() as f64)
}

const MAX_SOLVER_ITERS: usize = 200_000;

/// Minimiser of the regularised full-batch objective.
///
/// Gradient descent with Barzilai-Borwein trial steps and Armijo
/// backtracking. The sufficient-decrease test allows a few ulps of `f` so
/// that steps taken once the objective is flat to machine precision are
/// still accepted.
pub fn solve_reference_optimum(data: &Dataset, mu: f64, tol: f64) -> Result<ModelState> {
    if !(mu > 0.0) {
        return Err(Error::Argument(format!("reference optimum needs mu > 0, got {mu}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {tol}")));
    }
    let batch = Batch::full(data);
    let d = param_count(data.dim(), data.classes());
    let mut x = vec![0.0; d];
    let mut f = loss_at(&x, batch, mu)?;
    let mut g = gradient_at(&x, batch, mu)?;
    let mut step = 1.0 / smoothness_bound(data, mu);
    let mut trial = vec![0.0; d];

    for _ in 0..MAX_SOLVER_ITERS {
        let gnorm_sq = norm_sq(&g);
        if gnorm_sq.sqrt() <= tol {
            return Ok(ModelState::from_params(x));
        }
        let mut t = step;
        let (f_new, g_new) = loop {
            for ((y, xi), gi) in trial.iter_mut().zip(&x).zip(&g) {
                *y = xi - t * gi;
            }
            let f_new = loss_at(&trial, batch, mu)?;
            let slack = 8.0 * f64::EPSILON * f.abs().max(1.0);
            if f_new <= f - 0.5 * t * gnorm_sq + slack {
                break (f_new, gradient_at(&trial, batch, mu)?);
            }
            t *= 0.5;
            if t < 1e-20 {
                return Err(Error::NonConvergence {
                    iterations: 0,
                    grad_norm: gnorm_sq.sqrt(),
                });
            }
        };
        // Barzilai-Borwein step for the next trial
        let mut sy = 0.0;
        let mut ss = 0.0;
        for ((xn, xo), (gn, go)) in trial.iter().zip(&x).zip(g_new.iter().zip(&g)) {
            let s = xn - xo;
            sy += s * (gn - go);
            ss += s * s;
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { t };
        std::mem::swap(&mut x, &mut trial);
        f = f_new;
        g = g_new;
    }
    Err(Error::NonConvergence {
        iterations: MAX_SOLVER_ITERS,
        grad_norm: norm(&g),
    })
}

/// Analytic smoothness bound: the softmax Hessian block is dominated by
/// `1/2 * ||[x; 1]||^2`, plus the regulariser.
pub fn smoothness_bound(data: &Dataset, mu: f64) -> f64 {
    let max_row = (0..data.len())
        .map(|i| norm_sq(data.sample(i)) + 1.0)
        .fold(0.0, f64::max);
    0.5 * max_row + mu
}

/// `sqrt((1/N) * sum_i ||grad f_i(x) - grad f(x)||^2)` with `f` the plain
/// average of the device objectives.
pub fn gradient_dispersion(data: &Dataset, partitions: &[DevicePartition], params: &[f64], mu: f64) -> Result<f64> {
    if partitions.len() <= 1 {
        return Ok(0.0);
    }
    let grads = partitions
        .iter()
        .map(|p| gradient_at(params, Batch::of(data, &p.sample_indices), mu))
        .collect::<Result<Vec<_>>>()?;
    let n = grads.len() as f64;
    let mut mean = vec![0.0; params.len()];
    for g in &grads {
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v / n;
        }
    }
    let spread: f64 = grads
        .iter()
        .map(|g| g.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    Ok(spread.sqrt())
}

/// Empirical estimates of the analysis constants.
///
/// `L` is the analytic bound and `mu` is exact. `sigma`, `lambda` and `G`
/// are maxima over the probe points, i.e. lower estimates of the true
/// suprema. With clipping active `G` is the clipping bound, which caps
/// every clipped stochastic gradient.
pub fn estimate_constants(
    data: &Dataset,
    partitions: &[DevicePartition],
    mu: f64,
    batch: usize,
    sampling: BatchSampling,
    probes: &[ModelState],
    clip: Option<f64>,
) -> Result<ProblemConstants> {
    if probes.is_empty() {
        return Err(Error::Argument("at least one probe point is required".into()));
    }
    if partitions.is_empty() || partitions.iter().any(DevicePartition::is_empty) {
        return Err(Error::Argument("every device needs at least one sample".into()));
    }
    if batch == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let d = param_count(data.dim(), data.classes());
    let mut max_grad = 0.0f64;
    let mut max_var = 0.0f64;
    let mut max_het = 0.0f64;
    let mut g = vec![0.0; d];
    for probe in probes {
        if probe.dim() != d {
            return Err(Error::Config(format!(
                "probe has {} parameters, expected {d}",
                probe.dim()
            )));
        }
        for part in partitions {
            let n = part.len();
            let mean = gradient_at(&probe.params, Batch::of(data, &part.sample_indices), mu)?;
            let mut spread = 0.0;
            for &i in &part.sample_indices {
                sample_gradient(&probe.params, data, i, mu, &mut g);
                max_grad = max_grad.max(norm(&g));
                spread += g.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
            let per_sample = spread / n as f64;
            let var = match sampling {
                BatchSampling::WithReplacement => per_sample,
                BatchSampling::Subsample if n > 1 => {
                    per_sample * (n.saturating_sub(batch)) as f64 / (n - 1) as f64
                }
                BatchSampling::Subsample => 0.0,
            };
            max_var = max_var.max(var);
        }
        max_het = max_het.max(gradient_dispersion(data, partitions, &probe.params, mu)?);
    }
    let constants = ProblemConstants {
        smoothness: smoothness_bound(data, mu),
        mu,
        sigma_grad: max_var.sqrt(),
        lambda_het: max_het,
        grad_bound: clip.unwrap_or(max_grad),
        batch,
        dim: d,
    };
    constants.validate()?;
    Ok(constants)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_classification;

    fn one_sample() -> Dataset {
        // u = 1 feature, 2 classes: d = 4 (w0, b0, w1, b1)
        Dataset::new(vec![1.0], vec![0], 1, 2).unwrap()
    }

    #[test]
    fn uniform_softmax_loss() {
        let data = synth_classification(40, 10, 10, 3.0, 1).unwrap();
        let zero = ModelState::zeros(param_count(10, 10));
        let l0 = loss(&zero, Batch::full(&data), 0.0).unwrap();
        assert!((l0 - 10f64.ln()).abs() < 1e-12);
        let l1 = loss(&zero, Batch::full(&data), 0.1).unwrap();
        assert!((l1 - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn one_gradient_step_decreases_loss() {
        let data = one_sample();
        let x = ModelState::zeros(4);
        let l0 = loss(&x, Batch::full(&data), 0.0).unwrap();
        assert!((l0 - 2f64.ln()).abs() < 1e-12);
        let g = gradient(&x, Batch::full(&data), 0.0).unwrap();
        // softmax at origin is (1/2, 1/2): gradient (p - e_0) ⊗ [1, 1]
        assert_eq!(g, vec![-0.5, -0.5, 0.5, 0.5]);
        let stepped: Vec<f64> = x.params.iter().zip(&g).map(|(p, gi)| p - gi).collect();
        let l1 = loss_at(&stepped, Batch::full(&data), 0.0).unwrap();
        assert!(l1 < l0);
    }

    #[test]
    fn saturated_params_have_tiny_gradient() {
        let data = one_sample();
        let params = vec![20.0, 0.0, -20.0, 0.0];
        let g = gradient_at(&params, Batch::full(&data), 0.0).unwrap();
        assert!(norm(&g) <= 1e-6);
    }

    #[test]
    fn mean_semantics() {
        let data = synth_classification(20, 3, 3, 2.0, 4).unwrap();
        let params: Vec<f64> = (0..12).map(|i| 0.1 * i as f64 - 0.5).collect();
        let once = gradient_at(&params, Batch::of(&data, &[5]), 0.1).unwrap();
        let twice = gradient_at(&params, Batch::of(&data, &[5, 5]), 0.1).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn minibatch_matches_full_gradient() {
        let data = synth_classification(30, 4, 3, 2.0, 4).unwrap();
        let params: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let idx: Vec<usize> = (0..30).collect();
        let a = gradient_at(&params, Batch::full(&data), 0.2).unwrap();
        let b = minibatch_gradient(&params, Batch::of(&data, &idx), 0.2, None).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn clipped_minibatch_stays_in_ball() {
        let data = synth_classification(30, 4, 3, 6.0, 4).unwrap();
        let params: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let idx: Vec<usize> = (0..10).collect();
        let g = minibatch_gradient(&params, Batch::of(&data, &idx), 0.0, Some(0.5)).unwrap();
        assert!(norm(&g) <= 0.5 + 1e-12);
    }

    #[test]
    fn errors() {
        let data = one_sample();
        let err = loss(&ModelState::zeros(3), Batch::full(&data), 0.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = loss(&ModelState::zeros(4), Batch::of(&data, &[]), 0.0).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
        assert!(gradient(&ModelState::zeros(5), Batch::full(&data), 0.0).is_err());
    }

    #[test]
    fn all_zero_features_give_zero_optimum() {
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let data = Dataset::new(vec![0.0; 24], labels, 2, 3).unwrap();
        let opt = solve_reference_optimum(&data, 1.0, 1e-12).unwrap();
        assert!(opt.params.iter().all(|p| p.abs() < 1e-12));
    }

    #[test]
    fn optimum_is_stationary_and_deterministic() {
        let data = synth_classification(200, 5, 3, 2.0, 8).unwrap();
        let a = solve_reference_optimum(&data, 0.05, 1e-10).unwrap();
        let g = gradient(&a, Batch::full(&data), 0.05).unwrap();
        assert!(norm(&g) <= 1e-10);
        let b = solve_reference_optimum(&data, 0.05, 1e-10).unwrap();
        assert_eq!(
            a.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn solver_rejects_bad_arguments() {
        let data = one_sample();
        assert!(solve_reference_optimum(&data, 0.0, 1e-8).is_err());
        assert!(solve_reference_optimum(&data, 0.1, 0.0).is_err());
    }

    #[test]
    fn constants_on_identical_devices() {
        let data = synth_classification(60, 4, 3, 2.0, 2).unwrap();
        let all: Vec<usize> = (0..60).collect();
        let parts: Vec<DevicePartition> = (0..4).map(|k| DevicePartition::new(k, all.clone())).collect();
        let probe = ModelState::from_params((0..15).map(|i| 0.05 * i as f64).collect());
        let c = estimate_constants(&data, &parts, 0.3, 5, BatchSampling::WithReplacement, &[probe], None)
            .unwrap();
        assert_eq!(c.mu, 0.3);
        assert!(c.lambda_het.abs() < 1e-12);
        assert!(c.smoothness >= c.mu);
        assert!(c.sigma_grad > 0.0);
    }

    #[test]
    fn full_batch_has_no_sampling_noise() {
        let data = synth_classification(50, 4, 3, 2.0, 2).unwrap();
        let parts = vec![DevicePartition::new(0, (0..50).collect())];
        let probes = [ModelState::zeros(15), ModelState::from_params(vec![0.1; 15])];
        let c = estimate_constants(&data, &parts, 0.1, 50, BatchSampling::Subsample, &probes, None).unwrap();
        assert!(c.sigma_grad.abs() <= 1e-12);
        assert_eq!(c.lambda_het, 0.0);
    }

    #[test]
    fn clipping_sets_grad_bound() {
        let data = synth_classification(50, 4, 3, 2.0, 2).unwrap();
        let parts = vec![DevicePartition::new(0, (0..50).collect())];
        let c = estimate_constants(
            &data,
            &parts,
            0.1,
            5,
            BatchSampling::Subsample,
            &[ModelState::zeros(15)],
            Some(1.5),
        )
        .unwrap();
        assert_eq!(c.grad_bound, 1.5);
        assert!(estimate_constants(&data, &parts, 0.1, 5, BatchSampling::Subsample, &[], None).is_err());
    }
}
