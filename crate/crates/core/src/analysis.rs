//! Statistical harness for the estimators.
//!
//! Every batch operation takes a [`StreamFamily`] and gives work item `i`
//! stream `i`, so results are identical for any rayon worker count. Reusing a
//! family across two calls gives common random numbers between them.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::env::{validate_gamma, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::estimator::{ergodic_state, estimate_gradient, EstimatorKind, EstimatorOptions};
use crate::optimizer::IterateRecord;
use crate::policy::{GaussianPolicy, ParamVector};
use crate::rng::StreamFamily;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_trajectories: usize,
    pub truncation_t: u64,
    pub gamma: f64,
    /// `gamma^(T+1) M / (1 - gamma)`, the largest possible truncation error.
    pub tail_bound: f64,
}

pub fn tail_bound(gamma: f64, reward_bound: f64, truncation_t: u64) -> f64 {
    libm::pow(gamma, truncation_t as f64 + 1.0) * reward_bound / (1.0 - gamma)
}

/// Smallest `T` whose truncation tail bound is at most `tolerance`.
pub fn truncation_for(gamma: f64, reward_bound: f64, tolerance: f64) -> u64 {
    let t = (libm::log(tolerance * (1.0 - gamma) / reward_bound) / libm::log(gamma) - 1.0).ceil();
    let mut t = t.max(0.0) as u64;
    while tail_bound(gamma, reward_bound, t) > tolerance {
        t += 1;
    }
    while t > 0 && tail_bound(gamma, reward_bound, t - 1) <= tolerance {
        t -= 1;
    }
    t
}

/// Discounted returns `sum_{t=0}^{T} gamma^t r_t` of `n` trajectories started
/// from the environment's reset distribution.
pub fn discounted_returns<E: Environment>(
    env: &E,
    policy: &GaussianPolicy,
    n: usize,
    gamma: f64,
    truncation_t: u64,
    family: &StreamFamily,
) -> Result<Vec<f64>> {
    validate_gamma(gamma)?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = family.stream(i as u64);
            let mut state = env.reset(&mut rng);
            let mut total = 0.0;
            let mut discount = 1.0;
            for _ in 0..=truncation_t {
                let a = policy.sample_action(&state, &mut rng)?;
                let (next, r) = env.step(&state, a)?;
                total += discount * r;
                discount *= gamma;
                state = next;
            }
            Ok(total)
        })
        .collect()
}

pub fn evaluate_return<E: Environment>(
    env: &E,
    policy: &GaussianPolicy,
    n_traj: usize,
    gamma: f64,
    truncation_t: u64,
    family: &StreamFamily,
) -> Result<ReturnEstimate> {
    if n_traj == 0 {
        return Err(Error::Precondition("need at least one trajectory".into()));
    }
    let returns = discounted_returns(env, policy, n_traj, gamma, truncation_t, family)?;
    Ok(ReturnEstimate {
        mean: stats::mean(&returns),
        std_error: stats::std_error(&returns),
        n_trajectories: n_traj,
        truncation_t,
        gamma,
        tail_bound: tail_bound(gamma, env.reward_bound(), truncation_t),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdGradient {
    pub gradient: Vec<f64>,
    pub std_error: Vec<f64>,
    pub h: f64,
    pub n_eval: usize,
}

/// Central-difference gradient of the truncated return, with the `+h` and
/// `-h` evaluations sharing every random stream.
pub fn finite_difference_gradient<E: Environment>(
    env: &E,
    policy: &GaussianPolicy,
    h: f64,
    n_eval: usize,
    gamma: f64,
    truncation_t: u64,
    family: &StreamFamily,
) -> Result<FdGradient> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Precondition(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    if n_eval < 2 {
        return Err(Error::Precondition("need at least two evaluations".into()));
    }
    let theta = policy.theta();
    let mut gradient = Vec::with_capacity(theta.len());
    let mut std_error = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let shifted = |delta: f64| {
            let mut t = theta.clone();
            t[i] += delta;
            policy.with_theta(t)
        };
        let up = discounted_returns(env, &shifted(h)?, n_eval, gamma, truncation_t, family)?;
        let down = discounted_returns(env, &shifted(-h)?, n_eval, gamma, truncation_t, family)?;
        let diffs: Vec<f64> = up
            .iter()
            .zip(&down)
            .map(|(u, d)| (u - d) / (2.0 * h))
            .collect();
        gradient.push(stats::mean(&diffs));
        std_error.push(stats::std_error(&diffs));
    }
    Ok(FdGradient {
        gradient,
        std_error,
        h,
        n_eval,
    })
}

/// Start-state averages of the quantities entering the variance bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GStatistics {
    /// Mean of `|g(theta, x)|^2`.
    pub g_wd: f64,
    /// Mean of `E_a |score|^2` (log-density gradient).
    pub g_sf_score: f64,
    /// Mean of `E_a |d/dtheta mu_theta(a | x)|^2` (density gradient).
    pub g_sf_density: f64,
}

impl GStatistics {
    pub fn wd_over_sf_score(&self) -> f64 {
        self.g_wd / self.g_sf_score
    }

    pub fn wd_over_sf_density(&self) -> f64 {
        self.g_wd / self.g_sf_density
    }
}

/// Per-state terms of [`GStatistics`], integrated over the action in closed form.
fn g_terms(phi_norm_sq: f64, sigma: f64) -> [f64; 3] {
    let s2 = sigma * sigma;
    [
        phi_norm_sq / (2.0 * PI * s2),
        phi_norm_sq / s2,
        phi_norm_sq / (2.0 * PI * 3.0 * 3f64.sqrt() * s2 * s2),
    ]
}

/// `n` gradient estimates stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSamples {
    pub kind: EstimatorKind,
    pub dim: usize,
    pub data: Vec<f64>,
    pub transitions: u64,
    pub g: GStatistics,
}

impl GradientSamples {
    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.data[i * self.dim + j])
            .collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|j| stats::mean(&self.column(j)))
            .collect()
    }

    pub fn std_error(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|j| stats::std_error(&self.column(j)))
            .collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|j| stats::variance(&self.column(j)))
            .collect()
    }
}

/// Draws `n` independent estimates. Item `i` resets the environment, walks
/// to a discounted-occupancy state and estimates there, all on stream `i`;
/// the same family therefore pairs estimators on identical start states.
pub fn gradient_samples<E: Environment>(
    env: &E,
    policy: &GaussianPolicy,
    kind: EstimatorKind,
    n: usize,
    gamma: f64,
    options: EstimatorOptions,
    family: &StreamFamily,
) -> Result<GradientSamples> {
    validate_gamma(gamma)?;
    let sigma = policy.sigma();
    let rows: Vec<(Vec<f64>, u64, [f64; 3])> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = family.stream(i as u64);
            let init = env.reset(&mut rng);
            let (x0, _) = ergodic_state(env, policy, &init, gamma, &mut rng)?;
            let est = estimate_gradient(kind, env, policy, &x0, gamma, options, &mut rng)?;
            let phi = policy.features().evaluate(&x0)?;
            let phi_sq = phi.iter().map(|p| p * p).sum::<f64>();
            Ok((est.vector, est.transitions, g_terms(phi_sq, sigma)))
        })
        .collect::<Result<_>>()?;

    let mut data = Vec::with_capacity(n * policy.dim());
    let mut transitions = 0;
    let mut g_sum = [0.0; 3];
    for (v, t, g) in rows {
        data.extend_from_slice(&v);
        transitions += t;
        for (acc, x) in g_sum.iter_mut().zip(g) {
            *acc += x;
        }
    }
    let denom = n.max(1) as f64;
    Ok(GradientSamples {
        kind,
        dim: policy.dim(),
        data,
        transitions,
        g: GStatistics {
            g_wd: g_sum[0] / denom,
            g_sf_score: g_sum[1] / denom,
            g_sf_density: g_sum[2] / denom,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub kind: EstimatorKind,
    pub per_coordinate_variance: Vec<f64>,
    pub trace: f64,
    pub n: usize,
    pub theta: ParamVector,
    pub reward_bound: f64,
    pub gamma: f64,
    /// `2 M^2 G_wd / (1-gamma)^5` for WD, `M^2 G_sf / (1-gamma)^5` (score
    /// reading of `G_sf`) for SF.
    pub bound: f64,
    /// SF bound under the density-gradient reading of `G_sf`; `None` for WD.
    pub bound_density_reading: Option<f64>,
    pub g: GStatistics,
}

impl VarianceReport {
    pub fn from_samples(samples: &GradientSamples, theta: &ParamVector, spec: &EnvSpec) -> Self {
        let per_coordinate_variance = samples.variance();
        let trace = per_coordinate_variance.iter().sum();
        let m2 = spec.reward_bound * spec.reward_bound;
        let denom = libm::pow(1.0 - spec.gamma, 5.0);
        let (bound, bound_density_reading) = match samples.kind {
            EstimatorKind::Wd => (2.0 * m2 * samples.g.g_wd / denom, None),
            EstimatorKind::Sf => (
                m2 * samples.g.g_sf_score / denom,
                Some(m2 * samples.g.g_sf_density / denom),
            ),
        };
        Self {
            kind: samples.kind,
            per_coordinate_variance,
            trace,
            n: samples.len(),
            theta: theta.clone(),
            reward_bound: spec.reward_bound,
            gamma: spec.gamma,
            bound,
            bound_density_reading,
            g: samples.g,
        }
    }
}

pub const MIN_VARIANCE_SAMPLES: usize = 1000;

pub fn gradient_variance<E: Environment>(
    env: &E,
    policy: &GaussianPolicy,
    kind: EstimatorKind,
    n: usize,
    gamma: f64,
    options: EstimatorOptions,
    family: &StreamFamily,
) -> Result<(VarianceReport, GradientSamples)> {
    if n < MIN_VARIANCE_SAMPLES {
        return Err(Error::Precondition(format!(
            "variance estimation needs n >= {MIN_VARIANCE_SAMPLES}, got {n}"
        )));
    }
    let spec = EnvSpec::of(env, gamma)?;
    let samples = gradient_samples(env, policy, kind, n, gamma, options, family)?;
    Ok((
        VarianceReport::from_samples(&samples, policy.theta(), &spec),
        samples,
    ))
}

fn trace_of_rows(samples: &GradientSamples, idx: &[usize]) -> f64 {
    let n = idx.len() as f64;
    (0..samples.dim)
        .map(|j| {
            let col: Vec<f64> = idx
                .iter()
                .map(|&i| samples.data[i * samples.dim + j])
                .collect();
            let m = col.iter().sum::<f64>() / n;
            col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingTest {
    pub trace_wd: f64,
    pub trace_sf: f64,
    /// `trace_sf - trace_wd` on the full samples.
    pub difference: f64,
    /// Bootstrap lower quantile of the difference at `confidence`.
    pub lower_bound: f64,
    pub confidence: f64,
    pub resamples: usize,
    pub passed: bool,
}

/// One-sided paired bootstrap test of `trace(Var_wd) < trace(Var_sf)`.
/// Row `i` of both sample sets is resampled together.
pub fn variance_ordering(
    wd: &GradientSamples,
    sf: &GradientSamples,
    resamples: usize,
    confidence: f64,
    family: &StreamFamily,
) -> Result<OrderingTest> {
    use rand::Rng;

    if wd.len() != sf.len() || wd.dim != sf.dim {
        return Err(Error::Precondition(
            "paired samples must have matching shapes".into(),
        ));
    }
    let n = wd.len();
    if n < 2 || resamples < 2 {
        return Err(Error::Precondition(
            "need at least two samples and two resamples".into(),
        ));
    }
    let all: Vec<usize> = (0..n).collect();
    let trace_wd = trace_of_rows(wd, &all);
    let trace_sf = trace_of_rows(sf, &all);

    let mut diffs: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = family.stream(b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            trace_of_rows(sf, &idx) - trace_of_rows(wd, &idx)
        })
        .collect();
    diffs.sort_by(f64::total_cmp);
    let lower_bound = stats::quantile(&diffs, 1.0 - confidence);
    Ok(OrderingTest {
        trace_wd,
        trace_sf,
        difference: trace_sf - trace_wd,
        lower_bound,
        confidence,
        resamples,
        passed: lower_bound > 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityStats {
    pub iterations: usize,
    /// Mean phantom transitions per iteration.
    pub mean_per_iter: f64,
    pub std_error: f64,
    /// `2 / (1 - gamma)`: two rollouts of `T + 1` transitions each.
    pub predicted: f64,
    /// `(1 + gamma) / (1 - gamma)`, which counts `T` transitions per rollout.
    pub t_convention: f64,
    /// `predicted - t_convention`, always 1.
    pub convention_offset: f64,
    /// Standard deviation of `2 (T + 1)`: `2 sqrt(gamma) / (1 - gamma)`.
    pub predicted_sd: f64,
}

pub fn sample_complexity_stats(history: &[IterateRecord], gamma: f64) -> Result<ComplexityStats> {
    if history.is_empty() {
        return Err(Error::Precondition("history is empty".into()));
    }
    validate_gamma(gamma)?;
    let per_iter: Vec<f64> = history.iter().map(|r| r.grad.transitions as f64).collect();
    let predicted = 2.0 / (1.0 - gamma);
    let t_convention = (1.0 + gamma) / (1.0 - gamma);
    Ok(ComplexityStats {
        iterations: history.len(),
        mean_per_iter: stats::mean(&per_iter),
        std_error: stats::std_error(&per_iter),
        predicted,
        t_convention,
        convention_offset: predicted - t_convention,
        predicted_sd: 2.0 * gamma.sqrt() / (1.0 - gamma),
    })
}

/// Running minimum of the squared norm of the trailing `batch`-mean of
/// gradient estimates, one entry per iterate.
pub fn stationarity_trace(history: &[IterateRecord], batch: usize) -> Vec<(u64, f64)> {
    let batch = batch.max(1);
    let mut best = f64::INFINITY;
    let mut out = Vec::with_capacity(history.len());
    for (i, rec) in history.iter().enumerate() {
        let start = (i + 1).saturating_sub(batch);
        let window = &history[start..=i];
        let d = rec.grad.vector.len();
        let norm_sq: f64 = (0..d)
            .map(|j| {
                let m = window.iter().map(|r| r.grad.vector[j]).sum::<f64>() / window.len() as f64;
                m * m
            })
            .sum();
        best = best.min(norm_sq);
        out.push((rec.k, best));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ConstReward, GaussianBandit, Pendulum};
    use crate::optimizer::{train, TrainConfig};
    use crate::policy::FeatureMap;

    fn bias_policy(theta: f64) -> GaussianPolicy {
        GaussianPolicy::new(vec![theta].into(), 1.0, FeatureMap::Bias).unwrap()
    }

    #[test]
    fn const_env_return_is_closed_form() {
        let fam = StreamFamily::new(1, "eval");
        let est = evaluate_return(&ConstReward, &bias_policy(0.0), 20, 0.9, 30, &fam).unwrap();
        let expected = (1.0 - 0.9f64.powi(31)) / 0.1;
        assert!((est.mean - expected).abs() < 1e-12);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn pendulum_tail_bound() {
        let m = Pendulum::default().reward_bound();
        let tb = tail_bound(0.97, m, 500);
        assert!((tb - 1.2794e-4).abs() < 1e-7, "{tb}");
        assert_eq!(truncation_for(0.97, m, tb), 500);
    }

    #[test]
    fn truncation_for_is_minimal() {
        for (g, m, tol) in [(0.9, 1.0, 1e-6), (0.97, 16.27, 1e-3), (0.5, 2.0, 10.0)] {
            let t = truncation_for(g, m, tol);
            assert!(tail_bound(g, m, t) <= tol);
            if t > 0 {
                assert!(tail_bound(g, m, t - 1) > tol);
            }
        }
    }

    #[test]
    fn bandit_return_at_optimum() {
        let fam = StreamFamily::new(2, "eval");
        let est =
            evaluate_return(&GaussianBandit, &bias_policy(1.0), 100_000, 0.9, 150, &fam).unwrap();
        let expected = 1.0 / 3f64.sqrt() / 0.1;
        assert!(
            (est.mean - expected).abs() < 3.0 * est.std_error + est.tail_bound,
            "{est:?}"
        );
    }

    #[test]
    fn fd_gradient_const_env_is_exactly_zero() {
        let fam = StreamFamily::new(3, "fd");
        let fd =
            finite_difference_gradient(&ConstReward, &bias_policy(0.3), 1e-2, 100, 0.9, 50, &fam)
                .unwrap();
        assert_eq!(fd.gradient, vec![0.0]);
    }

    #[test]
    fn fd_gradient_vanishes_at_bandit_optimum() {
        let fam = StreamFamily::new(3, "fd");
        let fd = finite_difference_gradient(
            &GaussianBandit,
            &bias_policy(1.0),
            1e-2,
            50_000,
            0.9,
            150,
            &fam,
        )
        .unwrap();
        assert!(fd.gradient[0].abs() < 3.0 * fd.std_error[0], "{fd:?}");
    }

    #[test]
    fn fd_rejects_bad_step() {
        let fam = StreamFamily::new(3, "fd");
        assert!(
            finite_difference_gradient(&ConstReward, &bias_policy(0.0), 0.0, 10, 0.9, 5, &fam)
                .is_err()
        );
    }

    #[test]
    fn const_env_weak_derivative_variance_is_zero() {
        let fam = StreamFamily::new(4, "var");
        let (rep, _) = gradient_variance(
            &ConstReward,
            &bias_policy(0.0),
            EstimatorKind::Wd,
            2000,
            0.9,
            Default::default(),
            &fam,
        )
        .unwrap();
        assert_eq!(rep.trace, 0.0);
        assert!(rep.bound > 0.0);
    }

    #[test]
    fn variance_needs_enough_samples() {
        let fam = StreamFamily::new(4, "var");
        assert!(gradient_variance(
            &ConstReward,
            &bias_policy(0.0),
            EstimatorKind::Wd,
            10,
            0.9,
            Default::default(),
            &fam
        )
        .is_err());
    }

    #[test]
    fn g_statistics_match_monte_carlo() {
        // Independent check of the closed-form action integrals.
        use crate::policy::gaussian_density;
        use rand::Rng;
        use rand_distr::StandardNormal;
        let sigma = 1.3;
        let phi = [0.4, -1.1];
        let phi_sq: f64 = phi.iter().map(|p| p * p).sum();
        let [g_wd, g_score, g_density] = g_terms(phi_sq, sigma);
        let mut rng = StreamFamily::new(5, "g").stream(0);
        let n = 400_000;
        let (mut s_score, mut s_dens) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let a = sigma * z;
            let score_sq = (a / (sigma * sigma)).powi(2) * phi_sq;
            s_score += score_sq;
            s_dens += gaussian_density(a, 0.0, sigma).powi(2) * score_sq;
        }
        assert!((s_score / n as f64 / g_score - 1.0).abs() < 0.01);
        assert!((s_dens / n as f64 / g_density - 1.0).abs() < 0.01);
        assert!((g_wd - phi_sq / (2.0 * PI * sigma * sigma)).abs() < 1e-15);
        assert!((g_wd / g_score - 1.0 / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn samples_are_independent_of_worker_count() {
        let fam = StreamFamily::new(6, "w");
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    gradient_samples(
                        &GaussianBandit,
                        &bias_policy(0.0),
                        EstimatorKind::Sf,
                        5000,
                        0.9,
                        Default::default(),
                        &fam,
                    )
                    .unwrap()
                })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn complexity_convention_offset_is_one() {
        let cfg = TrainConfig {
            iterations: 50,
            gamma: 0.9,
            step_scale: 0.1,
            ..Default::default()
        };
        let run = train(&GaussianBandit, &bias_policy(0.0), &cfg).unwrap();
        for gamma in [0.1, 0.5, 0.9, 0.97, 0.999] {
            let s = sample_complexity_stats(&run.records, gamma).unwrap();
            assert!((s.convention_offset - 1.0).abs() < 1e-9);
        }
        assert!(sample_complexity_stats(&[], 0.9).is_err());
    }

    #[test]
    fn complexity_with_tiny_gamma_is_two() {
        let cfg = TrainConfig {
            iterations: 200,
            gamma: 1e-9,
            step_scale: 0.1,
            ..Default::default()
        };
        let run = train(&GaussianBandit, &bias_policy(0.0), &cfg).unwrap();
        let s = sample_complexity_stats(&run.records, 1e-9).unwrap();
        assert_eq!(s.mean_per_iter, 2.0);
    }

    #[test]
    fn stationarity_trace_is_monotone() {
        let cfg = TrainConfig {
            iterations: 400,
            gamma: 0.9,
            step_scale: 0.5,
            ..Default::default()
        };
        let run = train(&GaussianBandit, &bias_policy(-1.0), &cfg).unwrap();
        for batch in [1, 10] {
            let tr = stationarity_trace(&run.records, batch);
            assert_eq!(tr.len(), 400);
            assert!(tr.windows(2).all(|w| w[1].1 <= w[0].1));
            assert!(tr.last().unwrap().1 < tr[0].1);
        }
        let run = train(&ConstReward, &bias_policy(0.0), &cfg).unwrap();
        assert!(stationarity_trace(&run.records, 1)
            .iter()
            .all(|&(_, v)| v == 0.0));
    }
}
