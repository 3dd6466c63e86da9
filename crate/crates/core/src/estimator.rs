//! Random-horizon rollouts and stochastic policy-gradient estimators.
//!
//! Rewards are accumulated for `t = 0..=T` inclusive with
//! `P(T = t) = (1 - gamma) gamma^t`, so `P(T >= k) = gamma^k` and the
//! undiscounted path reward is an unbiased sample of `Q(x0, a0)`.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::env::{validate_gamma, EnvState, Environment};
use crate::error::{Error, Result};
use crate::policy::{Component, GaussianPolicy};
use crate::rng::Stream;

/// Draws `T ~ Geom(1 - gamma)` on `{0, 1, 2, ...}` by inverse CDF.
pub fn sample_horizon<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> u64 {
    debug_assert!(gamma > 0.0 && gamma < 1.0);
    let u: f64 = rng.sample(Open01);
    let t = (libm::log(u) / libm::log(gamma)).floor();
    // `as` saturates for values beyond u64::MAX
    t as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// Undiscounted reward sum over `t = 0..=horizon`.
    pub path_reward: f64,
    pub horizon: u64,
    pub transitions_used: u64,
    pub final_state: EnvState,
}

/// Runs one phantom rollout from `(x0, a0)`; later actions come from `policy`.
pub fn rollout_return<E, R>(
    env: &E,
    x0: &EnvState,
    a0: f64,
    policy: &GaussianPolicy,
    horizon: u64,
    rng: &mut R,
) -> Result<RolloutResult>
where
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    let mut state = x0.clone();
    let mut action = a0;
    let mut total = 0.0;
    for t in 0..=horizon {
        let (next, reward) = env.step(&state, action)?;
        total += reward;
        state = next;
        if t < horizon {
            action = policy.sample_action(&state, rng)?;
        }
    }
    Ok(RolloutResult {
        path_reward: total,
        horizon,
        transitions_used: horizon + 1,
        final_state: state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    /// Weak derivative (Jordan decomposition).
    Wd,
    /// Score function.
    Sf,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Wd => "wd",
            Self::Sf => "sf",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimateAux {
    Wd {
        normalizer: Vec<f64>,
        return_plus: f64,
        return_minus: f64,
    },
    Sf {
        score: Vec<f64>,
        path_return: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub vector: Vec<f64>,
    pub kind: EstimatorKind,
    pub horizon: u64,
    pub gamma: f64,
    pub aux: EstimateAux,
    /// Phantom transitions consumed by the estimate.
    pub transitions: u64,
}

impl GradientEstimate {
    /// Recomputes the gradient vector from the auxiliary record.
    pub fn reconstruct(&self) -> Vec<f64> {
        match &self.aux {
            EstimateAux::Wd {
                normalizer,
                return_plus,
                return_minus,
            } => scaled(normalizer, return_plus - return_minus, self.gamma),
            EstimateAux::Sf { score, path_return } => scaled(score, *path_return, self.gamma),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.vector.iter().all(|v| v.is_finite())
    }
}

fn scaled(direction: &[f64], value: f64, gamma: f64) -> Vec<f64> {
    let factor = value / (1.0 - gamma);
    direction.iter().map(|d| d * factor).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Reuse one continuation stream for both phantom rollouts of the
    /// weak-derivative estimator.
    pub common_noise: bool,
}

/// Weak-derivative gradient estimate at start state `x0`.
///
/// One horizon is shared by both phantom rollouts; their initial actions come
/// from the positive and negative components and later actions from the
/// policy itself.
pub fn pgjd_gradient<E, R>(
    env: &E,
    policy: &GaussianPolicy,
    x0: &EnvState,
    gamma: f64,
    options: EstimatorOptions,
    rng: &mut R,
) -> Result<GradientEstimate>
where
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    validate_gamma(gamma)?;
    let horizon = sample_horizon(gamma, rng);
    let pair = policy.jordan_decompose(x0)?;
    let a_plus = pair.sample(Component::Positive, rng);
    let a_minus = pair.sample(Component::Negative, rng);

    let seed_plus: u64 = rng.random();
    let seed_minus: u64 = if options.common_noise {
        seed_plus
    } else {
        rng.random()
    };
    let plus = rollout_return(
        env,
        x0,
        a_plus,
        policy,
        horizon,
        &mut Stream::seed_from_u64(seed_plus),
    )?;
    let minus = rollout_return(
        env,
        x0,
        a_minus,
        policy,
        horizon,
        &mut Stream::seed_from_u64(seed_minus),
    )?;
    debug_assert_eq!(plus.horizon, minus.horizon);

    let vector = scaled(
        &pair.normalizer,
        plus.path_reward - minus.path_reward,
        gamma,
    );
    Ok(GradientEstimate {
        vector,
        kind: EstimatorKind::Wd,
        horizon,
        gamma,
        aux: EstimateAux::Wd {
            normalizer: pair.normalizer,
            return_plus: plus.path_reward,
            return_minus: minus.path_reward,
        },
        transitions: plus.transitions_used + minus.transitions_used,
    })
}

/// Score-function gradient estimate at start state `x0`.
pub fn pgsf_gradient<E, R>(
    env: &E,
    policy: &GaussianPolicy,
    x0: &EnvState,
    gamma: f64,
    rng: &mut R,
) -> Result<GradientEstimate>
where
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    validate_gamma(gamma)?;
    let horizon = sample_horizon(gamma, rng);
    let a0 = policy.sample_action(x0, rng)?;
    pgsf_gradient_from(env, policy, x0, a0, horizon, gamma, rng)
}

/// Score-function estimate with a given initial action and horizon.
pub fn pgsf_gradient_from<E, R>(
    env: &E,
    policy: &GaussianPolicy,
    x0: &EnvState,
    a0: f64,
    horizon: u64,
    gamma: f64,
    rng: &mut R,
) -> Result<GradientEstimate>
where
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    let score = policy.score(x0, a0)?;
    let rollout = rollout_return(env, x0, a0, policy, horizon, rng)?;
    let vector = scaled(&score, rollout.path_reward, gamma);
    Ok(GradientEstimate {
        vector,
        kind: EstimatorKind::Sf,
        horizon,
        gamma,
        aux: EstimateAux::Sf {
            score,
            path_return: rollout.path_reward,
        },
        transitions: rollout.transitions_used,
    })
}

pub fn estimate_gradient<E, R>(
    kind: EstimatorKind,
    env: &E,
    policy: &GaussianPolicy,
    x0: &EnvState,
    gamma: f64,
    options: EstimatorOptions,
    rng: &mut R,
) -> Result<GradientEstimate>
where
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    match kind {
        EstimatorKind::Wd => pgjd_gradient(env, policy, x0, gamma, options, rng),
        EstimatorKind::Sf => pgsf_gradient(env, policy, x0, gamma, rng),
    }
}

/// Exact draw from the discounted occupancy measure started at `x_init`:
/// runs the real dynamics for `T' ~ Geom(1 - gamma)` steps under `policy`.
/// Returns the state and the number of transitions taken.
pub fn ergodic_state<E, R>(
    env: &E,
    policy: &GaussianPolicy,
    x_init: &EnvState,
    gamma: f64,
    rng: &mut R,
) -> Result<(EnvState, u64)>
where
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    validate_gamma(gamma)?;
    let steps = sample_horizon(gamma, rng);
    let mut state = x_init.clone();
    for _ in 0..steps {
        let a = policy.sample_action(&state, rng)?;
        state = env.step(&state, a)?.0;
    }
    if !state.is_finite() {
        return Err(Error::Numeric("ergodic state".into()));
    }
    Ok((state, steps))
}
