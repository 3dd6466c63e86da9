//! Stochastic gradient ascent on the policy parameters.

use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, EnvState, Environment};
use crate::error::{Error, Result};
use crate::estimator::{
    ergodic_state, estimate_gradient, EstimatorKind, EstimatorOptions, GradientEstimate,
};
use crate::policy::{GaussianPolicy, ParamVector};
use crate::rng::{Stream, StreamFamily};

/// `c * k^-b`, defined for `k >= 1`.
pub fn step_size(k: u64, exponent: f64, scale: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Precondition("step schedule starts at k = 1".into()));
    }
    Ok(scale * libm::pow(k as f64, -exponent))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartStateMode {
    /// Current state of the real trajectory.
    #[default]
    Real,
    /// Fresh draw from the discounted occupancy measure of a reset state.
    Ergodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub step_exponent: f64,
    pub step_scale: f64,
    pub gamma: f64,
    pub estimator: EstimatorKind,
    pub seed: u64,
    pub eval_every: u64,
    pub start_state: StartStateMode,
    /// Real-trajectory steps between resets.
    pub episode_len: u64,
    pub common_noise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            step_exponent: 0.5,
            step_scale: 1.0,
            gamma: 0.97,
            estimator: EstimatorKind::Wd,
            seed: 0,
            eval_every: 100,
            start_state: StartStateMode::Real,
            episode_len: 200,
            common_noise: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("train.iterations must be at least 1".into()));
        }
        if !(self.step_exponent > 0.0 && self.step_exponent < 1.0) {
            return Err(Error::Config(format!(
                "train.step_exponent must lie in (0, 1), got {}",
                self.step_exponent
            )));
        }
        if !(self.step_scale.is_finite() && self.step_scale > 0.0) {
            return Err(Error::Config(format!(
                "train.step_scale must be positive, got {}",
                self.step_scale
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "train.gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if self.eval_every < 1 {
            return Err(Error::Config("train.eval_every must be at least 1".into()));
        }
        if self.episode_len < 1 {
            return Err(Error::Config("train.episode_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn estimator_options(&self) -> EstimatorOptions {
        EstimatorOptions {
            common_noise: self.common_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub k: u64,
    /// Parameters the gradient was estimated at.
    pub theta: ParamVector,
    pub grad: GradientEstimate,
    pub step: f64,
    /// Real-trajectory (or occupancy-walk) transitions this iteration.
    pub state_transitions: u64,
    /// All environment transitions up to and including this iteration.
    pub cumulative_transitions: u64,
}

impl IterateRecord {
    /// `theta + step * grad`, the parameters after this update.
    pub fn next_theta(&self) -> ParamVector {
        self.theta
            .iter()
            .zip(&self.grad.vector)
            .map(|(t, g)| t + self.step * g)
            .collect::<Vec<_>>()
            .into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Diverged { k: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub records: Vec<IterateRecord>,
    pub final_theta: ParamVector,
    pub status: RunStatus,
}

impl TrainRun {
    /// Parameters after `n` updates, `0 <= n <= records.len()`.
    pub fn theta_after(&self, n: usize) -> &ParamVector {
        if n < self.records.len() {
            &self.records[n].theta
        } else {
            &self.final_theta
        }
    }
}

/// Runs the configured estimator for `config.iterations` updates.
pub fn train<E: Environment>(
    env: &E,
    policy: &GaussianPolicy,
    config: &TrainConfig,
) -> Result<TrainRun> {
    let opts = config.estimator_options();
    let kind = config.estimator;
    let gamma = config.gamma;
    train_with(env, policy, config, |env, policy, x0, rng| {
        estimate_gradient(kind, env, policy, x0, gamma, opts, rng)
    })
}

/// Training loop with a caller-supplied gradient estimator.
///
/// Each iteration advances the real trajectory by one step under the current
/// policy, picks the estimator's start state per `config.start_state`, and
/// applies `theta <- theta + c k^-b * grad`. A non-finite gradient or
/// parameter stops the run with [`RunStatus::Diverged`].
pub fn train_with<E, F>(
    env: &E,
    policy: &GaussianPolicy,
    config: &TrainConfig,
    mut estimator: F,
) -> Result<TrainRun>
where
    E: Environment,
    F: FnMut(&E, &GaussianPolicy, &EnvState, &mut Stream) -> Result<GradientEstimate>,
{
    config.validate()?;
    EnvSpec::of(env, config.gamma)?;

    let family = StreamFamily::new(config.seed, "train");
    let mut real_rng = family.stream(0);
    let mut grad_rng = family.stream(1);

    let mut policy = policy.clone();
    let mut state = env.reset(&mut real_rng);
    let mut episode_steps = 0u64;
    let mut cumulative = 0u64;
    let mut records = Vec::with_capacity(config.iterations as usize);

    for k in 1..=config.iterations {
        let action = policy.sample_action(&state, &mut real_rng)?;
        state = env.step(&state, action)?.0;
        episode_steps += 1;
        let mut state_transitions = 1;

        let x0 = match config.start_state {
            StartStateMode::Real => state.clone(),
            StartStateMode::Ergodic => {
                let init = env.reset(&mut real_rng);
                let (x, walked) = ergodic_state(env, &policy, &init, config.gamma, &mut real_rng)?;
                state_transitions += walked;
                x
            }
        };
        if episode_steps >= config.episode_len {
            state = env.reset(&mut real_rng);
            episode_steps = 0;
        }

        let grad = estimator(env, &policy, &x0, &mut grad_rng)?;
        let step = step_size(k, config.step_exponent, config.step_scale)?;
        cumulative += state_transitions + grad.transitions;
        let record = IterateRecord {
            k,
            theta: policy.theta().clone(),
            grad,
            step,
            state_transitions,
            cumulative_transitions: cumulative,
        };
        let next = record.next_theta();
        let grad_finite = record.grad.is_finite();
        records.push(record);

        if !grad_finite || !next.is_finite() {
            let reason = if grad_finite {
                "parameters overflowed".to_string()
            } else {
                "gradient estimate is not finite".to_string()
            };
            return Ok(TrainRun {
                records,
                final_theta: next,
                status: RunStatus::Diverged { k, reason },
            });
        }
        policy = policy.with_theta(next)?;
    }

    Ok(TrainRun {
        records,
        final_theta: policy.theta().clone(),
        status: RunStatus::Completed,
    })
}
