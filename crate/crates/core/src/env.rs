//! Bounded-reward MDP simulators.
//!
//! Environments are stateless transition functions: the caller owns the
//! [`EnvState`] and threads it through [`Environment::step`]. Every emitted
//! reward is checked against [`Environment::reward_bound`].

use std::f64::consts::PI;

use rand::distr::Uniform;
use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

pub type Coords = SmallVec<[f64; 4]>;

/// Internal environment state. The pendulum stores `(angle, angular velocity)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub coords: Coords,
}

impl EnvState {
    pub fn new(coords: &[f64]) -> Self {
        Self {
            coords: Coords::from_slice(coords),
        }
    }

    pub fn empty() -> Self {
        Self {
            coords: Coords::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }
}

/// Static description of an MDP paired with a discount factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub reward_bound: f64,
    pub gamma: f64,
}

impl EnvSpec {
    pub fn of<E: Environment + ?Sized>(env: &E, gamma: f64) -> Result<Self> {
        let spec = Self {
            state_dim: env.state_dim(),
            action_dim: 1,
            reward_bound: env.reward_bound(),
            gamma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reward_bound.is_finite() && self.reward_bound > 0.0) {
            return Err(Error::Precondition(format!(
                "reward bound must be finite and positive, got {}",
                self.reward_bound
            )));
        }
        validate_gamma(self.gamma)
    }
}

pub fn validate_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "discount must lie strictly inside (0, 1), got {gamma}"
        )))
    }
}

pub trait Environment: Send + Sync {
    fn name(&self) -> &'static str;

    fn state_dim(&self) -> usize;

    /// Supremum of `|r|` over all reachable state-action pairs.
    fn reward_bound(&self) -> f64;

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState;

    /// One transition driven by the raw (unsquashed) policy action.
    /// Returns the next state and the reward of the pre-transition state.
    fn transition(&self, state: &EnvState, action: f64) -> Result<(EnvState, f64)>;

    /// [`Environment::transition`] followed by the reward bound check.
    fn step(&self, state: &EnvState, action: f64) -> Result<(EnvState, f64)> {
        let (next, reward) = self.transition(state, action)?;
        let bound = self.reward_bound();
        if !reward.is_finite() || reward.abs() > bound {
            return Err(Error::RewardBound { reward, bound });
        }
        Ok((next, reward))
    }
}

// ---------------------------------------------------------------------------
// Pendulum swing-up

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_torque: f64,
    pub max_speed: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_torque: 2.0,
            max_speed: 8.0,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gravity", self.gravity),
            ("mass", self.mass),
            ("length", self.length),
            ("dt", self.dt),
            ("max_torque", self.max_torque),
            ("max_speed", self.max_speed),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "pendulum.{name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// `pi^2 + 0.1 max_speed^2 + 0.001 max_torque^2`; 16.2736044 for the defaults.
    pub fn reward_bound(&self) -> f64 {
        PI * PI + 0.1 * self.max_speed * self.max_speed + 0.001 * self.max_torque * self.max_torque
    }
}

/// Maps an angle into `[-pi, pi]`. Angles already in range are returned
/// unchanged, which makes the map exactly idempotent.
pub fn wrap_angle(angle: f64) -> f64 {
    if (-PI..=PI).contains(&angle) {
        return angle;
    }
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    wrapped.clamp(-PI, PI)
}

pub fn pendulum_reward(
    angle: f64,
    ang_vel: f64,
    torque: f64,
    params: &PendulumParams,
) -> Result<f64> {
    if !(angle.is_finite() && ang_vel.is_finite() && torque.is_finite()) {
        return Err(Error::Numeric("pendulum reward inputs".into()));
    }
    if !(-PI..=PI).contains(&angle) {
        return Err(Error::Precondition(format!(
            "angle {angle} outside [-pi, pi]"
        )));
    }
    if ang_vel.abs() > params.max_speed {
        return Err(Error::Precondition(format!(
            "angular velocity {ang_vel} outside +-{}",
            params.max_speed
        )));
    }
    if torque.abs() > params.max_torque {
        return Err(Error::Precondition(format!(
            "torque {torque} outside +-{}",
            params.max_torque
        )));
    }
    Ok(-(angle * angle + 0.1 * ang_vel * ang_vel + 0.001 * torque * torque))
}

/// Semi-implicit Euler step. The reward is that of the incoming state and torque.
pub fn pendulum_step(
    state: &EnvState,
    torque: f64,
    params: &PendulumParams,
) -> Result<(EnvState, f64)> {
    if state.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: state.dim(),
        });
    }
    if !state.is_finite() || !torque.is_finite() {
        return Err(Error::Numeric("pendulum state or torque".into()));
    }
    let (angle, ang_vel) = (state.coords[0], state.coords[1]);
    let reward = pendulum_reward(angle, ang_vel, torque, params)?;

    let PendulumParams {
        gravity: g,
        mass: m,
        length: l,
        dt,
        max_speed,
        ..
    } = *params;
    let new_vel = (ang_vel
        + (3.0 * g / (2.0 * l)) * libm::sin(angle) * dt
        + (3.0 / (m * l * l)) * torque * dt)
        .clamp(-max_speed, max_speed);
    let new_angle = wrap_angle(angle + new_vel * dt);
    Ok((EnvState::new(&[new_angle, new_vel]), reward))
}

pub fn pendulum_reset<R: Rng + ?Sized>(rng: &mut R) -> EnvState {
    let angle = rng.sample(Uniform::new_inclusive(-PI, PI).unwrap());
    let ang_vel = rng.sample(Uniform::new_inclusive(-1.0, 1.0).unwrap());
    EnvState::new(&[angle, ang_vel])
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Pendulum {
    pub params: PendulumParams,
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    /// Raw policy action to applied torque.
    pub fn squash(&self, action: f64) -> f64 {
        self.params.max_torque * libm::tanh(action)
    }
}

impl Environment for Pendulum {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn reward_bound(&self) -> f64 {
        self.params.reward_bound()
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        pendulum_reset(rng)
    }

    fn transition(&self, state: &EnvState, action: f64) -> Result<(EnvState, f64)> {
        if !action.is_finite() {
            return Err(Error::Numeric("pendulum action".into()));
        }
        pendulum_step(state, self.squash(action), &self.params)
    }
}

// ---------------------------------------------------------------------------
// Analytic test environments

/// Single absorbing state with reward `exp(-(a - 1)^2)`.
pub fn bandit_step(state: &EnvState, action: f64) -> (EnvState, f64) {
    let d = action - 1.0;
    (state.clone(), libm::exp(-d * d))
}

/// Single absorbing state with reward identically one.
pub fn const_reward_step(state: &EnvState, _action: f64) -> (EnvState, f64) {
    (state.clone(), 1.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaussianBandit;

impl Environment for GaussianBandit {
    fn name(&self) -> &'static str {
        "bandit"
    }

    fn state_dim(&self) -> usize {
        0
    }

    fn reward_bound(&self) -> f64 {
        1.0
    }

    fn reset<R: Rng + ?Sized>(&self, _rng: &mut R) -> EnvState {
        EnvState::empty()
    }

    fn transition(&self, state: &EnvState, action: f64) -> Result<(EnvState, f64)> {
        if !action.is_finite() {
            return Err(Error::Numeric("bandit action".into()));
        }
        Ok(bandit_step(state, action))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConstReward;

impl Environment for ConstReward {
    fn name(&self) -> &'static str {
        "const"
    }

    fn state_dim(&self) -> usize {
        0
    }

    fn reward_bound(&self) -> f64 {
        1.0
    }

    fn reset<R: Rng + ?Sized>(&self, _rng: &mut R) -> EnvState {
        EnvState::empty()
    }

    fn transition(&self, state: &EnvState, action: f64) -> Result<(EnvState, f64)> {
        Ok(const_reward_step(state, action))
    }
}

/// Deterministic chain `s0 -> s1 -> s1 -> ...`, starting in `s0`.
/// States are encoded as the single coordinate 0.0 or 1.0, which is also
/// the reward.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TwoStateChain;

impl Environment for TwoStateChain {
    fn name(&self) -> &'static str {
        "chain"
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn reward_bound(&self) -> f64 {
        1.0
    }

    fn reset<R: Rng + ?Sized>(&self, _rng: &mut R) -> EnvState {
        EnvState::new(&[0.0])
    }

    fn transition(&self, state: &EnvState, _action: f64) -> Result<(EnvState, f64)> {
        if state.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: state.dim(),
            });
        }
        Ok((EnvState::new(&[1.0]), state.coords[0]))
    }
}

/// Name-selectable environment used by the CLI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnyEnv {
    Pendulum(Pendulum),
    Bandit(GaussianBandit),
    Const(ConstReward),
    Chain(TwoStateChain),
}

impl AnyEnv {
    pub fn from_name(name: &str, pendulum: PendulumParams) -> Result<Self> {
        match name {
            "pendulum" => Ok(Self::Pendulum(Pendulum::new(pendulum)?)),
            "bandit" => Ok(Self::Bandit(GaussianBandit)),
            "const" => Ok(Self::Const(ConstReward)),
            "chain" => Ok(Self::Chain(TwoStateChain)),
            other => Err(Error::Config(format!(
                "unknown environment `{other}` (expected pendulum, bandit, const or chain)"
            ))),
        }
    }
}

macro_rules! dispatch {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            AnyEnv::Pendulum($e) => $body,
            AnyEnv::Bandit($e) => $body,
            AnyEnv::Const($e) => $body,
            AnyEnv::Chain($e) => $body,
        }
    };
}

impl Environment for AnyEnv {
    fn name(&self) -> &'static str {
        dispatch!(self, e => e.name())
    }

    fn state_dim(&self) -> usize {
        dispatch!(self, e => e.state_dim())
    }

    fn reward_bound(&self) -> f64 {
        dispatch!(self, e => e.reward_bound())
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        dispatch!(self, e => e.reset(rng))
    }

    fn transition(&self, state: &EnvState, action: f64) -> Result<(EnvState, f64)> {
        dispatch!(self, e => e.transition(state, action))
    }
}
