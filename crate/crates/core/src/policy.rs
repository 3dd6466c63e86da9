//! Linear-in-features Gaussian policy and its weak-derivative decomposition.
//!
//! For `mu_theta(a | x) = N(theta . phi(x), sigma^2)` the parameter derivative
//! of the density factors as
//!
//! ```text
//! d/dtheta mu_theta(a | x) = g(theta, x) * (mu_plus(a | x) - mu_minus(a | x))
//! g(theta, x)              = phi(x) / sqrt(2 pi sigma^2)
//! mu_plus(a | x)           = (a - m) / sigma^2 * exp(-(a - m)^2 / (2 sigma^2)),  a >= m
//! mu_minus(a | x)          = (m - a) / sigma^2 * exp(-(a - m)^2 / (2 sigma^2)),  a <= m
//! ```
//!
//! with `m = theta . phi(x)`. Both components are Rayleigh laws reflected
//! about the mean, so they have disjoint supports.

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};

use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::env::EnvState;
use crate::error::{Error, Result};

pub type Features = SmallVec<[f64; 4]>;

/// Policy parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// State-to-feature map `phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum FeatureMap {
    /// `(cos angle, sin angle, angular velocity)` from a pendulum state.
    Pendulum,
    /// The constant feature `1`.
    Bias,
    /// Raw state coordinates.
    Identity { dim: usize },
    /// A fixed vector independent of the state.
    Fixed { values: Vec<f64> },
}

impl FeatureMap {
    pub fn from_name(name: &str, state_dim: usize) -> Result<Self> {
        match name {
            "pendulum" => Ok(Self::Pendulum),
            "bias" => Ok(Self::Bias),
            "identity" => Ok(Self::Identity { dim: state_dim }),
            other => Err(Error::Config(format!(
                "unknown feature map `{other}` (expected pendulum, bias or identity)"
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Pendulum => 3,
            Self::Bias => 1,
            Self::Identity { dim } => *dim,
            Self::Fixed { values } => values.len(),
        }
    }

    pub fn evaluate(&self, x: &EnvState) -> Result<Features> {
        let out: Features = match self {
            Self::Pendulum => {
                if x.dim() != 2 {
                    return Err(Error::DimensionMismatch {
                        expected: 2,
                        got: x.dim(),
                    });
                }
                let (angle, vel) = (x.coords[0], x.coords[1]);
                smallvec::smallvec![libm::cos(angle), libm::sin(angle), vel]
            }
            Self::Bias => smallvec::smallvec![1.0],
            Self::Identity { dim } => {
                if x.dim() != *dim {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        got: x.dim(),
                    });
                }
                x.coords.iter().copied().collect()
            }
            Self::Fixed { values } => values.iter().copied().collect(),
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("feature vector".into()));
        }
        Ok(out)
    }
}

pub fn gaussian_density(a: f64, mean: f64, sigma: f64) -> f64 {
    let z = (a - mean) / sigma;
    libm::exp(-0.5 * z * z) / (2.0 * PI * sigma * sigma).sqrt()
}

/// `N(theta . phi(x), sigma^2)` with fixed `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    theta: ParamVector,
    sigma: f64,
    features: FeatureMap,
}

impl GaussianPolicy {
    pub fn new(theta: ParamVector, sigma: f64, features: FeatureMap) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::Config(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        if theta.len() != features.dim() {
            return Err(Error::DimensionMismatch {
                expected: features.dim(),
                got: theta.len(),
            });
        }
        if !theta.is_finite() {
            return Err(Error::Numeric("policy parameters".into()));
        }
        Ok(Self {
            theta,
            sigma,
            features,
        })
    }

    pub fn theta(&self) -> &ParamVector {
        &self.theta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn with_theta(&self, theta: ParamVector) -> Result<Self> {
        Self::new(theta, self.sigma, self.features.clone())
    }

    pub fn mean(&self, x: &EnvState) -> Result<f64> {
        let phi = self.features.evaluate(x)?;
        Ok(self.theta.dot(&phi))
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, x: &EnvState, rng: &mut R) -> Result<f64> {
        let m = self.mean(x)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(m + self.sigma * z)
    }

    pub fn density(&self, x: &EnvState, a: f64) -> Result<f64> {
        Ok(gaussian_density(a, self.mean(x)?, self.sigma))
    }

    /// `((a - m) / sigma^2) phi(x)`, the gradient of `log mu_theta(a | x)`.
    pub fn score(&self, x: &EnvState, a: f64) -> Result<Vec<f64>> {
        let phi = self.features.evaluate(x)?;
        let scale = (a - self.theta.dot(&phi)) / (self.sigma * self.sigma);
        Ok(phi.iter().map(|p| scale * p).collect())
    }

    pub fn jordan_decompose(&self, x: &EnvState) -> Result<JordanPair> {
        let phi = self.features.evaluate(x)?;
        Ok(JordanPair::new(&phi, self.theta.dot(&phi), self.sigma))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    Positive,
    Negative,
}

/// Normalizer and component measures of the weak derivative at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct JordanPair {
    pub normalizer: Vec<f64>,
    pub mean: f64,
    pub sigma: f64,
}

impl JordanPair {
    pub fn new(features: &[f64], mean: f64, sigma: f64) -> Self {
        let norm = (2.0 * PI * sigma * sigma).sqrt();
        Self {
            normalizer: features.iter().map(|p| p / norm).collect(),
            mean,
            sigma,
        }
    }

    /// Rayleigh radius `sigma * sqrt(-2 ln U)`, `U ~ Uniform(0, 1)` exclusive.
    fn radius<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.sigma * (-2.0 * libm::log(u)).sqrt()
    }

    pub fn sample_positive<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.mean + self.radius(rng)
    }

    pub fn sample_negative<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.mean - self.radius(rng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, component: Component, rng: &mut R) -> f64 {
        match component {
            Component::Positive => self.sample_positive(rng),
            Component::Negative => self.sample_negative(rng),
        }
    }

    pub fn density(&self, a: f64, component: Component) -> f64 {
        let offset = match component {
            Component::Positive => a - self.mean,
            Component::Negative => self.mean - a,
        };
        if offset <= 0.0 {
            return 0.0;
        }
        let s2 = self.sigma * self.sigma;
        offset / s2 * libm::exp(-offset * offset / (2.0 * s2))
    }

    /// Analytic CDF of a component, used by distribution tests.
    pub fn cdf(&self, a: f64, component: Component) -> f64 {
        let s2 = self.sigma * self.sigma;
        let tail = |r: f64| libm::exp(-r * r / (2.0 * s2));
        match component {
            Component::Positive if a <= self.mean => 0.0,
            Component::Positive => 1.0 - tail(a - self.mean),
            Component::Negative if a >= self.mean => 1.0,
            Component::Negative => tail(self.mean - a),
        }
    }

    /// `g_i (mu_plus(a) - mu_minus(a))` for every parameter coordinate `i`.
    pub fn signed_derivative(&self, a: f64) -> Vec<f64> {
        let diff = self.density(a, Component::Positive) - self.density(a, Component::Negative);
        self.normalizer.iter().map(|g| g * diff).collect()
    }
}
