use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{AnyEnv, Environment, PendulumParams};
use crate::error::{Error, Result};
use crate::optimizer::TrainConfig;
use crate::policy::{FeatureMap, GaussianPolicy, ParamVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: String,
    #[serde(default)]
    pub pendulum: PendulumParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// `pendulum`, `bias` or `identity`.
    pub features: String,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Initial parameters; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
}

fn default_sigma() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Trajectories per return evaluation.
    pub n_traj: usize,
    pub truncation_t: u64,
    /// Matched-seed replicates for `compare`.
    pub seeds: u64,
    pub variance_n: usize,
    pub variance_confidence: f64,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
    pub fd_h: f64,
    pub fd_n: usize,
    pub gradcheck_n: usize,
    pub complexity_iterations: u64,
    /// Parameter points for `gradcheck` and `variance`; `policy.theta0` when empty.
    pub thetas: Vec<Vec<f64>>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            n_traj: 50,
            truncation_t: 500,
            seeds: 10,
            variance_n: 100_000,
            variance_confidence: 0.99,
            bootstrap_resamples: 1000,
            ci_level: 0.95,
            fd_h: 1e-2,
            fd_n: 200_000,
            gradcheck_n: 1_000_000,
            complexity_iterations: 10_000,
            thetas: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every subtask seed is derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/latest")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let env = self.build_env()?;
        self.build_policy(&env)?;
        for theta in &self.analysis.thetas {
            self.build_policy(&env)?.with_theta(theta.clone().into())?;
        }
        let a = &self.analysis;
        if a.n_traj == 0 {
            return Err(Error::Config("analysis.n_traj must be at least 1".into()));
        }
        if a.seeds == 0 {
            return Err(Error::Config("analysis.seeds must be at least 1".into()));
        }
        for (name, level) in [
            ("variance_confidence", a.variance_confidence),
            ("ci_level", a.ci_level),
        ] {
            if !(level > 0.0 && level < 1.0) {
                return Err(Error::Config(format!(
                    "analysis.{name} must lie in (0, 1), got {level}"
                )));
            }
        }
        if !(a.fd_h.is_finite() && a.fd_h > 0.0) {
            return Err(Error::Config(format!(
                "analysis.fd_h must be positive, got {}",
                a.fd_h
            )));
        }
        if a.bootstrap_resamples < 2 || a.fd_n < 2 || a.gradcheck_n < 2 {
            return Err(Error::Config(
                "analysis.bootstrap_resamples, fd_n and gradcheck_n must be at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn build_env(&self) -> Result<AnyEnv> {
        AnyEnv::from_name(&self.env.name, self.env.pendulum)
    }

    pub fn build_policy(&self, env: &AnyEnv) -> Result<GaussianPolicy> {
        let features = FeatureMap::from_name(&self.policy.features, env.state_dim())?;
        let theta = match &self.policy.theta0 {
            Some(t) => ParamVector(t.clone()),
            None => ParamVector::zeros(features.dim()),
        };
        GaussianPolicy::new(theta, self.policy.sigma, features).map_err(|e| match e {
            Error::DimensionMismatch { expected, got } => Error::Config(format!(
                "policy.theta0 has {got} entries but feature map `{}` has {expected}",
                self.policy.features
            )),
            other => Error::Config(format!("policy: {other}")),
        })
    }

    /// Parameter points for `gradcheck` / `variance`.
    pub fn analysis_thetas(&self, base: &GaussianPolicy) -> Vec<ParamVector> {
        if self.analysis.thetas.is_empty() {
            vec![base.theta().clone()]
        } else {
            self.analysis
                .thetas
                .iter()
                .cloned()
                .map(ParamVector)
                .collect()
        }
    }
}
