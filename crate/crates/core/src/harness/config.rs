//! Experiment configuration and its TOML representation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::envs::{chain_fixture, hard_mdp, random_mdp, HardMdpSpec};
use crate::mdp::TabularMdp;
use crate::seeding::{derive_u64, StreamPurpose};

fn default_concentration() -> f64 {
    1.0
}

/// Which environment an experiment runs against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Hard(HardMdpSpec),
    Random {
        states: usize,
        actions: usize,
        horizon: usize,
        #[serde(default = "default_concentration")]
        concentration: f64,
        /// Generator seed; derived from the experiment seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Chain {
        horizon: usize,
    },
    File {
        path: PathBuf,
    },
}

impl EnvSpec {
    /// Builds the MDP. Randomly generated environments are shared by all
    /// replicas of an experiment.
    pub fn build(&self, base_seed: u64) -> Result<TabularMdp, HarnessError> {
        Ok(match self {
            EnvSpec::Hard(spec) => hard_mdp(spec)?,
            EnvSpec::Random {
                states,
                actions,
                horizon,
                concentration,
                seed,
            } => {
                if *states == 0 || *actions == 0 || *horizon == 0 {
                    return Err(HarnessError::Config(
                        "random environment needs S, A, H >= 1".into(),
                    ));
                }
                if !(*concentration > 0.0 && concentration.is_finite()) {
                    return Err(HarnessError::Config(format!(
                        "concentration must be positive, got {concentration}"
                    )));
                }
                let seed = seed.unwrap_or_else(|| derive_u64(base_seed, 0, StreamPurpose::Generator));
                random_mdp(*states, *actions, *horizon, *concentration, seed)
            }
            EnvSpec::Chain { horizon } => chain_fixture(*horizon)?,
            EnvSpec::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
                    path: path.clone(),
                    source,
                })?;
                TabularMdp::from_json(&text)?
            }
        })
    }
}

/// Which learner an experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSpec {
    /// `epsilon = inf` selects noise-free counters.
    Pucb { epsilon: f64, beta: f64 },
    Ubev { beta: f64 },
    Random,
}

impl AgentSpec {
    pub fn label(&self) -> String {
        match self {
            AgentSpec::Pucb { epsilon, .. } if epsilon.is_infinite() => "pucb(eps=inf)".into(),
            AgentSpec::Pucb { epsilon, .. } => format!("pucb(eps={epsilon})"),
            AgentSpec::Ubev { .. } => "ubev".into(),
            AgentSpec::Random => "random".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    /// One JSON object per line.
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "jsonl",
        }
    }
}

fn default_replicas() -> usize {
    1
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub episodes: usize,
    /// PAC accuracy: an episode is suboptimal when its gap exceeds `alpha`.
    pub alpha: f64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub env: EnvSpec,
    pub agent: AgentSpec,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.episodes == 0 {
            return bad("episodes must be at least 1".into());
        }
        if self.replicas == 0 {
            return bad("replicas must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        match self.agent {
            AgentSpec::Pucb { epsilon, beta } => {
                if epsilon.is_nan() || epsilon <= 0.0 {
                    return bad(format!(
                        "epsilon must be > 0 (or inf for noise-free), got {epsilon}"
                    ));
                }
                check_beta(beta)?;
            }
            AgentSpec::Ubev { beta } => check_beta(beta)?,
            AgentSpec::Random => {}
        }
        if let EnvSpec::Hard(spec) = &self.env {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("experiment config is serializable")
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

fn check_beta(beta: f64) -> Result<(), HarnessError> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("beta must lie in (0, 1), got {beta}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
episodes = 500
alpha = 0.2
replicas = 4
seed = 11
format = "json"

[env]
kind = "hard"
n = 2
m = 1
alpha_prime = 0.3
horizon = 2
optimal_arms = [1, 0]

[agent]
kind = "pucb"
epsilon = inf
beta = 0.05
"#;

    #[test]
    fn parses_sample_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.workers, 1);
        assert_eq!(cfg.format, OutputFormat::Json);
        match cfg.agent {
            AgentSpec::Pucb { epsilon, beta } => {
                assert!(epsilon.is_infinite());
                assert_eq!(beta, 0.05);
            }
            other => panic!("unexpected agent {other:?}"),
        }
        cfg.validate().unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let unknown = SAMPLE.replace("seed = 11", "seed = 11\nspeed = 3");
        assert!(ExperimentConfig::from_toml_str(&unknown).is_err());

        let mut cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        cfg.agent = AgentSpec::Pucb {
            epsilon: 0.0,
            beta: 0.05,
        };
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
        cfg.agent = AgentSpec::Ubev { beta: 1.0 };
        assert!(cfg.validate().is_err());
        cfg.agent = AgentSpec::Random;
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());
        cfg.alpha = 0.1;
        cfg.episodes = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn random_env_is_shared_and_seeded() {
        let spec = EnvSpec::Random {
            states: 3,
            actions: 2,
            horizon: 2,
            concentration: 1.0,
            seed: None,
        };
        assert_eq!(spec.build(5).unwrap(), spec.build(5).unwrap());
        assert_ne!(spec.build(5).unwrap(), spec.build(6).unwrap());
    }
}
