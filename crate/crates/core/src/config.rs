//! Run configuration, loaded from YAML.
//!
//! ```yaml
//! environment: crossing-9x9
//! episodes: 100
//! max_steps: 100        # or `native` for MiniGrid's 4 * size^2
//! seed: 2024
//! policy:
//!   kind: llm
//!   strategy: { cot: true, df: true }
//! model:
//!   name: qwen2.5:1.5b
//!   endpoint: http://localhost:11434
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::gridworld::{ConfigId, StartRule, DEFAULT_MAX_STEPS};
use crate::policy::{ActionSpace, ModelSettings, PolicyKind, PolicySpec};
use crate::prompt::StrategyFlags;
use crate::rl_baseline::TrainParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] serde_yaml::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Episode step limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Steps(u32),
    /// MiniGrid's per-environment default.
    Native,
}

impl Default for Horizon {
    fn default() -> Self {
        Horizon::Steps(DEFAULT_MAX_STEPS)
    }
}

impl Horizon {
    pub fn resolve(self, config: ConfigId) -> u32 {
        match self {
            Horizon::Steps(n) => n,
            Horizon::Native => config.native_max_steps(),
        }
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::Steps(n) => write!(f, "{n}"),
            Horizon::Native => f.write_str("native"),
        }
    }
}

impl std::str::FromStr for Horizon {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("native") {
            Ok(Horizon::Native)
        } else {
            s.parse::<u32>()
                .map(Horizon::Steps)
                .map_err(|_| format!("max_steps must be a positive integer or `native`, got `{s}`"))
        }
    }
}

impl Serialize for Horizon {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Horizon::Steps(n) => s.serialize_u32(*n),
            Horizon::Native => s.serialize_str("native"),
        }
    }
}

impl<'de> Deserialize<'de> for Horizon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u32),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(Horizon::Steps(n)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Whether every policy row sees the same layouts and starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    #[default]
    Paired,
    Independent,
}

fn default_episodes() -> u32 {
    100
}

fn default_invalid_retries() -> u32 {
    3
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Row label in reports; derived from the policy when absent.
    #[serde(default)]
    pub label: Option<String>,
    pub environment: ConfigId,
    #[serde(default)]
    pub start: StartRule,
    #[serde(default = "default_episodes")]
    pub episodes: u32,
    #[serde(default)]
    pub max_steps: Horizon,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pairing: Pairing,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub policy: PolicySpec,
    #[serde(default)]
    pub model: ModelSettings,
    /// Character budget for step prompts.
    #[serde(default)]
    pub prompt_budget: Option<usize>,
    /// Write `steps.jsonl`.
    #[serde(default = "default_true")]
    pub log_steps: bool,
    /// Re-runs allowed per episode after backend failures.
    #[serde(default = "default_invalid_retries")]
    pub max_invalid_retries: u32,
    /// Run episodes on several threads; defaults to on for non-LLM policies.
    #[serde(default)]
    pub parallel: Option<bool>,
}

impl RunConfig {
    pub fn new(environment: ConfigId, policy: PolicySpec) -> Self {
        Self {
            label: None,
            environment,
            start: StartRule::default(),
            episodes: default_episodes(),
            max_steps: Horizon::default(),
            seed: 0,
            pairing: Pairing::default(),
            output_dir: None,
            policy,
            model: ModelSettings::default(),
            prompt_budget: None,
            log_steps: true,
            max_invalid_retries: default_invalid_retries(),
            parallel: None,
        }
    }

    /// Named presets: `random`, `random-nav`, `rl`, `oracle`, or a strategy
    /// label such as `hwbp+cot+df`. The random and RL baselines run at the
    /// environment's native horizon.
    pub fn preset(environment: ConfigId, name: &str) -> Result<Self, ConfigError> {
        let cfg = match name.trim().to_ascii_lowercase().as_str() {
            "random" => Self {
                max_steps: Horizon::Native,
                ..Self::new(environment, PolicySpec::of_kind(PolicyKind::Random))
            },
            "random-nav" => Self::new(
                environment,
                PolicySpec {
                    action_space: ActionSpace::Navigation,
                    ..PolicySpec::of_kind(PolicyKind::Random)
                },
            ),
            "rl" => Self {
                max_steps: Horizon::Native,
                ..Self::new(environment, PolicySpec::of_kind(PolicyKind::RlGreedy))
            },
            "oracle" => Self::new(environment, PolicySpec::of_kind(PolicyKind::ScriptedOracle)),
            other => {
                let flags = StrategyFlags::parse_label(other)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Self::new(environment, PolicySpec::llm(flags))
            }
        };
        Ok(cfg)
    }

    pub fn from_yaml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_yaml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_yaml(&text)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.policy.default_label())
    }

    pub fn max_steps(&self) -> u32 {
        self.max_steps.resolve(self.environment)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if let Some(l) = &self.label {
            if l.trim().is_empty() {
                return bad("label must not be empty");
            }
        }
        if self.episodes == 0 {
            return bad("episodes must be at least 1");
        }
        if self.max_steps() == 0 {
            return bad("max_steps must be at least 1");
        }
        if self.policy.memory_capacity == 0 {
            return bad("memory_capacity must be at least 1");
        }
        self.policy
            .strategy
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.policy.kind == PolicyKind::Llm {
            if self.model.name.trim().is_empty() {
                return bad("model.name must not be empty");
            }
            if self.model.timeout_secs <= 0.0 {
                return bad("model.timeout_secs must be positive");
            }
        }
        if let Some(t) = &self.policy.train {
            t.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }
}

/// Parses a bare training-parameter block.
pub fn parse_train_params(text: &str) -> Result<TrainParams, ConfigError> {
    let params: TrainParams = serde_yaml::from_str(text)?;
    params
        .validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let cfg = RunConfig::from_yaml(
            r#"
label: HWBP + CoT (qwen)
environment: crossing-9x9
episodes: 10
max_steps: native
seed: 7
policy:
  kind: llm
  strategy: { cot: true, df: true }
  retry_budget: 1
model:
  name: qwen2.5:1.5b
  endpoint: http://127.0.0.1:11434
  temperature: 0.2
"#,
        )
        .unwrap();
        assert_eq!(cfg.environment, ConfigId::Crossing9x9);
        assert_eq!(cfg.max_steps(), 324);
        assert!(cfg.policy.strategy.cot && cfg.policy.strategy.df);
        assert_eq!(cfg.policy.retry_budget, 1);
        assert_eq!(cfg.model.name, "qwen2.5:1.5b");
        assert_eq!(cfg.model.path, "/api/generate");
        assert_eq!(cfg.label(), "HWBP + CoT (qwen)");
    }

    #[test]
    fn defaults() {
        let cfg = RunConfig::from_yaml("environment: empty-16x16\npolicy: { kind: random }\n").unwrap();
        assert_eq!(cfg.episodes, 100);
        assert_eq!(cfg.max_steps(), 100);
        assert_eq!(cfg.label(), "Random");
        assert_eq!(cfg.start, StartRule::Corner);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "environment: empty-16x16\nlabel: ''\npolicy: { kind: random }\n",
            "environment: empty-16x16\nepisodes: 0\npolicy: { kind: random }\n",
            "environment: empty-16x16\nmax_steps: 0\npolicy: { kind: random }\n",
            "environment: lava\npolicy: { kind: random }\n",
            "environment: empty-16x16\npolicy: { kind: llm, strategy: { pf_across_episodes: true } }\n",
            "environment: empty-16x16\npolicy: { kind: random }\nbogus: 1\n",
        ] {
            assert!(RunConfig::from_yaml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn presets() {
        let r = RunConfig::preset(ConfigId::Empty16x16, "random").unwrap();
        assert_eq!(r.max_steps(), 1024);
        let l = RunConfig::preset(ConfigId::Empty16x16, "hwbp+crf").unwrap();
        assert_eq!(l.label(), "HWBP + CRF");
        assert_eq!(l.max_steps(), 100);
        assert!(RunConfig::preset(ConfigId::Empty16x16, "ppo").is_err());
    }

    #[test]
    fn yaml_round_trip() {
        let cfg = RunConfig::preset(ConfigId::Crossing9x9, "hwbp+cot+pf").unwrap();
        assert_eq!(RunConfig::from_yaml(&cfg.to_yaml()).unwrap(), cfg);
    }
}
