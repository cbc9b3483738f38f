//! Run configuration as flat `section.key = value` lines.
//!
//! Blank lines and `#` comments are ignored; unknown keys are errors.
//! `agent.preset` (`full` or `desk`) is applied before the other agent keys
//! wherever it appears. Keys left out keep the full-scale defaults.
//!
//! ```text
//! seed = 7
//! env.sizes = 6,8
//! agent.preset = desk
//! agent.episodes = 20000
//! guidance.enabled = true
//! ```
//!
//! The global seed is split into subsystem seeds by fixed offsets so that,
//! for instance, changing the corpus seed never changes training.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::agent::AgentConfig;
#[cfg(test)]
use crate::agent::EpsilonSchedule;
use crate::env::{ArrayDistribution, EnvConfig, RewardSpec};
use crate::tlm::{Interpolation, TlmConfig};

pub const AGENT_SEED_OFFSET: u64 = 1_000_000;
pub const EVAL_SEED_OFFSET: u64 = 2_000_000;
pub const CORPUS_SEED_OFFSET: u64 = 3_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{key}: {message}")]
    BadValue { key: String, message: String },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IoPaths {
    pub corpus: Option<PathBuf>,
    pub tlm: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub tlm: TlmConfig,
    pub guidance_enabled: bool,
    pub guidance_coefficient: f64,
    pub io: IoPaths,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            tlm: TlmConfig::default(),
            guidance_enabled: false,
            guidance_coefficient: RewardSpec::default().guidance_coefficient,
            io: IoPaths::default(),
            seed: 0,
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        message: e.to_string(),
    })
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.split(',').map(|p| value(key, p.trim())).collect()
}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut order = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: idx + 1,
                    message: format!("expected key = value, got {line:?}"),
                });
            };
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() {
                return Err(ConfigError::Syntax {
                    line: idx + 1,
                    message: "empty key".into(),
                });
            }
            if entries.insert(k.clone(), v).is_some() {
                return Err(ConfigError::Syntax {
                    line: idx + 1,
                    message: format!("duplicate key {k}"),
                });
            }
            order.push(k);
        }
        let mut cfg = RunConfig::default();
        if let Some(p) = entries.get("agent.preset") {
            cfg.agent = match p.as_str() {
                "full" => AgentConfig::default(),
                "desk" => AgentConfig::desk(),
                other => return Err(bad("agent.preset", format!("unknown preset {other}"))),
            };
        }
        for k in &order {
            if k != "agent.preset" {
                cfg.set(k, &entries[k])?;
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.as_ref().display())))?;
        RunConfig::parse(&text)
    }

    fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        let r = &mut self.env.rewards;
        let a = &mut self.agent;
        match key {
            "seed" => self.seed = value(key, raw)?,
            "env.sizes" => self.env.sizes = list(key, raw)?,
            "env.step_cap_multiplier" => self.env.step_cap_multiplier = value(key, raw)?,
            "env.array_distribution" => {
                self.env.array_distribution = match raw {
                    "permutation" => ArrayDistribution::Permutation,
                    "with_duplicates" => ArrayDistribution::WithDuplicates,
                    _ => return Err(bad(key, "expected permutation or with_duplicates")),
                }
            }
            "env.step_penalty" => r.step_penalty = value(key, raw)?,
            "env.good_swap_reward" => r.good_swap_reward = value(key, raw)?,
            "env.bad_swap_penalty" => r.bad_swap_penalty = value(key, raw)?,
            "env.success_reward" => r.success_reward = value(key, raw)?,
            "env.invalid_action_penalty" => r.invalid_action_penalty = value(key, raw)?,
            "env.gamma_short" => r.gamma_short = value(key, raw)?,
            "env.gamma_long" => r.gamma_long = value(key, raw)?,
            "agent.layers" => a.net_layers = value(key, raw)?,
            "agent.heads" => a.net_heads = value(key, raw)?,
            "agent.dim" => a.net_dim = value(key, raw)?,
            "agent.ffn_dim" => a.ffn_dim = value(key, raw)?,
            "agent.window" => a.context_window = value(key, raw)?,
            "agent.learning_rate" => a.learning_rate = value(key, raw)?,
            "agent.clip_norm" => {
                a.clip_norm = match raw {
                    "none" => None,
                    _ => Some(value(key, raw)?),
                }
            }
            "agent.episodes" => a.episodes = value(key, raw)?,
            "agent.epsilon_initial" => a.epsilon.initial = value(key, raw)?,
            "agent.epsilon_floor" => a.epsilon.floor = value(key, raw)?,
            "agent.epsilon_decay" => a.epsilon.decay_unit = value(key, raw)?,
            "tlm.order" => self.tlm.order = value(key, raw)?,
            "tlm.smoothing_alpha" => self.tlm.smoothing_alpha = value(key, raw)?,
            "tlm.interpolation" => {
                self.tlm.interpolation = match raw {
                    "backoff" => Interpolation::Backoff,
                    "linear" => Interpolation::Linear,
                    _ => return Err(bad(key, "expected backoff or linear")),
                }
            }
            "guidance.enabled" => self.guidance_enabled = value(key, raw)?,
            "guidance.coefficient" => self.guidance_coefficient = value(key, raw)?,
            "io.corpus" => self.io.corpus = Some(raw.into()),
            "io.tlm" => self.io.tlm = Some(raw.into()),
            "io.metrics" => self.io.metrics = Some(raw.into()),
            "io.checkpoint" => self.io.checkpoint = Some(raw.into()),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Every key with its current value, in a form `parse` reads back.
    pub fn to_text(&self) -> String {
        let r = &self.env.rewards;
        let a = &self.agent;
        let mut s = String::new();
        let sizes: Vec<String> = self.env.sizes.iter().map(|n| n.to_string()).collect();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("seed", self.seed.to_string());
        put("env.sizes", sizes.join(","));
        put("env.step_cap_multiplier", self.env.step_cap_multiplier.to_string());
        put(
            "env.array_distribution",
            match self.env.array_distribution {
                ArrayDistribution::Permutation => "permutation",
                ArrayDistribution::WithDuplicates => "with_duplicates",
            }
            .into(),
        );
        put("env.step_penalty", r.step_penalty.to_string());
        put("env.good_swap_reward", r.good_swap_reward.to_string());
        put("env.bad_swap_penalty", r.bad_swap_penalty.to_string());
        put("env.success_reward", r.success_reward.to_string());
        put("env.invalid_action_penalty", r.invalid_action_penalty.to_string());
        put("env.gamma_short", r.gamma_short.to_string());
        put("env.gamma_long", r.gamma_long.to_string());
        put("agent.layers", a.net_layers.to_string());
        put("agent.heads", a.net_heads.to_string());
        put("agent.dim", a.net_dim.to_string());
        put("agent.ffn_dim", a.ffn_dim.to_string());
        put("agent.window", a.context_window.to_string());
        put("agent.learning_rate", a.learning_rate.to_string());
        put("agent.clip_norm", a.clip_norm.map_or("none".into(), |c| c.to_string()));
        put("agent.episodes", a.episodes.to_string());
        put("agent.epsilon_initial", a.epsilon.initial.to_string());
        put("agent.epsilon_floor", a.epsilon.floor.to_string());
        put("agent.epsilon_decay", a.epsilon.decay_unit.to_string());
        put("tlm.order", self.tlm.order.to_string());
        put("tlm.smoothing_alpha", self.tlm.smoothing_alpha.to_string());
        put(
            "tlm.interpolation",
            match self.tlm.interpolation {
                Interpolation::Backoff => "backoff",
                Interpolation::Linear => "linear",
            }
            .into(),
        );
        put("guidance.enabled", self.guidance_enabled.to_string());
        put("guidance.coefficient", self.guidance_coefficient.to_string());
        for (k, p) in [
            ("io.corpus", &self.io.corpus),
            ("io.tlm", &self.io.tlm),
            ("io.metrics", &self.io.metrics),
            ("io.checkpoint", &self.io.checkpoint),
        ] {
            if let Some(p) = p {
                put(k, p.display().to_string());
            }
        }
        s
    }

    pub fn env_config(&self) -> EnvConfig {
        let mut env = self.env.clone();
        env.rewards.guidance_coefficient = self.guidance_coefficient;
        env
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            guidance_enabled: self.guidance_enabled,
            guidance_coefficient: self.guidance_coefficient,
            seed: self.seed.wrapping_add(AGENT_SEED_OFFSET),
            ..self.agent.clone()
        }
    }

    pub fn eval_seed(&self) -> u64 {
        self.seed.wrapping_add(EVAL_SEED_OFFSET)
    }

    pub fn corpus_seed(&self) -> u64 {
        self.seed.wrapping_add(CORPUS_SEED_OFFSET)
    }
}
