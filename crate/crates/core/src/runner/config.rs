//! Run configuration: a flat TOML file with strict schema validation.
//! Unknown keys are rejected so sweep grids cannot silently misspell a
//! hyperparameter.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policyext::{ExtractMethod, ExtractionConfig};
use crate::valuedecomp::Decomp;
use crate::valuelearn::{ValueLearnConfig, ValueMethod, DEFAULT_SVN_EPSILON};
use crate::Real;

/// Metrics are written every this many training steps.
pub const LOG_INTERVAL: u64 = 100;
/// Fixed AWR weight ceiling; generous enough that only extreme advantages
/// saturate.
pub const DEFAULT_AWR_WEIGHT_CLIP: Real = 100.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub dataset: PathBuf,
    pub decomp: Decomp,
    pub value_learning: ValueMethod,
    pub extraction: ExtractMethod,
    /// BRAC behavior-cloning weight / AWR temperature.
    #[serde(default = "d_alpha")]
    pub alpha: Real,
    #[serde(default = "d_iql_tau")]
    pub iql_tau: Real,
    pub gamma: Real,
    #[serde(default = "d_lr")]
    pub lr_actor: Real,
    #[serde(default = "d_lr")]
    pub lr_critic: Real,
    #[serde(default = "d_polyak")]
    pub polyak_tau: Real,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    pub total_steps: u64,
    #[serde(default = "d_eval_every")]
    pub eval_every: u64,
    #[serde(default = "d_eval_episodes")]
    pub eval_episodes: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_true")]
    pub svn: bool,
    #[serde(default = "d_true")]
    pub actor_norm: bool,
    /// Hidden layer widths shared by utilities, joint critics, actors, and
    /// value networks.
    #[serde(default = "d_hidden")]
    pub hidden_sizes: Vec<usize>,
    #[serde(default = "d_mixer_embed")]
    pub mixer_embed: usize,
    #[serde(default = "d_mixer_hyper")]
    pub mixer_hyper_hidden: usize,
    /// Gradient steps of online fine-tuning (0 = pure offline run).
    #[serde(default)]
    pub online_steps: u64,
    #[serde(default = "d_buffer_cap")]
    pub online_buffer_capacity: usize,
    #[serde(default = "d_exploration_std")]
    pub exploration_std: Real,
}

fn d_alpha() -> Real {
    1.0
}
fn d_iql_tau() -> Real {
    0.7
}
fn d_lr() -> Real {
    3e-4
}
fn d_polyak() -> Real {
    0.01
}
fn d_batch() -> usize {
    128
}
fn d_eval_every() -> u64 {
    1000
}
fn d_eval_episodes() -> u64 {
    10
}
fn d_true() -> bool {
    true
}
fn d_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn d_mixer_embed() -> usize {
    32
}
fn d_mixer_hyper() -> usize {
    128
}
fn d_buffer_cap() -> usize {
    50_000
}
fn d_exploration_std() -> Real {
    0.1
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        // an unreadable config file is a configuration error (exit code 2),
        // not a generic I/O failure
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.value_learn_config().validate()?;
        self.extraction_config().validate()?;
        if self.total_steps == 0 {
            return Err(Error::config("total_steps must be positive"));
        }
        if self.eval_every == 0 || self.total_steps < self.eval_every {
            return Err(Error::config(format!(
                "need total_steps >= eval_every >= 1, got {} and {}",
                self.total_steps, self.eval_every
            )));
        }
        if self.eval_every % LOG_INTERVAL != 0 || self.total_steps % LOG_INTERVAL != 0 {
            return Err(Error::config(format!(
                "eval_every and total_steps must be multiples of the {LOG_INTERVAL}-step logging interval"
            )));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.lr_actor > 0.0) || !(self.lr_critic > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::config("hidden_sizes must be non-empty positive widths"));
        }
        if self.mixer_embed == 0 || self.mixer_hyper_hidden == 0 {
            return Err(Error::config("mixer dimensions must be positive"));
        }
        if !(self.exploration_std >= 0.0) {
            return Err(Error::config("exploration_std must be nonnegative"));
        }
        if self.online_steps > 0 && self.online_buffer_capacity < self.batch_size {
            return Err(Error::config(format!(
                "online_buffer_capacity {} cannot hold a batch of {}",
                self.online_buffer_capacity, self.batch_size
            )));
        }
        Ok(())
    }

    pub fn value_learn_config(&self) -> ValueLearnConfig {
        ValueLearnConfig {
            method: self.value_learning,
            gamma: self.gamma,
            iql_tau: self.iql_tau,
            svn: self.svn,
            svn_epsilon: DEFAULT_SVN_EPSILON,
            polyak_tau: self.polyak_tau,
            listing1_strict: false,
        }
    }

    pub fn extraction_config(&self) -> ExtractionConfig {
        ExtractionConfig {
            method: self.extraction,
            alpha: self.alpha,
            actor_norm: self.actor_norm,
            awr_weight_clip: DEFAULT_AWR_WEIGHT_CLIP,
            awr_per_agent_adv: false,
        }
    }

    /// Whether this run trains a state-value network alongside the critic.
    pub fn needs_vnet(&self) -> bool {
        self.value_learning == ValueMethod::Iql || self.extraction == ExtractMethod::Awr
    }
}

/// Score-table key for an environment, if its returns have registered
/// anchors.
pub fn score_key_for_env(env: &str) -> Option<&'static str> {
    match env {
        "spread_lite" => Some("spread"),
        _ => None,
    }
}
