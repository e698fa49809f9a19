//! Dec-POMDP environment abstraction and three desk-scale environments: a
//! two-step coordination game with a safe and a risky branch, a continuous
//! two-agent bandit with two reward modes, and a cooperative spread task
//! where agents cover landmarks on the plane.
//!
//! All environments share one contract: `reset(seed)` is deterministic per
//! seed, `step` consumes a joint action and returns the team reward, and any
//! in-episode randomness comes from the environment's own seeded generator.

pub mod behavior;
pub mod coop_bandit;
pub mod spread_lite;
pub mod two_step;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

pub use behavior::{scripted_behavior, Behavior, BehaviorKind};
pub use coop_bandit::CoopBandit;
pub use spread_lite::SpreadLite;
pub use two_step::TwoStepGame;

// ---------------------------------------------------------------------------
// Shared types
// ---------------------------------------------------------------------------

/// Per-agent action space. Bounds are shared across dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete { n: usize },
    Continuous { dim: usize, low: Real, high: Real },
}

impl ActionSpace {
    /// Width of one agent's action when fed to a network: one-hot size for
    /// discrete spaces, raw dimension for continuous ones.
    pub fn encoded_width(&self) -> usize {
        match self {
            ActionSpace::Discrete { n } => *n,
            ActionSpace::Continuous { dim, .. } => *dim,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete { .. })
    }
}

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub num_agents: usize,
    pub state_dim: usize,
    /// Observation width per agent (identical across agents here).
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
    pub gamma: Real,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_agents < 2 {
            return Err(Error::config(format!(
                "environments are cooperative multi-agent: num_agents {} < 2",
                self.num_agents
            )));
        }
        if self.horizon < 1 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if self.state_dim == 0 || self.obs_dim == 0 {
            return Err(Error::config("state_dim and obs_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma {} outside [0,1)", self.gamma)));
        }
        if let ActionSpace::Continuous { dim, low, high } = &self.action_space {
            if *dim == 0 || !low.is_finite() || !high.is_finite() || low >= high {
                return Err(Error::config("continuous action space needs finite low < high"));
            }
        }
        Ok(())
    }
}

/// One joint action: either a discrete index per agent or a vector per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JointAction {
    Discrete(Vec<usize>),
    Continuous(Vec<Vec<Real>>),
}

impl JointAction {
    pub fn num_agents(&self) -> usize {
        match self {
            JointAction::Discrete(v) => v.len(),
            JointAction::Continuous(v) => v.len(),
        }
    }

    /// Flat per-agent encoding for network input: one-hot for discrete,
    /// identity for continuous.
    pub fn encode_agent(&self, agent: usize, space: &ActionSpace) -> Vec<Real> {
        match (self, space) {
            (JointAction::Discrete(v), ActionSpace::Discrete { n }) => {
                let mut one_hot = vec![0.0; *n];
                one_hot[v[agent]] = 1.0;
                one_hot
            }
            (JointAction::Continuous(v), ActionSpace::Continuous { .. }) => v[agent].clone(),
            _ => panic!("joint action kind does not match the action space"),
        }
    }
}

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<Real>,
    pub next_obs: Vec<Vec<Real>>,
    pub team_reward: Real,
    pub done: bool,
}

// ---------------------------------------------------------------------------
// Environment trait
// ---------------------------------------------------------------------------

pub trait Environment {
    fn name(&self) -> &'static str;
    fn spec(&self) -> &EnvSpec;

    /// Start a new episode. Same seed, same initial state.
    fn reset(&mut self, seed: u64) -> (Vec<Real>, Vec<Vec<Real>>);

    /// Advance one step. Continuous actions outside the bounds are clipped
    /// (counted in [`Environment::clip_warnings`]); bad discrete indices and
    /// stepping a finished episode are usage errors.
    fn step(&mut self, actions: &JointAction) -> Result<StepResult>;

    /// How many continuous action components have been clipped so far.
    fn clip_warnings(&self) -> u64;
}

/// Validate a joint action against a spec; returns the clipped copy and the
/// number of clipped components for continuous spaces.
pub(crate) fn sanitize_action(
    spec: &EnvSpec,
    actions: &JointAction,
) -> Result<(JointAction, u64)> {
    if actions.num_agents() != spec.num_agents {
        return Err(Error::usage(format!(
            "joint action has {} agents, environment expects {}",
            actions.num_agents(),
            spec.num_agents
        )));
    }
    match (actions, &spec.action_space) {
        (JointAction::Discrete(idx), ActionSpace::Discrete { n }) => {
            for (agent, &i) in idx.iter().enumerate() {
                if i >= *n {
                    return Err(Error::usage(format!(
                        "agent {agent} chose action {i}, valid range is 0..{n}"
                    )));
                }
            }
            Ok((actions.clone(), 0))
        }
        (JointAction::Continuous(vecs), ActionSpace::Continuous { dim, low, high }) => {
            let mut clipped = 0;
            let mut out = Vec::with_capacity(vecs.len());
            for (agent, v) in vecs.iter().enumerate() {
                if v.len() != *dim {
                    return Err(Error::usage(format!(
                        "agent {agent} action has {} dims, expected {dim}",
                        v.len()
                    )));
                }
                out.push(
                    v.iter()
                        .map(|&x| {
                            if x < *low || x > *high {
                                clipped += 1;
                                x.clamp(*low, *high)
                            } else {
                                x
                            }
                        })
                        .collect(),
                );
            }
            Ok((JointAction::Continuous(out), clipped))
        }
        _ => Err(Error::usage("joint action kind does not match the action space")),
    }
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

pub const ENV_NAMES: [&str; 3] = ["two_step", "coop_bandit", "spread_lite"];

/// Construct an environment by registry name.
pub fn make_env(name: &str) -> Result<Box<dyn Environment>> {
    match name {
        "two_step" => Ok(Box::new(TwoStepGame::new())),
        "coop_bandit" => Ok(Box::new(CoopBandit::new())),
        "spread_lite" => Ok(Box::new(SpreadLite::new(spread_lite::DEFAULT_AGENTS))),
        other => Err(Error::config(format!(
            "unknown environment '{other}' (known: {})",
            ENV_NAMES.join(", ")
        ))),
    }
}
