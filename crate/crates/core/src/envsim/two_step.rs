//! Two-step coordination game. Both agents act at step one, but only agent
//! A's choice matters: action 0 leads to the safe state whose payoff matrix
//! is 7 everywhere, action 1 to the risky state paying
//! [[0, 1], [1, 8]] — the optimum 8 requires both agents to commit to the
//! risky joint action (1, 1). Step-one reward is 0 and episodes last exactly
//! two steps.

use crate::error::{Error, Result};
use crate::Real;

use super::{sanitize_action, ActionSpace, Environment, EnvSpec, JointAction, StepResult};

/// State indices inside the one-hot encoding.
pub const S1: usize = 0;
pub const S2_SAFE: usize = 1;
pub const S2_RISKY: usize = 2;
pub const TERMINAL: usize = 3;
pub const NUM_STATES: usize = 4;

pub const SAFE_PAYOFF: [[Real; 2]; 2] = [[7.0, 7.0], [7.0, 7.0]];
pub const RISKY_PAYOFF: [[Real; 2]; 2] = [[0.0, 1.0], [1.0, 8.0]];

pub struct TwoStepGame {
    spec: EnvSpec,
    state: usize,
    steps_taken: usize,
}

impl TwoStepGame {
    pub fn new() -> Self {
        TwoStepGame {
            spec: EnvSpec {
                num_agents: 2,
                state_dim: NUM_STATES,
                // state one-hot plus agent-id one-hot
                obs_dim: NUM_STATES + 2,
                action_space: ActionSpace::Discrete { n: 2 },
                horizon: 2,
                gamma: 0.99,
            },
            state: TERMINAL,
            steps_taken: 0,
        }
    }

    pub fn state_one_hot(state: usize) -> Vec<Real> {
        let mut v = vec![0.0; NUM_STATES];
        v[state] = 1.0;
        v
    }

    fn obs_for(state: usize) -> Vec<Vec<Real>> {
        (0..2)
            .map(|agent| {
                let mut o = Self::state_one_hot(state);
                o.extend([0.0, 0.0]);
                o[NUM_STATES + agent] = 1.0;
                o
            })
            .collect()
    }

    /// Observation an agent would see in a given state; used when training
    /// code needs critic inputs for states never stored in a dataset.
    pub fn observation(state: usize, agent: usize) -> Vec<Real> {
        let mut o = Self::state_one_hot(state);
        o.extend([0.0, 0.0]);
        o[NUM_STATES + agent] = 1.0;
        o
    }
}

impl Default for TwoStepGame {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for TwoStepGame {
    fn name(&self) -> &'static str {
        "two_step"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> (Vec<Real>, Vec<Vec<Real>>) {
        self.state = S1;
        self.steps_taken = 0;
        (Self::state_one_hot(S1), Self::obs_for(S1))
    }

    fn step(&mut self, actions: &JointAction) -> Result<StepResult> {
        if self.state == TERMINAL {
            return Err(Error::usage("episode finished; call reset first"));
        }
        let (actions, _) = sanitize_action(&self.spec, actions)?;
        let idx = match &actions {
            JointAction::Discrete(v) => (v[0], v[1]),
            JointAction::Continuous(_) => unreachable!("sanitize enforces discrete"),
        };
        self.steps_taken += 1;
        let (next, reward, done) = match self.state {
            // Agent B acts too, but only agent A's choice selects the branch.
            S1 => (if idx.0 == 0 { S2_SAFE } else { S2_RISKY }, 0.0, false),
            S2_SAFE => (TERMINAL, SAFE_PAYOFF[idx.0][idx.1], true),
            S2_RISKY => (TERMINAL, RISKY_PAYOFF[idx.0][idx.1], true),
            _ => unreachable!(),
        };
        self.state = next;
        Ok(StepResult {
            next_state: Self::state_one_hot(next),
            next_obs: Self::obs_for(next),
            team_reward: reward,
            done,
        })
    }

    fn clip_warnings(&self) -> u64 {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn play(a_first: usize, joint: (usize, usize)) -> Real {
        let mut env = TwoStepGame::new();
        env.reset(0);
        let r1 = env.step(&JointAction::Discrete(vec![a_first, 0])).unwrap();
        assert_eq!(r1.team_reward, 0.0);
        assert!(!r1.done);
        let r2 = env.step(&JointAction::Discrete(vec![joint.0, joint.1])).unwrap();
        assert!(r2.done);
        r2.team_reward
    }

    #[test]
    fn reset_is_initial_state() {
        let mut env = TwoStepGame::new();
        let (s, obs) = env.reset(7);
        assert_eq!(s, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(obs[0], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(obs[1], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn payoffs_match_matrices() {
        // Safe branch pays 7 regardless of the joint action.
        for joint in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_eq!(play(0, joint), 7.0);
        }
        // Risky branch: coordination pays 8, miscoordination 1, double-safe 0.
        assert_eq!(play(1, (0, 0)), 0.0);
        assert_eq!(play(1, (0, 1)), 1.0);
        assert_eq!(play(1, (1, 0)), 1.0);
        assert_eq!(play(1, (1, 1)), 8.0);
    }

    #[test]
    fn branch_ignores_agent_b() {
        let mut env = TwoStepGame::new();
        env.reset(0);
        let r = env.step(&JointAction::Discrete(vec![0, 1])).unwrap();
        assert_eq!(r.next_state[S2_SAFE], 1.0);
        env.reset(0);
        let r = env.step(&JointAction::Discrete(vec![1, 0])).unwrap();
        assert_eq!(r.next_state[S2_RISKY], 1.0);
    }

    #[test]
    fn misuse_is_rejected() {
        let mut env = TwoStepGame::new();
        env.reset(0);
        assert!(env.step(&JointAction::Discrete(vec![2, 0])).is_err());
        env.step(&JointAction::Discrete(vec![0, 0])).unwrap();
        env.step(&JointAction::Discrete(vec![0, 0])).unwrap();
        assert!(env.step(&JointAction::Discrete(vec![0, 0])).is_err());
    }
}
