//! Single-step continuous bandit for two agents. The joint reward surface
//! has two Gaussian modes on the diagonal: a lower peak of height 1.0 at
//! (-0.5, -0.5) and a higher peak of height 1.2 at (0.6, 0.6), both with
//! width 0.15. Extracting the better mode requires both agents to move
//! together, which makes the task a minimal probe for mode-seeking versus
//! mode-covering policy extraction.

use crate::error::Result;
use crate::Real;

use super::{sanitize_action, ActionSpace, Environment, EnvSpec, JointAction, StepResult};

pub const LOW_PEAK: (Real, Real) = (-0.5, 1.0);
pub const HIGH_PEAK: (Real, Real) = (0.6, 1.2);
pub const PEAK_WIDTH: Real = 0.15;

/// Reward for a joint action (a, b): sum of the two isotropic Gaussian bumps.
pub fn reward(a: Real, b: Real) -> Real {
    let bump = |center: Real, height: Real| {
        let d2 = (a - center).powi(2) + (b - center).powi(2);
        height * (-d2 / (2.0 * PEAK_WIDTH * PEAK_WIDTH)).exp()
    };
    bump(LOW_PEAK.0, LOW_PEAK.1) + bump(HIGH_PEAK.0, HIGH_PEAK.1)
}

pub struct CoopBandit {
    spec: EnvSpec,
    done: bool,
    clip_warnings: u64,
}

impl CoopBandit {
    pub fn new() -> Self {
        CoopBandit {
            spec: EnvSpec {
                num_agents: 2,
                state_dim: 1,
                // agent-id one-hot; there is no environment state to observe
                obs_dim: 2,
                action_space: ActionSpace::Continuous { dim: 1, low: -1.0, high: 1.0 },
                horizon: 1,
                gamma: 0.99,
            },
            done: true,
            clip_warnings: 0,
        }
    }

    fn obs() -> Vec<Vec<Real>> {
        vec![vec![1.0, 0.0], vec![0.0, 1.0]]
    }
}

impl Default for CoopBandit {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CoopBandit {
    fn name(&self) -> &'static str {
        "coop_bandit"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> (Vec<Real>, Vec<Vec<Real>>) {
        self.done = false;
        (vec![1.0], Self::obs())
    }

    fn step(&mut self, actions: &JointAction) -> Result<StepResult> {
        if self.done {
            return Err(crate::error::Error::usage("episode finished; call reset first"));
        }
        let (actions, clipped) = sanitize_action(&self.spec, actions)?;
        self.clip_warnings += clipped;
        let (a, b) = match &actions {
            JointAction::Continuous(v) => (v[0][0], v[1][0]),
            JointAction::Discrete(_) => unreachable!("sanitize enforces continuous"),
        };
        self.done = true;
        Ok(StepResult {
            next_state: vec![1.0],
            next_obs: Self::obs(),
            team_reward: reward(a, b),
            done: true,
        })
    }

    fn clip_warnings(&self) -> u64 {
        self.clip_warnings
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peaks_have_stated_heights() {
        // Cross-mode contributions are ~exp(-53.8), below one ulp of the sum.
        assert_eq!(reward(0.6, 0.6), 1.2);
        assert_eq!(reward(-0.5, -0.5), 1.0);
    }

    #[test]
    fn reward_bounded_and_positive() {
        for i in 0..41 {
            for j in 0..41 {
                let a = -1.0 + 0.05 * i as Real;
                let b = -1.0 + 0.05 * j as Real;
                let r = reward(a, b);
                assert!(r > 0.0 && r <= 1.2, "reward {r} at ({a},{b})");
            }
        }
    }

    #[test]
    fn symmetric_under_agent_swap() {
        for (a, b) in [(0.3, -0.8), (0.0, 0.6), (-0.5, 0.45)] {
            assert_eq!(reward(a, b), reward(b, a));
        }
    }

    #[test]
    fn clipping_is_counted() {
        let mut env = CoopBandit::new();
        env.reset(0);
        let r = env
            .step(&JointAction::Continuous(vec![vec![2.0], vec![0.6]]))
            .unwrap();
        assert_eq!(env.clip_warnings(), 1);
        assert_eq!(r.team_reward, reward(1.0, 0.6));
        assert!(r.done);
    }
}
