//! Landmark-coverage task on the plane: A agents and A landmarks start at
//! uniform positions in the unit box, agents steer with bounded 2-D velocity
//! actions, and the team is rewarded the negative mean over landmarks of the
//! distance to the closest agent. The per-step reward is 0 exactly when
//! every landmark has an agent on top of it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::Real;

use super::{sanitize_action, ActionSpace, Environment, EnvSpec, JointAction, StepResult};

pub const DEFAULT_AGENTS: usize = 3;
pub const DT: Real = 0.1;
pub const HORIZON: usize = 25;

pub struct SpreadLite {
    spec: EnvSpec,
    agents: Vec<[Real; 2]>,
    landmarks: Vec<[Real; 2]>,
    steps_taken: usize,
    active: bool,
    clip_warnings: u64,
}

impl SpreadLite {
    pub fn new(num_agents: usize) -> Self {
        SpreadLite {
            spec: EnvSpec {
                num_agents,
                // all agent positions followed by all landmark positions
                state_dim: 4 * num_agents,
                // own position plus an offset to every landmark
                obs_dim: 2 + 2 * num_agents,
                action_space: ActionSpace::Continuous { dim: 2, low: -1.0, high: 1.0 },
                horizon: HORIZON,
                gamma: 0.95,
            },
            agents: Vec::new(),
            landmarks: Vec::new(),
            steps_taken: 0,
            active: false,
            clip_warnings: 0,
        }
    }

    fn state_vec(&self) -> Vec<Real> {
        let mut s = Vec::with_capacity(self.spec.state_dim);
        for p in self.agents.iter().chain(&self.landmarks) {
            s.extend(p);
        }
        s
    }

    fn obs_vec(&self) -> Vec<Vec<Real>> {
        self.agents
            .iter()
            .map(|pos| {
                let mut o = Vec::with_capacity(self.spec.obs_dim);
                o.extend(pos);
                for lm in &self.landmarks {
                    o.push(lm[0] - pos[0]);
                    o.push(lm[1] - pos[1]);
                }
                o
            })
            .collect()
    }

    /// Negative mean over landmarks of the closest-agent distance.
    pub fn coverage_reward(agents: &[[Real; 2]], landmarks: &[[Real; 2]]) -> Real {
        let total: Real = landmarks
            .iter()
            .map(|lm| {
                agents
                    .iter()
                    .map(|a| ((a[0] - lm[0]).powi(2) + (a[1] - lm[1]).powi(2)).sqrt())
                    .fold(Real::INFINITY, Real::min)
            })
            .sum();
        -total / landmarks.len() as Real
    }

    /// Positions decoded from a state vector, `(agents, landmarks)`.
    pub fn decode_state(state: &[Real], num_agents: usize) -> (Vec<[Real; 2]>, Vec<[Real; 2]>) {
        let pair = |i: usize| [state[2 * i], state[2 * i + 1]];
        let agents = (0..num_agents).map(pair).collect();
        let landmarks = (num_agents..2 * num_agents).map(pair).collect();
        (agents, landmarks)
    }
}

impl Environment for SpreadLite {
    fn name(&self) -> &'static str {
        "spread_lite"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> (Vec<Real>, Vec<Vec<Real>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.spec.num_agents;
        self.agents = (0..n).map(|_| [rng.gen::<Real>(), rng.gen::<Real>()]).collect();
        self.landmarks = (0..n).map(|_| [rng.gen::<Real>(), rng.gen::<Real>()]).collect();
        self.steps_taken = 0;
        self.active = true;
        (self.state_vec(), self.obs_vec())
    }

    fn step(&mut self, actions: &JointAction) -> Result<StepResult> {
        if !self.active {
            return Err(Error::usage("episode finished; call reset first"));
        }
        let (actions, clipped) = sanitize_action(&self.spec, actions)?;
        self.clip_warnings += clipped;
        let vels = match &actions {
            JointAction::Continuous(v) => v,
            JointAction::Discrete(_) => unreachable!("sanitize enforces continuous"),
        };
        for (pos, vel) in self.agents.iter_mut().zip(vels) {
            pos[0] += DT * vel[0];
            pos[1] += DT * vel[1];
        }
        self.steps_taken += 1;
        let done = self.steps_taken >= self.spec.horizon;
        self.active = !done;
        Ok(StepResult {
            next_state: self.state_vec(),
            next_obs: self.obs_vec(),
            team_reward: Self::coverage_reward(&self.agents, &self.landmarks),
            done,
        })
    }

    fn clip_warnings(&self) -> u64 {
        self.clip_warnings
    }
}
