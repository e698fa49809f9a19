//! Column-stacked minibatches. Records are sampled uniformly with
//! replacement and transposed into per-field arrays so losses operate on
//! whole batches at once.

use rand::Rng;

use crate::diffmath::Array;
use crate::envsim::EnvSpec;
use crate::error::{Error, Result};
use crate::Real;

use super::TransitionRecord;

#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub state: Array<Real>,
    pub next_state: Array<Real>,
    /// Per agent: `[B, obs_dim]`.
    pub obs: Vec<Array<Real>>,
    pub next_obs: Vec<Array<Real>>,
    /// Per agent: `[B, encoded width]` — one-hot for discrete spaces, raw
    /// values for continuous ones.
    pub act_enc: Vec<Array<Real>>,
    /// Zero rows at terminals (no next action exists; targets mask by done).
    pub next_act_enc: Vec<Array<Real>>,
    /// Whether each row carried recorded next actions (sarsa needs them on
    /// every non-terminal row).
    pub has_next_actions: Vec<bool>,
    /// Per agent discrete indices, present only for discrete spaces.
    pub act_idx: Option<Vec<Vec<usize>>>,
    pub reward: Array<Real>,
    pub done: Array<Real>,
}

impl Batch {
    pub fn gather(records: &[TransitionRecord], indices: &[usize], spec: &EnvSpec) -> Batch {
        let b = indices.len();
        let n_agents = spec.num_agents;
        let width = spec.action_space.encoded_width();

        let mut state = Vec::with_capacity(b * spec.state_dim);
        let mut next_state = Vec::with_capacity(b * spec.state_dim);
        let mut obs = vec![Vec::with_capacity(b * spec.obs_dim); n_agents];
        let mut next_obs = vec![Vec::with_capacity(b * spec.obs_dim); n_agents];
        let mut act_enc = vec![Vec::with_capacity(b * width); n_agents];
        let mut next_act_enc = vec![Vec::with_capacity(b * width); n_agents];
        let mut act_idx: Vec<Vec<usize>> = vec![Vec::with_capacity(b); n_agents];
        let mut has_next_actions = Vec::with_capacity(b);
        let mut reward = Vec::with_capacity(b);
        let mut done = Vec::with_capacity(b);

        for &i in indices {
            let r = &records[i];
            state.extend(&r.state);
            next_state.extend(&r.next_state);
            for a in 0..n_agents {
                obs[a].extend(&r.obs[a]);
                next_obs[a].extend(&r.next_obs[a]);
                act_enc[a].extend(r.actions.encode_agent(a, &spec.action_space));
                match &r.next_actions {
                    Some(na) => next_act_enc[a].extend(na.encode_agent(a, &spec.action_space)),
                    None => next_act_enc[a].extend(std::iter::repeat(0.0).take(width)),
                }
                if let crate::envsim::JointAction::Discrete(idx) = &r.actions {
                    act_idx[a].push(idx[a]);
                }
            }
            has_next_actions.push(r.next_actions.is_some());
            reward.push(r.reward);
            done.push(if r.done { 1.0 } else { 0.0 });
        }

        Batch {
            size: b,
            state: Array::new(vec![b, spec.state_dim], state),
            next_state: Array::new(vec![b, spec.state_dim], next_state),
            obs: obs.into_iter().map(|v| Array::new(vec![b, spec.obs_dim], v)).collect(),
            next_obs: next_obs.into_iter().map(|v| Array::new(vec![b, spec.obs_dim], v)).collect(),
            act_enc: act_enc.into_iter().map(|v| Array::new(vec![b, width], v)).collect(),
            next_act_enc: next_act_enc
                .into_iter()
                .map(|v| Array::new(vec![b, width], v))
                .collect(),
            act_idx: if spec.action_space.is_discrete() { Some(act_idx) } else { None },
            has_next_actions,
            reward: Array::new(vec![b, 1], reward),
            done: Array::new(vec![b, 1], done),
        }
    }
}

/// Uniform-with-replacement minibatch.
pub fn sample_batch(
    records: &[TransitionRecord],
    spec: &EnvSpec,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Batch> {
    if records.is_empty() {
        return Err(Error::usage("cannot sample from an empty dataset"));
    }
    if batch_size == 0 || batch_size > records.len() {
        return Err(Error::usage(format!(
            "batch_size {batch_size} outside 1..={} (dataset size)",
            records.len()
        )));
    }
    let indices: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..records.len())).collect();
    Ok(Batch::gather(records, &indices, spec))
}
