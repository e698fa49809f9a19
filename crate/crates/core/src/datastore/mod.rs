//! Offline dataset plumbing: transition records, line-delimited dataset
//! files (one JSON header line, then one JSON record per line), deterministic
//! generation from scripted behaviours, a validating loader, minibatch
//! sampling, and the online replay buffer used for fine-tuning.

pub mod batch;
pub mod buffer;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envsim::{scripted_behavior, ActionSpace, BehaviorKind, Environment, EnvSpec, JointAction};
use crate::error::{Error, Result};
use crate::Real;

pub use batch::{sample_batch, Batch};
pub use buffer::{DataSource, ReplayBuffer};

pub const DATASET_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Records and header
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub episode_id: u64,
    pub t: usize,
    pub state: Vec<Real>,
    pub obs: Vec<Vec<Real>>,
    pub actions: JointAction,
    pub reward: Real,
    pub next_state: Vec<Real>,
    pub next_obs: Vec<Vec<Real>>,
    /// Action taken at the next step of the same episode; absent at
    /// terminals, where no target ever reads it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_actions: Option<JointAction>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub env: String,
    pub env_spec: EnvSpec,
    pub behavior: BehaviorKind,
    pub num_episodes: u64,
    pub num_records: u64,
    pub seed: u64,
    pub return_min: Real,
    pub return_mean: Real,
    pub return_max: Real,
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Roll out `num_episodes` episodes of the scripted behaviour and write them
/// as a dataset file. Same arguments, same bytes.
pub fn generate_dataset(
    env: &mut dyn Environment,
    kind: BehaviorKind,
    num_episodes: u64,
    seed: u64,
    path: impl AsRef<Path>,
) -> Result<DatasetHeader> {
    let (header, records) = generate_records(env, kind, num_episodes, seed)?;
    write_dataset(path, &header, &records)?;
    Ok(header)
}

/// In-memory variant of [`generate_dataset`].
pub fn generate_records(
    env: &mut dyn Environment,
    kind: BehaviorKind,
    num_episodes: u64,
    seed: u64,
) -> Result<(DatasetHeader, Vec<TransitionRecord>)> {
    if num_episodes == 0 {
        return Err(Error::config("num_episodes must be positive"));
    }
    let mut behavior = scripted_behavior(&*env, kind, seed)?;
    let mut records = Vec::new();
    let mut returns = Vec::with_capacity(num_episodes as usize);
    for ep in 0..num_episodes {
        let (mut state, mut obs) = env.reset(seed.wrapping_add(ep));
        behavior.begin_episode();
        let mut ep_records: Vec<TransitionRecord> = Vec::new();
        let mut ep_return = 0.0;
        let mut t = 0;
        loop {
            let actions = behavior.act(&state, &obs);
            let step = env.step(&actions)?;
            ep_return += step.team_reward;
            ep_records.push(TransitionRecord {
                episode_id: ep,
                t,
                state,
                obs,
                actions,
                reward: step.team_reward,
                next_state: step.next_state.clone(),
                next_obs: step.next_obs.clone(),
                next_actions: None,
                done: step.done,
            });
            if step.done {
                break;
            }
            state = step.next_state;
            obs = step.next_obs;
            t += 1;
        }
        for i in 0..ep_records.len().saturating_sub(1) {
            ep_records[i].next_actions = Some(ep_records[i + 1].actions.clone());
        }
        returns.push(ep_return);
        records.extend(ep_records);
    }
    let n = returns.len() as Real;
    let header = DatasetHeader {
        format_version: DATASET_VERSION,
        env: env.name().to_string(),
        env_spec: env.spec().clone(),
        behavior: kind,
        num_episodes,
        num_records: records.len() as u64,
        seed,
        return_min: returns.iter().copied().fold(Real::INFINITY, Real::min),
        return_mean: returns.iter().sum::<Real>() / n,
        return_max: returns.iter().copied().fold(Real::NEG_INFINITY, Real::max),
    };
    Ok((header, records))
}

pub fn write_dataset(
    path: impl AsRef<Path>,
    header: &DatasetHeader,
    records: &[TransitionRecord],
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let emit = |w: &mut BufWriter<File>, line: String| {
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))
    };
    emit(&mut w, serde_json::to_string(header).map_err(|e| Error::Serde(e.to_string()))?)?;
    for r in records {
        emit(&mut w, serde_json::to_string(r).map_err(|e| Error::Serde(e.to_string()))?)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Loading and validation
// ---------------------------------------------------------------------------

/// Read and fully validate a dataset file. Every rejection names the
/// offending 1-based line.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<TransitionRecord>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = BufReader::new(file).lines();

    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path.display().to_string(), e))?,
        None => return Err(Error::dataset(1, "empty file, expected a header line")),
    };
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::dataset(1, format!("bad header: {e}")))?;
    if header.format_version != DATASET_VERSION {
        return Err(Error::dataset(
            1,
            format!("unsupported format version {} (expected {DATASET_VERSION})", header.format_version),
        ));
    }
    header.env_spec.validate()?;

    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TransitionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::dataset(line_no, format!("unparseable record: {e}")))?;
        validate_record(&record, &header.env_spec).map_err(|msg| Error::dataset(line_no, msg))?;
        records.push(record);
    }

    if records.len() as u64 != header.num_records {
        return Err(Error::dataset(
            records.len() + 1,
            format!(
                "file truncated: header promises {} records, found {} (last valid record on line {})",
                header.num_records,
                records.len(),
                records.len() + 1
            ),
        ));
    }
    verify_header_stats(&header, &records)?;
    Ok((header, records))
}

fn validate_record(r: &TransitionRecord, spec: &EnvSpec) -> std::result::Result<(), String> {
    let check_vec = |name: &str, v: &[Real], dim: usize| {
        if v.len() != dim {
            return Err(format!("{name} has {} entries, expected {dim}", v.len()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(format!("{name} contains a non-finite value"));
        }
        Ok(())
    };
    check_vec("state", &r.state, spec.state_dim)?;
    check_vec("next_state", &r.next_state, spec.state_dim)?;
    for (tag, obs) in [("obs", &r.obs), ("next_obs", &r.next_obs)] {
        if obs.len() != spec.num_agents {
            return Err(format!("{tag} has {} agents, expected {}", obs.len(), spec.num_agents));
        }
        for (a, o) in obs.iter().enumerate() {
            check_vec(&format!("{tag}[{a}]"), o, spec.obs_dim)?;
        }
    }
    if !r.reward.is_finite() {
        return Err("reward is non-finite".into());
    }
    validate_action("actions", &r.actions, spec)?;
    match (&r.next_actions, r.done) {
        (Some(a), _) => validate_action("next_actions", a, spec)?,
        (None, false) => return Err("non-terminal record is missing next_actions".into()),
        (None, true) => {}
    }
    Ok(())
}

fn validate_action(
    name: &str,
    action: &JointAction,
    spec: &EnvSpec,
) -> std::result::Result<(), String> {
    if action.num_agents() != spec.num_agents {
        return Err(format!(
            "{name} has {} agents, expected {}",
            action.num_agents(),
            spec.num_agents
        ));
    }
    match (action, &spec.action_space) {
        (JointAction::Discrete(idx), ActionSpace::Discrete { n }) => {
            if let Some(&bad) = idx.iter().find(|&&i| i >= *n) {
                return Err(format!("{name} index {bad} out of range 0..{n}"));
            }
        }
        (JointAction::Continuous(vs), ActionSpace::Continuous { dim, low, high }) => {
            for v in vs {
                if v.len() != *dim {
                    return Err(format!("{name} has {} dims, expected {dim}", v.len()));
                }
                if let Some(&bad) = v.iter().find(|x| !x.is_finite() || **x < *low || **x > *high) {
                    return Err(format!("{name} value {bad} outside [{low}, {high}]"));
                }
            }
        }
        _ => return Err(format!("{name} kind does not match the environment's action space")),
    }
    Ok(())
}

fn verify_header_stats(header: &DatasetHeader, records: &[TransitionRecord]) -> Result<()> {
    let mut returns: Vec<(u64, Real)> = Vec::new();
    for r in records {
        match returns.last_mut() {
            Some((ep, sum)) if *ep == r.episode_id => *sum += r.reward,
            _ => returns.push((r.episode_id, r.reward)),
        }
    }
    if returns.len() as u64 != header.num_episodes {
        return Err(Error::dataset(
            1,
            format!("header promises {} episodes, records contain {}", header.num_episodes, returns.len()),
        ));
    }
    let n = returns.len() as Real;
    let min = returns.iter().map(|(_, r)| *r).fold(Real::INFINITY, Real::min);
    let max = returns.iter().map(|(_, r)| *r).fold(Real::NEG_INFINITY, Real::max);
    let mean = returns.iter().map(|(_, r)| *r).sum::<Real>() / n;
    for (name, stored, fresh) in [
        ("return_min", header.return_min, min),
        ("return_mean", header.return_mean, mean),
        ("return_max", header.return_max, max),
    ] {
        if (stored - fresh).abs() > 1e-9 {
            return Err(Error::dataset(
                1,
                format!("header {name} {stored} disagrees with recomputed {fresh}"),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::make_env;
    use std::collections::HashSet;

    #[test]
    fn two_step_uniform_eight_episodes_is_exhaustive() {
        let mut env = make_env("two_step").unwrap();
        let (header, records) = generate_records(env.as_mut(), BehaviorKind::Uniform, 8, 0).unwrap();
        assert_eq!(header.num_records, 16); // 2 steps per episode
        let mut patterns = HashSet::new();
        for ep in 0..8 {
            let steps: Vec<_> = records.iter().filter(|r| r.episode_id == ep).collect();
            assert_eq!(steps.len(), 2);
            let branch = match &steps[0].actions {
                JointAction::Discrete(v) => v[0],
                _ => unreachable!(),
            };
            let joint = match &steps[1].actions {
                JointAction::Discrete(v) => (v[0], v[1]),
                _ => unreachable!(),
            };
            patterns.insert((branch, joint));
        }
        assert_eq!(patterns.len(), 8, "8 episodes must cover all 8 patterns once");
        assert!(header.return_max >= header.return_mean && header.return_mean >= header.return_min);
        assert_eq!(header.return_max, 8.0);
        assert_eq!(header.return_min, 0.0);
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        let mut env = make_env("spread_lite").unwrap();
        generate_dataset(env.as_mut(), BehaviorKind::Medium, 5, 123, &p1).unwrap();
        let mut env2 = make_env("spread_lite").unwrap();
        generate_dataset(env2.as_mut(), BehaviorKind::Medium, 5, 123, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let mut env3 = make_env("spread_lite").unwrap();
        generate_dataset(env3.as_mut(), BehaviorKind::Medium, 5, 124, &p2).unwrap();
        assert_ne!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn roundtrip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut env = make_env("coop_bandit").unwrap();
        let (header, records) =
            generate_records(env.as_mut(), BehaviorKind::Mixture, 20, 7).unwrap();
        write_dataset(&path, &header, &records).unwrap();
        let (h2, r2) = load_dataset(&path).unwrap();
        assert_eq!(header, h2);
        assert_eq!(records, r2);
    }

    #[test]
    fn episode_stitching_is_consistent() {
        let mut env = make_env("spread_lite").unwrap();
        let (_, records) = generate_records(env.as_mut(), BehaviorKind::Expert, 3, 5).unwrap();
        for w in records.windows(2) {
            if !w[0].done {
                assert_eq!(w[0].episode_id, w[1].episode_id);
                assert_eq!(w[0].next_state, w[1].state);
                assert_eq!(w[0].next_actions.as_ref(), Some(&w[1].actions));
            }
        }
        // terminal records carry no next action
        assert!(records.iter().filter(|r| r.done).all(|r| r.next_actions.is_none()));
    }

    #[test]
    fn truncated_file_names_last_valid_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut env = make_env("two_step").unwrap();
        generate_dataset(env.as_mut(), BehaviorKind::Uniform, 8, 0, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let kept: Vec<&str> = text.lines().take(10).collect();
        std::fs::write(&path, kept.join("\n")).unwrap();
        match load_dataset(&path) {
            Err(Error::Dataset { line, msg }) => {
                assert_eq!(line, 10);
                assert!(msg.contains("truncated"), "{msg}");
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut env = make_env("two_step").unwrap();
        generate_dataset(env.as_mut(), BehaviorKind::Uniform, 8, 0, &path).unwrap();
        let mut lines: Vec<String> = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        lines[4] = lines[4].replace("\"reward\":", "\"reward\": null, \"x\":");
        std::fs::write(&path, lines.join("\n")).unwrap();
        match load_dataset(&path) {
            Err(Error::Dataset { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected dataset error, got {other:?}"),
        }
    }

    #[test]
    fn header_stat_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let mut env = make_env("two_step").unwrap();
        let (mut header, records) =
            generate_records(env.as_mut(), BehaviorKind::Uniform, 8, 0).unwrap();
        header.return_mean += 0.5;
        write_dataset(&path, &header, &records).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Dataset { .. })));
    }
}
