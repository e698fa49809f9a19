//! Online fine-tuning: resume from an offline checkpoint, collect rollouts
//! with exploration noise into an online-only replay buffer, and continue
//! the alternating updates sampling exclusively from that buffer.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datastore::{load_dataset, DataSource, ReplayBuffer, TransitionRecord};
use crate::diffmath::Checkpoint;
use crate::envsim::{make_env, Environment};
use crate::error::{Error, Result};
use crate::policyext::{explore_joint, PolicySet};
use crate::stability::DivergenceMonitor;
use crate::Real;

use super::config::RunConfig;
use super::metrics::MetricsWriter;
use super::train::{
    check_dataset_matches, max_abs_return, run_eval, train_loop, Learner, RunStatus, RunSummary,
    BEST_CHECKPOINT_FILE, FINAL_CHECKPOINT_FILE, METRICS_FILE, ROLLOUT_STREAM, SUMMARY_FILE,
};

/// Resume from `checkpoint_path` and train `config.online_steps` gradient
/// steps on freshly collected rollouts, pacing one gradient step per
/// collected environment step. `online_steps = 0` evaluates the checkpoint
/// and writes a run directory without training.
///
/// The offline dataset named by the config is read only for its header (to
/// check the environment and size the divergence threshold); none of its
/// transitions enter the buffer.
pub fn finetune_online(
    config: &RunConfig,
    checkpoint_path: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
) -> Result<RunSummary> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let (header, _) = load_dataset(&config.dataset)?;
    check_dataset_matches(config, &header)?;
    let spec = header.env_spec.clone();
    let mut learner = Learner::build(config, &spec)?;
    learner.apply_checkpoint(&Checkpoint::load(checkpoint_path)?)?;

    // Baseline: what the offline checkpoint scores before any online step.
    let offline_eval = run_eval(&learner.policies, &config.env, config, 0)?;

    if config.online_steps == 0 {
        MetricsWriter::create(out_dir.join(METRICS_FILE))?.finish()?;
        learner.save_checkpoint(out_dir.join(FINAL_CHECKPOINT_FILE))?;
        learner.save_checkpoint(out_dir.join(BEST_CHECKPOINT_FILE))?;
        let summary = RunSummary {
            status: RunStatus::Completed,
            halt_reason: None,
            halt_step: None,
            steps_done: 0,
            seed: config.seed,
            final_eval: Some(offline_eval.clone()),
            best_eval: Some(offline_eval),
            config: config.clone(),
        };
        summary.save(out_dir.join(SUMMARY_FILE))?;
        return Ok(summary);
    }

    let monitor = DivergenceMonitor::new(max_abs_return(&header), config.gamma);
    let mut collector = Collector::new(config, make_env(&config.env)?);
    let mut buffer = ReplayBuffer::new(config.online_buffer_capacity)?;

    let summary = train_loop(
        config,
        out_dir,
        &mut learner,
        &monitor,
        config.online_steps,
        Some(offline_eval),
        |policies, rng| {
            collector.top_up(policies, &mut buffer, config.batch_size)?;
            buffer.sample(&spec, config.batch_size, rng)
        },
    )?;
    debug_assert!(buffer.all_online());
    Ok(summary)
}

/// Paces collection against gradient steps: every environment step earns one
/// gradient step, and the buffer is topped up episode-by-episode until it
/// can serve a batch and at least one earned step is pending.
struct Collector {
    env: Box<dyn Environment>,
    rng: ChaCha8Rng,
    exploration_std: Real,
    base_seed: u64,
    episode_id: u64,
    earned_updates: u64,
}

impl Collector {
    fn new(config: &RunConfig, env: Box<dyn Environment>) -> Self {
        Collector {
            env,
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(ROLLOUT_STREAM)),
            exploration_std: config.exploration_std,
            base_seed: config.seed.wrapping_add(ROLLOUT_STREAM),
            episode_id: 0,
            earned_updates: 0,
        }
    }

    fn top_up(
        &mut self,
        policies: &PolicySet,
        buffer: &mut ReplayBuffer,
        batch_size: usize,
    ) -> Result<()> {
        while buffer.len() < batch_size || self.earned_updates == 0 {
            let episode = self.collect_episode(policies)?;
            self.earned_updates += episode.len() as u64;
            buffer.push_rollout(episode, DataSource::Online);
        }
        self.earned_updates -= 1;
        Ok(())
    }

    fn collect_episode(&mut self, policies: &PolicySet) -> Result<Vec<TransitionRecord>> {
        let seed = self.base_seed.wrapping_add(self.episode_id);
        let (mut state, mut obs) = self.env.reset(seed);
        let mut records: Vec<TransitionRecord> = Vec::new();
        let mut t = 0;
        loop {
            let actions = explore_joint(policies, &obs, self.exploration_std, &mut self.rng);
            let step = self.env.step(&actions)?;
            records.push(TransitionRecord {
                episode_id: self.episode_id,
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
        // Recorded next actions let SARSA fine-tune on its own rollouts.
        for i in 0..records.len().saturating_sub(1) {
            records[i].next_actions = Some(records[i + 1].actions.clone());
        }
        self.episode_id += 1;
        Ok(records)
    }
}
