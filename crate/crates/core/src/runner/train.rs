//! The offline training loop: alternating critic/actor updates over a fixed
//! dataset, periodic deterministic evaluation, CSV metrics, and JSON
//! checkpoints plus a run summary.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::{load_dataset, sample_batch, Batch, DatasetHeader};
use crate::diffmath::{Adam, Array, Checkpoint, Var};
use crate::envsim::{make_env, EnvSpec};
use crate::error::{Error, Result};
use crate::policyext::{actor_update, evaluate, PolicySet};
use crate::stability::{loop_gain, normalized_score, operator_norm_of_mixer, DivergenceMonitor};
use crate::valuedecomp::{CriticDims, CriticStack, Decomp, QInputs};
use crate::valuelearn::{critic_update, VNet};
use crate::Real;

use super::config::{RunConfig, LOG_INTERVAL};
use super::metrics::{MetricsRow, MetricsWriter};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FINAL_CHECKPOINT_FILE: &str = "final.ckpt.json";
pub const BEST_CHECKPOINT_FILE: &str = "best.ckpt.json";

/// Offsets mixed into `config.seed` so initialization, batch sampling,
/// evaluation, and rollout collection draw from independent streams.
pub(crate) const TRAIN_STREAM: u64 = 0x7261_696e;
pub(crate) const EVAL_STREAM: u64 = 0x6576_616c;
pub(crate) const ROLLOUT_STREAM: u64 = 0x726f_6c6c;

// ---------------------------------------------------------------------------
// Run summary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Halted,
}

/// One evaluation: mean/std of deterministic-policy returns, plus the
/// normalized score when the environment has a registered scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub return_mean: Real,
    pub return_std: Real,
    pub normalized_score: Option<Real>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    /// Which divergence condition ended the run, when `status` is `Halted`.
    pub halt_reason: Option<String>,
    pub halt_step: Option<u64>,
    pub steps_done: u64,
    pub seed: u64,
    pub final_eval: Option<EvalRecord>,
    pub best_eval: Option<EvalRecord>,
    pub config: RunConfig,
}

impl RunSummary {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Learner: networks + optimizers for one run
// ---------------------------------------------------------------------------

/// All trainable state of a run. The critic optimizer owns the critic
/// ensemble and (when present) the value network; the actor optimizer owns
/// the policies.
pub(crate) struct Learner {
    pub stack: CriticStack,
    pub policies: PolicySet,
    pub vnet: Option<VNet>,
    pub critic_opt: Adam<Real>,
    pub actor_opt: Adam<Real>,
}

impl Learner {
    /// Build fresh networks. Initialization draws from a stream seeded only
    /// by `config.seed`, so identical configs build identical networks.
    pub fn build(config: &RunConfig, spec: &EnvSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dims = CriticDims::from_spec(spec);
        let stack = CriticStack::new(
            config.decomp,
            dims,
            &config.hidden_sizes,
            config.mixer_embed,
            config.mixer_hyper_hidden,
            &mut rng,
        )?;
        let policies = PolicySet::new(
            spec.num_agents,
            spec.obs_dim,
            &spec.action_space,
            &config.hidden_sizes,
            &mut rng,
        )?;
        let vnet = if config.needs_vnet() {
            Some(match config.decomp {
                Decomp::Dec => {
                    VNet::per_agent(spec.num_agents, spec.obs_dim, &config.hidden_sizes, &mut rng)?
                }
                _ => VNet::global(spec.state_dim, &config.hidden_sizes, &mut rng)?,
            })
        } else {
            None
        };
        let mut critic_params = stack.params();
        if let Some(v) = &vnet {
            critic_params.extend(v.params());
        }
        let critic_opt = Adam::new(critic_params, config.lr_critic);
        let actor_opt = Adam::new(policies.params(), config.lr_actor);
        Ok(Learner { stack, policies, vnet, critic_opt, actor_opt })
    }

    pub fn named_params(&self) -> Vec<(String, Var<Real>)> {
        let mut named = self.stack.named_params();
        named.extend(self.policies.named_params());
        if let Some(v) = &self.vnet {
            named.extend(v.named_params());
        }
        named
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        Checkpoint::from_named(&self.named_params()).save(path)
    }

    /// Restore parameters and resynchronize the frozen critic targets.
    pub fn apply_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.apply(&self.named_params())?;
        self.stack.rebuild_targets();
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Shared loop pieces
// ---------------------------------------------------------------------------

pub(crate) fn max_abs_return(header: &DatasetHeader) -> Real {
    // Floor of 1.0 keeps the drift threshold positive when a degenerate
    // dataset has all-zero returns.
    header.return_min.abs().max(header.return_max.abs()).max(1.0)
}

fn row_array(a: &Array<Real>, r: usize) -> Array<Real> {
    Array::new(vec![1, a.shape()[1]], a.row(r).to_vec())
}

/// `‖∂Q_tot/∂[q_1..q_A]‖` of mixer member 0 at the first row of the batch;
/// `None` for non-mixer decompositions.
pub(crate) fn mixer_opnorm_probe(stack: &CriticStack, batch: &Batch) -> Result<Option<Real>> {
    if stack.decomp() != Decomp::Mix {
        return Ok(None);
    }
    let state = Var::constant(row_array(&batch.state, 0));
    let obs: Vec<Var<Real>> =
        batch.obs.iter().map(|o| Var::constant(row_array(o, 0))).collect();
    let act: Vec<Var<Real>> =
        batch.act_enc.iter().map(|a| Var::constant(row_array(a, 0))).collect();
    let inputs = QInputs { state: &state, obs: &obs, act: &act };
    let utilities: Vec<Real> = stack
        .min_ensemble_agent_qs(&inputs, false)?
        .iter()
        .map(|q| q.value().as_slice()[0])
        .collect();
    let norm = operator_norm_of_mixer(stack, 0, batch.state.row(0), &utilities)?;
    Ok(Some(norm.value))
}

pub(crate) fn run_eval(
    policies: &PolicySet,
    env_name: &str,
    config: &RunConfig,
    step: u64,
) -> Result<EvalRecord> {
    let mut env = make_env(env_name)?;
    let eval_seed = config.seed.wrapping_add(EVAL_STREAM).wrapping_add(step);
    let (mean, std, _) =
        evaluate(policies, env.as_mut(), config.eval_episodes as usize, eval_seed)?;
    let score = match super::config::score_key_for_env(&config.env) {
        Some(key) => Some(normalized_score(key, mean)?),
        None => None,
    };
    Ok(EvalRecord { step, return_mean: mean, return_std: std, normalized_score: score })
}

/// Rebuild the networks a config describes, load `checkpoint_path` into
/// them, and run `episodes` deterministic evaluation episodes from `seed`.
/// No dataset is read; the environment registry supplies the dimensions.
pub fn evaluate_checkpoint(
    config: &RunConfig,
    checkpoint_path: impl AsRef<Path>,
    episodes: u64,
    seed: u64,
) -> Result<EvalRecord> {
    config.validate()?;
    let mut env = make_env(&config.env)?;
    let spec = env.spec().clone();
    let mut learner = Learner::build(config, &spec)?;
    learner.apply_checkpoint(&Checkpoint::load(checkpoint_path)?)?;
    let (mean, std, _) = evaluate(&learner.policies, env.as_mut(), episodes as usize, seed)?;
    let score = match super::config::score_key_for_env(&config.env) {
        Some(key) => Some(normalized_score(key, mean)?),
        None => None,
    };
    Ok(EvalRecord { step: 0, return_mean: mean, return_std: std, normalized_score: score })
}

pub(crate) struct HaltArgs<'a> {
    pub writer: MetricsWriter,
    pub learner: &'a Learner,
    pub out_dir: &'a Path,
    pub config: &'a RunConfig,
    pub best: Option<EvalRecord>,
    pub last_eval: Option<EvalRecord>,
    pub step: u64,
    pub reason: String,
}

/// Flush what exists, save the final checkpoint, and write a partial summary
/// carrying the halt reason. Returns the summary (the caller's `Ok` value —
/// a halted run is a reportable outcome, not an error).
pub(crate) fn halt_run(args: HaltArgs<'_>) -> Result<RunSummary> {
    args.writer.finish()?;
    args.learner.save_checkpoint(args.out_dir.join(FINAL_CHECKPOINT_FILE))?;
    let summary = RunSummary {
        status: RunStatus::Halted,
        halt_reason: Some(args.reason),
        halt_step: Some(args.step),
        steps_done: args.step,
        seed: args.config.seed,
        final_eval: args.last_eval,
        best_eval: args.best,
        config: args.config.clone(),
    };
    summary.save(args.out_dir.join(SUMMARY_FILE))?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Offline training
// ---------------------------------------------------------------------------

/// Train per `config`, writing all outputs under `out_dir`.
///
/// A divergence halt (non-finite loss, value-scale drift, or gradient
/// blow-up) is returned as `Ok` with [`RunStatus::Halted`] and the reason in
/// the summary; hard errors (I/O, bad config, bad dataset) are `Err`.
pub fn train(config: &RunConfig, out_dir: impl AsRef<Path>) -> Result<RunSummary> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let (header, records) = load_dataset(&config.dataset)?;
    check_dataset_matches(config, &header)?;
    if records.len() < config.batch_size {
        return Err(Error::config(format!(
            "dataset holds {} records, fewer than batch_size {}",
            records.len(),
            config.batch_size
        )));
    }
    let spec = header.env_spec.clone();
    let mut learner = Learner::build(config, &spec)?;
    let monitor = DivergenceMonitor::new(max_abs_return(&header), config.gamma);
    train_loop(
        config,
        out_dir,
        &mut learner,
        &monitor,
        config.total_steps,
        None,
        |_, rng| sample_batch(&records, &spec, config.batch_size, rng),
    )
}

pub(crate) fn check_dataset_matches(config: &RunConfig, header: &DatasetHeader) -> Result<()> {
    if header.env != config.env {
        return Err(Error::config(format!(
            "dataset {} was generated on environment '{}', config says '{}'",
            config.dataset.display(),
            header.env,
            config.env
        )));
    }
    Ok(())
}

/// The alternating update loop shared by offline training and online
/// fine-tuning. `next_batch` abstracts where minibatches come from; it
/// receives the current policies so fine-tuning can collect rollouts with
/// them before sampling. `initial_eval` seeds best/final bookkeeping (the
/// offline baseline during fine-tuning).
pub(crate) fn train_loop(
    config: &RunConfig,
    out_dir: &Path,
    learner: &mut Learner,
    monitor: &DivergenceMonitor,
    steps: u64,
    initial_eval: Option<EvalRecord>,
    mut next_batch: impl FnMut(&PolicySet, &mut ChaCha8Rng) -> Result<Batch>,
) -> Result<RunSummary> {
    let vl_config = config.value_learn_config();
    let ex_config = config.extraction_config();
    let mut train_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(TRAIN_STREAM));
    let mut writer = MetricsWriter::create(out_dir.join(METRICS_FILE))?;
    let mut best: Option<EvalRecord> = initial_eval.clone();
    let mut last_eval: Option<EvalRecord> = initial_eval;
    if best.is_some() {
        learner.save_checkpoint(out_dir.join(BEST_CHECKPOINT_FILE))?;
    }

    for step in 1..=steps {
        let batch = next_batch(&learner.policies, &mut train_rng)?;
        let cm = match critic_update(
            &learner.stack,
            learner.vnet.as_ref(),
            &batch,
            &learner.policies,
            &vl_config,
            &mut learner.critic_opt,
            &mut train_rng,
        ) {
            Ok(cm) => cm,
            Err(Error::Divergence(reason)) => {
                return halt_run(HaltArgs {
                    writer,
                    learner,
                    out_dir,
                    config,
                    best,
                    last_eval,
                    step,
                    reason,
                })
            }
            Err(e) => return Err(e),
        };
        let am = match actor_update(
            &learner.policies,
            &learner.stack,
            learner.vnet.as_ref(),
            &batch,
            &ex_config,
            &mut learner.actor_opt,
            &mut train_rng,
        ) {
            Ok(am) => am,
            Err(Error::Divergence(reason)) => {
                return halt_run(HaltArgs {
                    writer,
                    learner,
                    out_dir,
                    config,
                    best,
                    last_eval,
                    step,
                    reason,
                })
            }
            Err(e) => return Err(e),
        };

        let grad_norm_total = (cm.grad_norm.powi(2) + am.grad_norm.powi(2)).sqrt();
        let flags = monitor.check(cm.q_abs_mean, grad_norm_total);

        if step % config.eval_every == 0 {
            let rec = run_eval(&learner.policies, &config.env, config, step)?;
            if best.as_ref().map_or(true, |b| rec.return_mean > b.return_mean) {
                best = Some(rec.clone());
                learner.save_checkpoint(out_dir.join(BEST_CHECKPOINT_FILE))?;
            }
            last_eval = Some(rec);
        }

        if step % LOG_INTERVAL == 0 || flags.any() {
            let opnorm = mixer_opnorm_probe(&learner.stack, &batch)?;
            let eval_here = last_eval.as_ref().filter(|e| e.step == step);
            writer.write_row(&MetricsRow {
                step,
                td_loss: cm.td_loss,
                q_mean: cm.q_mean,
                q_abs_mean: cm.q_abs_mean,
                actor_loss: am.actor_loss,
                grad_norm_total,
                jacobian_opnorm: opnorm,
                loop_gain_svn: opnorm
                    .map(|op| loop_gain(op, config.gamma, 1.0, Some(cm.sigma_q))),
                eval_return_mean: eval_here.map(|e| e.return_mean),
                eval_return_std: eval_here.map(|e| e.return_std),
                normalized_score: eval_here.and_then(|e| e.normalized_score),
                flags: flags.render(),
            })?;
        }

        if flags.any() {
            return halt_run(HaltArgs {
                writer,
                learner,
                out_dir,
                config,
                best,
                last_eval,
                step,
                reason: format!("divergence monitor: {}", flags.render()),
            });
        }
    }

    // A final evaluation when the cadence did not land on the last step.
    if last_eval.as_ref().map_or(true, |e| e.step != steps) {
        let rec = run_eval(&learner.policies, &config.env, config, steps)?;
        if best.as_ref().map_or(true, |b| rec.return_mean > b.return_mean) {
            best = Some(rec.clone());
            learner.save_checkpoint(out_dir.join(BEST_CHECKPOINT_FILE))?;
        }
        last_eval = Some(rec);
    }

    writer.finish()?;
    learner.save_checkpoint(out_dir.join(FINAL_CHECKPOINT_FILE))?;
    let summary = RunSummary {
        status: RunStatus::Completed,
        halt_reason: None,
        halt_step: None,
        steps_done: steps,
        seed: config.seed,
        final_eval: last_eval,
        best_eval: best,
        config: config.clone(),
    };
    summary.save(out_dir.join(SUMMARY_FILE))?;
    Ok(summary)
}
