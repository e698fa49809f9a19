//! Policy extraction: per-agent stochastic actors trained from a frozen
//! critic by either behavioural-regularized critic ascent (`brac`) or
//! advantage-weighted regression (`awr`).
//!
//! The `brac` Q-term optionally applies the actor-side scale remedy: the
//! batch of joint values is centred by its detached mean and divided by its
//! detached mean absolute value, which leaves the preference ordering intact
//! but makes the actor gradient invariant to any global rescaling of the
//! critic.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datastore::Batch;
use crate::diffmath::graph::Var;
use crate::diffmath::mlp::{Activation, Mlp};
use crate::diffmath::{Adam, Array};
use crate::envsim::{ActionSpace, Environment, JointAction};
use crate::error::{Error, Result};
use crate::valuedecomp::{CriticStack, Decomp, QInputs};
use crate::valuelearn::VNet;
use crate::Real;

pub const LOG_STD_MIN: Real = -5.0;
pub const LOG_STD_MAX: Real = 2.0;
pub const LOG_STD_INIT: Real = -0.5;
const LN_2PI: Real = 1.8378770664093453;

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// Per-agent actors. Continuous spaces get a diagonal-Gaussian head: the
/// network outputs the mean, the log standard deviation is a state-independent
/// parameter clamped to `[-5, 2]`. Discrete spaces get logits.
pub struct PolicySet {
    space: ActionSpace,
    nets: Vec<Mlp<Real>>,
    /// `[act_dim]` per agent; continuous spaces only.
    log_std: Vec<Var<Real>>,
}

impl PolicySet {
    pub fn new(
        num_agents: usize,
        obs_dim: usize,
        space: &ActionSpace,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let out = space.encoded_width_checked()?;
        let sizes: Vec<usize> = std::iter::once(obs_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(out))
            .collect();
        let nets: Result<Vec<_>> =
            (0..num_agents).map(|_| Mlp::new(&sizes, Activation::Relu, false, rng)).collect();
        let log_std = match space {
            ActionSpace::Continuous { dim, .. } => (0..num_agents)
                .map(|_| Var::leaf(Array::full(vec![*dim], LOG_STD_INIT), true))
                .collect(),
            ActionSpace::Discrete { .. } => Vec::new(),
        };
        Ok(PolicySet { space: space.clone(), nets: nets?, log_std })
    }

    pub fn num_agents(&self) -> usize {
        self.nets.len()
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    /// Network head for one agent: Gaussian mean or logits, `[B, out]`.
    pub fn head(&self, agent: usize, obs: &Var<Real>) -> Result<Var<Real>> {
        self.nets[agent].forward(obs)
    }

    fn clamped_log_std(&self, agent: usize) -> Var<Real> {
        self.log_std[agent].clamp(LOG_STD_MIN, LOG_STD_MAX)
    }

    /// Log-likelihood of recorded actions, `[B, 1]` per agent.
    pub fn log_prob(
        &self,
        agent: usize,
        obs: &Var<Real>,
        act_enc: &Var<Real>,
        act_idx: Option<&[usize]>,
    ) -> Result<Var<Real>> {
        match &self.space {
            ActionSpace::Continuous { .. } => {
                let mean = self.head(agent, obs)?;
                let ls = self.clamped_log_std(agent);
                let inv_var = ls.scale(-2.0).exp();
                let z2 = act_enc.sub(&mean).square().mul(&inv_var);
                let per_dim = z2.scale(-0.5).sub(&ls).add_const(-0.5 * LN_2PI);
                Ok(per_dim.row_sum())
            }
            ActionSpace::Discrete { .. } => {
                let idx = act_idx
                    .ok_or_else(|| Error::usage("discrete log-prob needs action indices"))?;
                Ok(self.head(agent, obs)?.log_softmax().gather_col(idx))
            }
        }
    }

    /// Differentiable per-agent actions for the critic ascent term:
    /// reparameterized Gaussian samples (continuous) or softmax-relaxed
    /// one-hot distributions (discrete).
    pub fn reparam_actions(
        &self,
        obs: &[Var<Real>],
        rng: &mut impl Rng,
    ) -> Result<Vec<Var<Real>>> {
        (0..self.num_agents())
            .map(|a| {
                let head = self.head(a, &obs[a])?;
                match &self.space {
                    ActionSpace::Continuous { dim, .. } => {
                        let b = head.shape()[0];
                        let eps: Vec<Real> =
                            (0..b * dim).map(|_| rng.sample(StandardNormal)).collect();
                        let eps = Var::constant(Array::new(vec![b, *dim], eps));
                        let std = self.clamped_log_std(a).exp();
                        Ok(head.add(&eps.mul(&std)))
                    }
                    ActionSpace::Discrete { .. } => Ok(head.softmax()),
                }
            })
            .collect()
    }

    /// Detached encoded action samples (for TD targets and rollouts).
    /// Continuous samples are clipped to the action bounds.
    pub fn sample_encoded(&self, obs: &[Array<Real>], rng: &mut impl Rng) -> Vec<Array<Real>> {
        (0..self.num_agents())
            .map(|a| {
                let head = self.nets[a].forward_values(&obs[a]);
                match &self.space {
                    ActionSpace::Continuous { dim, low, high } => {
                        let ls = self.log_std[a].value_clone();
                        let (b, _) = head.dims2();
                        let mut out = head.clone();
                        for r in 0..b {
                            for d in 0..*dim {
                                let std =
                                    ls.as_slice()[d].clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
                                let z: Real = rng.sample(StandardNormal);
                                let v = (out.get2(r, d) + std * z).clamp(*low, *high);
                                out.set2(r, d, v);
                            }
                        }
                        out
                    }
                    ActionSpace::Discrete { n } => {
                        let (b, _) = head.dims2();
                        let mut out = Array::zeros(vec![b, *n]);
                        for r in 0..b {
                            let row = head.row(r);
                            let mx = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
                            let probs: Vec<Real> = row.iter().map(|&l| (l - mx).exp()).collect();
                            let total: Real = probs.iter().sum();
                            let mut u: Real = rng.gen::<Real>() * total;
                            let mut pick = *n - 1;
                            for (k, &p) in probs.iter().enumerate() {
                                if u < p {
                                    pick = k;
                                    break;
                                }
                                u -= p;
                            }
                            out.set2(r, pick, 1.0);
                        }
                        out
                    }
                }
            })
            .collect()
    }

    /// Greedy evaluation action for one agent: Gaussian mean clipped to the
    /// bounds, or the argmax over logits.
    pub fn deterministic_action(&self, agent: usize, obs: &[Real]) -> DeterministicAction {
        let input = Array::new(vec![1, obs.len()], obs.to_vec());
        let head = self.nets[agent].forward_values(&input);
        match &self.space {
            ActionSpace::Continuous { low, high, .. } => DeterministicAction::Continuous(
                head.as_slice().iter().map(|&v| v.clamp(*low, *high)).collect(),
            ),
            ActionSpace::Discrete { .. } => {
                let row = head.row(0);
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                DeterministicAction::Discrete(argmax)
            }
        }
    }

    pub fn params(&self) -> Vec<Var<Real>> {
        let mut p = Vec::new();
        for net in &self.nets {
            p.extend(net.params());
        }
        p.extend(self.log_std.iter().cloned());
        p
    }

    pub fn named_params(&self) -> Vec<(String, Var<Real>)> {
        let mut p = Vec::new();
        for (a, net) in self.nets.iter().enumerate() {
            p.extend(net.named_params(&format!("actor{a}")));
        }
        for (a, ls) in self.log_std.iter().enumerate() {
            p.push((format!("actor{a}.log_std"), ls.clone()));
        }
        p
    }
}

pub enum DeterministicAction {
    Discrete(usize),
    Continuous(Vec<Real>),
}

impl ActionSpace {
    fn encoded_width_checked(&self) -> Result<usize> {
        match self {
            ActionSpace::Discrete { n } if *n < 2 => {
                Err(Error::config("discrete action space needs at least 2 actions"))
            }
            other => Ok(other.encoded_width()),
        }
    }
}

// ---------------------------------------------------------------------------
// Extraction objectives
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractMethod {
    Brac,
    Awr,
}

impl FromStr for ExtractMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brac" => Ok(ExtractMethod::Brac),
            "awr" => Ok(ExtractMethod::Awr),
            other => Err(Error::config(format!(
                "unknown extraction method '{other}' (known: brac, awr)"
            ))),
        }
    }
}

impl fmt::Display for ExtractMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtractMethod::Brac => "brac",
            ExtractMethod::Awr => "awr",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExtractionConfig {
    pub method: ExtractMethod,
    /// BRAC: BC weight. AWR: advantage temperature.
    pub alpha: Real,
    /// Scale-invariant Q-term normalization.
    pub actor_norm: bool,
    pub awr_weight_clip: Real,
    /// Use per-agent advantages `Q_a - V_a` instead of the shared global
    /// advantage (always on for `dec`).
    pub awr_per_agent_adv: bool,
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if self.awr_weight_clip < 1.0 {
            return Err(Error::config(format!(
                "awr_weight_clip must be >= 1, got {}",
                self.awr_weight_clip
            )));
        }
        Ok(())
    }
}

fn batch_obs_vars(batch: &Batch) -> Vec<Var<Real>> {
    batch.obs.iter().map(|o| Var::constant(o.clone())).collect()
}

fn behavior_cloning_term(policies: &PolicySet, batch: &Batch, obs: &[Var<Real>]) -> Result<Var<Real>> {
    let mut terms = Vec::new();
    for a in 0..policies.num_agents() {
        let lp = policies.log_prob(
            a,
            &obs[a],
            &Var::constant(batch.act_enc[a].clone()),
            batch.act_idx.as_ref().map(|idx| idx[a].as_slice()),
        )?;
        terms.push(lp.mean().neg());
    }
    let mut total = terms[0].clone();
    for t in &terms[1..] {
        total = total.add(t);
    }
    Ok(total)
}

/// Critic ascent with a behavior-cloning anchor:
/// `loss = Qterm + alpha * BC`. The critic is used read-only — gradients
/// reach the actors through the sampled actions only.
pub fn brac_loss(
    policies: &PolicySet,
    stack: &CriticStack,
    batch: &Batch,
    config: &ExtractionConfig,
    rng: &mut impl Rng,
) -> Result<Var<Real>> {
    let obs = batch_obs_vars(batch);
    let sampled = policies.reparam_actions(&obs, rng)?;
    let state = Var::constant(batch.state.clone());
    let inputs = QInputs { state: &state, obs: &obs, act: &sampled };

    // dec has no joint value: each agent ascends its own critic.
    let q = match stack.decomp() {
        Decomp::Dec => {
            let qs = stack.min_ensemble_agent_qs(&inputs, false)?;
            let mut total = qs[0].clone();
            for qa in &qs[1..] {
                total = total.add(qa);
            }
            total
        }
        _ => stack.min_ensemble_q_tot(&inputs, false)?,
    };

    let q_term = if config.actor_norm {
        let vals = q.value_clone();
        let mu = vals.mean();
        let mad_abs = vals.as_slice().iter().map(|v| v.abs()).sum::<Real>()
            / vals.numel() as Real;
        // centred mean over the batch, scaled by the detached magnitude
        q.add_const(-mu).mean().neg().scale(1.0 / mad_abs)
    } else {
        q.mean().neg()
    };

    let bc = behavior_cloning_term(policies, batch, &obs)?;
    Ok(q_term.add(&bc.scale(config.alpha)))
}

/// Advantage-weighted regression: behaviour cloning with detached weights
/// `min(exp(alpha * advantage), clip)`.
pub fn awr_loss(
    policies: &PolicySet,
    stack: &CriticStack,
    vnet: &VNet,
    batch: &Batch,
    config: &ExtractionConfig,
) -> Result<Var<Real>> {
    let obs = batch_obs_vars(batch);
    let state = Var::constant(batch.state.clone());
    let act: Vec<Var<Real>> =
        batch.act_enc.iter().map(|a| Var::constant(a.clone())).collect();
    let inputs = QInputs { state: &state, obs: &obs, act: &act };

    let per_agent = config.awr_per_agent_adv || stack.decomp() == Decomp::Dec;
    let advantages: Vec<Array<Real>> = if per_agent {
        let qs = stack.min_ensemble_agent_qs(&inputs, false)?;
        (0..policies.num_agents())
            .map(|a| {
                let v = vnet.agent_values(a, &batch.obs[a])?;
                Ok(qs[a].value_clone().zip(&v, |q, vv| q - vv))
            })
            .collect::<Result<_>>()?
    } else {
        let q = stack.min_ensemble_q_tot(&inputs, false)?;
        let v = vnet.state_values(&batch.state)?;
        let adv = q.value_clone().zip(&v, |qv, vv| qv - vv);
        vec![adv; policies.num_agents()]
    };

    let mut total: Option<Var<Real>> = None;
    for a in 0..policies.num_agents() {
        let weights = advantages[a]
            .map(|adv| (config.alpha * adv).exp().min(config.awr_weight_clip));
        let lp = policies.log_prob(
            a,
            &obs[a],
            &act[a],
            batch.act_idx.as_ref().map(|idx| idx[a].as_slice()),
        )?;
        let term = lp.mul(&Var::constant(weights)).mean().neg();
        total = Some(match total {
            Some(t) => t.add(&term),
            None => term,
        });
    }
    Ok(total.expect("at least one agent"))
}

/// One optimizer step on all actors. The critic and value networks are
/// read-only here.
pub fn actor_update(
    policies: &PolicySet,
    stack: &CriticStack,
    vnet: Option<&VNet>,
    batch: &Batch,
    config: &ExtractionConfig,
    optimizer: &mut Adam<Real>,
    rng: &mut impl Rng,
) -> Result<ActorMetrics> {
    let loss = match config.method {
        ExtractMethod::Brac => brac_loss(policies, stack, batch, config, rng)?,
        ExtractMethod::Awr => {
            let vnet = vnet.ok_or_else(|| Error::usage("awr needs a value network"))?;
            awr_loss(policies, stack, vnet, batch, config)?
        }
    };
    let loss_value = loss.value().as_slice()[0];
    if !loss_value.is_finite() {
        return Err(Error::divergence(format!("actor loss became {loss_value}")));
    }
    optimizer.zero_grad();
    loss.backward()?;
    let grad_norm = crate::diffmath::global_grad_norm(optimizer.params());
    optimizer.step()?;
    Ok(ActorMetrics { actor_loss: loss_value, grad_norm })
}

#[derive(Debug, Clone, Copy)]
pub struct ActorMetrics {
    pub actor_loss: Real,
    pub grad_norm: Real,
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Deterministic-action rollouts; returns `(mean, std, per-episode returns)`.
pub fn evaluate(
    policies: &PolicySet,
    env: &mut dyn Environment,
    episodes: usize,
    seed: u64,
) -> Result<(Real, Real, Vec<Real>)> {
    if episodes == 0 {
        return Err(Error::usage("evaluation needs at least one episode"));
    }
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let (_, mut obs) = env.reset(seed.wrapping_add(ep as u64));
        let mut total = 0.0;
        loop {
            let joint = deterministic_joint(policies, &obs);
            let step = env.step(&joint)?;
            total += step.team_reward;
            if step.done {
                break;
            }
            obs = step.next_obs;
        }
        returns.push(total);
    }
    let n = returns.len() as Real;
    let mean = returns.iter().sum::<Real>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<Real>() / n;
    Ok((mean, var.sqrt(), returns))
}

/// Rollout action with exploration noise: Gaussian of fixed standard
/// deviation `exploration_std` around the policy mean (clipped to bounds)
/// for continuous spaces, sampling from the logits for discrete ones.
pub fn explore_joint(
    policies: &PolicySet,
    obs: &[Vec<Real>],
    exploration_std: Real,
    rng: &mut impl Rng,
) -> JointAction {
    match policies.space() {
        ActionSpace::Continuous { dim, low, high } => JointAction::Continuous(
            (0..policies.num_agents())
                .map(|a| {
                    let input = Array::new(vec![1, obs[a].len()], obs[a].clone());
                    let mean = policies.nets[a].forward_values(&input);
                    (0..*dim)
                        .map(|d| {
                            let z: Real = rng.sample(StandardNormal);
                            (mean.get2(0, d) + exploration_std * z).clamp(*low, *high)
                        })
                        .collect()
                })
                .collect(),
        ),
        ActionSpace::Discrete { n } => JointAction::Discrete(
            (0..policies.num_agents())
                .map(|a| {
                    let input = Array::new(vec![1, obs[a].len()], obs[a].clone());
                    let logits = policies.nets[a].forward_values(&input);
                    let row = logits.row(0);
                    let mx = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
                    let probs: Vec<Real> = row.iter().map(|&l| (l - mx).exp()).collect();
                    let total: Real = probs.iter().sum();
                    let mut u: Real = rng.gen::<Real>() * total;
                    let mut pick = *n - 1;
                    for (k, &p) in probs.iter().enumerate() {
                        if u < p {
                            pick = k;
                            break;
                        }
                        u -= p;
                    }
                    pick
                })
                .collect(),
        ),
    }
}

pub fn deterministic_joint(policies: &PolicySet, obs: &[Vec<Real>]) -> JointAction {
    let acts: Vec<DeterministicAction> = (0..policies.num_agents())
        .map(|a| policies.deterministic_action(a, &obs[a]))
        .collect();
    match policies.space() {
        ActionSpace::Discrete { .. } => JointAction::Discrete(
            acts.iter()
                .map(|a| match a {
                    DeterministicAction::Discrete(i) => *i,
                    _ => unreachable!(),
                })
                .collect(),
        ),
        ActionSpace::Continuous { .. } => JointAction::Continuous(
            acts.into_iter()
                .map(|a| match a {
                    DeterministicAction::Continuous(v) => v,
                    _ => unreachable!(),
                })
                .collect(),
        ),
    }
}
