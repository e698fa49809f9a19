//! Critic training: TD / SARSA / implicit-Q targets with optional
//! scale-invariant value normalization (SVN).
//!
//! SVN replaces the plain squared TD error with the squared error of
//! *normalized* values, `((q - mu)/sigma - (y - mu)/sigma)^2`, where `mu` is
//! the detached batch mean and `sigma` the detached batch mean absolute
//! deviation (plus a small floor) of the current min-ensemble values. Both
//! statistics are constants to the graph, so the loss value and its gradient
//! are exactly the plain versions divided by `sigma^2` — the update direction
//! is untouched while its magnitude stops depending on the reward scale.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::Batch;
use crate::diffmath::graph::Var;
use crate::diffmath::mlp::{Activation, Mlp};
use crate::diffmath::{Adam, Array};
use crate::error::{Error, Result};
use crate::policyext::PolicySet;
use crate::valuedecomp::{CriticStack, Decomp, QInputs, ENSEMBLE};
use crate::Real;

pub const DEFAULT_SVN_EPSILON: Real = 1e-6;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMethod {
    /// Bootstrapped target with next actions drawn from the current policies.
    Td,
    /// Bootstrapped target with the next actions recorded in the dataset.
    Sarsa,
    /// Expectile value network; the critic regresses `r + gamma * V(s')`.
    Iql,
}

impl FromStr for ValueMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "td" => Ok(ValueMethod::Td),
            "sarsa" => Ok(ValueMethod::Sarsa),
            "iql" => Ok(ValueMethod::Iql),
            other => Err(Error::config(format!(
                "unknown value-learning method '{other}' (known: td, sarsa, iql)"
            ))),
        }
    }
}

impl fmt::Display for ValueMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueMethod::Td => "td",
            ValueMethod::Sarsa => "sarsa",
            ValueMethod::Iql => "iql",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ValueLearnConfig {
    pub method: ValueMethod,
    pub gamma: Real,
    /// Expectile for the IQL value network.
    pub iql_tau: Real,
    pub svn: bool,
    pub svn_epsilon: Real,
    pub polyak_tau: Real,
    /// Regress only the min-ensemble value (one loss term) instead of pulling
    /// both members toward the shared target.
    pub listing1_strict: bool,
}

impl ValueLearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.iql_tau > 0.0 && self.iql_tau < 1.0) {
            return Err(Error::config(format!(
                "iql_tau must lie in (0, 1), got {}",
                self.iql_tau
            )));
        }
        if !(self.svn_epsilon > 0.0) {
            return Err(Error::config(format!(
                "svn_epsilon must be positive, got {}",
                self.svn_epsilon
            )));
        }
        if !(self.polyak_tau > 0.0 && self.polyak_tau <= 1.0) {
            return Err(Error::config(format!(
                "polyak_tau must lie in (0, 1], got {}",
                self.polyak_tau
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Normalization statistics
// ---------------------------------------------------------------------------

/// Detached batch statistics of the current min-ensemble values. Plain
/// numbers, not graph nodes: they cannot carry gradient by construction.
#[derive(Debug, Clone, Copy)]
pub struct NormStats {
    pub mu_q: Real,
    pub sigma_q: Real,
}

impl NormStats {
    /// No-op statistics: the normalized loss collapses to the plain one.
    pub fn identity() -> Self {
        NormStats { mu_q: 0.0, sigma_q: 1.0 }
    }
}

/// Mean and mean-absolute-deviation (+ `epsilon`) of a value batch.
pub fn svn_stats(q_values: &Array<Real>, epsilon: Real) -> NormStats {
    let n = q_values.numel() as Real;
    let mu = q_values.as_slice().iter().sum::<Real>() / n;
    let mad = q_values.as_slice().iter().map(|v| (v - mu).abs()).sum::<Real>() / n;
    NormStats { mu_q: mu, sigma_q: mad + epsilon }
}

/// Squared error between normalized current values and normalized targets.
/// Equals `(1 / sigma^2) * MSE(q, y)` in both value and gradient.
pub fn svn_td_loss(q: &Var<Real>, target: &Var<Real>, stats: &NormStats) -> Var<Real> {
    let qn = q.add_const(-stats.mu_q).scale(1.0 / stats.sigma_q);
    let yn = target.add_const(-stats.mu_q).scale(1.0 / stats.sigma_q);
    qn.sub(&yn).square().mean()
}

/// Asymmetric squared loss `|tau - 1{u < 0}| * u^2`, averaged. The indicator
/// weight is detached, matching the piecewise-constant subgradient.
pub fn expectile_loss(diff: &Var<Real>, tau: Real) -> Var<Real> {
    let weights = diff.value_clone().map(|u| if u < 0.0 { 1.0 - tau } else { tau });
    diff.square().mul(&Var::constant(weights)).mean()
}

// ---------------------------------------------------------------------------
// Value network (IQL expectile / AWR baseline)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VScope {
    /// One network over the global state: `V_tot(s)`.
    Global,
    /// One network per agent over its observation: `V_a(o_a)`.
    PerAgent,
}

pub struct VNet {
    scope: VScope,
    nets: Vec<Mlp<Real>>,
}

impl VNet {
    pub fn global(state_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(state_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        Ok(VNet { scope: VScope::Global, nets: vec![Mlp::new(&sizes, Activation::Relu, true, rng)?] })
    }

    pub fn per_agent(
        num_agents: usize,
        obs_dim: usize,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(obs_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let nets: Result<Vec<_>> =
            (0..num_agents).map(|_| Mlp::new(&sizes, Activation::Relu, true, rng)).collect();
        Ok(VNet { scope: VScope::PerAgent, nets: nets? })
    }

    pub fn scope(&self) -> VScope {
        self.scope
    }

    pub fn forward_state(&self, state: &Var<Real>) -> Result<Var<Real>> {
        match self.scope {
            VScope::Global => self.nets[0].forward(state),
            VScope::PerAgent => {
                Err(Error::usage("per-agent value network has no global state head"))
            }
        }
    }

    pub fn forward_agent(&self, agent: usize, obs: &Var<Real>) -> Result<Var<Real>> {
        match self.scope {
            VScope::PerAgent => self.nets[agent].forward(obs),
            VScope::Global => Err(Error::usage("global value network has no per-agent heads")),
        }
    }

    /// Detached `V(s)` column, `[B, 1]`.
    pub fn state_values(&self, state: &Array<Real>) -> Result<Array<Real>> {
        match self.scope {
            VScope::Global => Ok(self.nets[0].forward_values(state)),
            VScope::PerAgent => {
                Err(Error::usage("per-agent value network has no global state head"))
            }
        }
    }

    /// Detached `V_a(o_a)` column, `[B, 1]`.
    pub fn agent_values(&self, agent: usize, obs: &Array<Real>) -> Result<Array<Real>> {
        match self.scope {
            VScope::PerAgent => Ok(self.nets[agent].forward_values(obs)),
            VScope::Global => Err(Error::usage("global value network has no per-agent heads")),
        }
    }

    pub fn params(&self) -> Vec<Var<Real>> {
        self.nets.iter().flat_map(|n| n.params()).collect()
    }

    pub fn named_params(&self) -> Vec<(String, Var<Real>)> {
        match self.scope {
            VScope::Global => self.nets[0].named_params("vnet"),
            VScope::PerAgent => self
                .nets
                .iter()
                .enumerate()
                .flat_map(|(a, n)| n.named_params(&format!("vnet{a}")))
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Bootstrapped targets (all detached)
// ---------------------------------------------------------------------------

fn assemble_target(batch: &Batch, boot: &Array<Real>, gamma: Real) -> Result<Array<Real>> {
    let mut y = Vec::with_capacity(batch.size);
    for i in 0..batch.size {
        let r = batch.reward.as_slice()[i];
        let d = batch.done.as_slice()[i];
        let v = r + gamma * (1.0 - d) * boot.as_slice()[i];
        if !v.is_finite() {
            return Err(Error::divergence(format!("bootstrapped target became {v}")));
        }
        y.push(v);
    }
    Ok(Array::new(vec![batch.size, 1], y))
}

fn next_inputs<'a>(
    next_state: &'a Var<Real>,
    next_obs: &'a [Var<Real>],
    next_act: &'a [Var<Real>],
) -> QInputs<'a> {
    QInputs { state: next_state, obs: next_obs, act: next_act }
}

/// `y = r + gamma * (1 - done) * min_k Q_tot^target(s', u' ~ pi)`.
pub fn td_target(
    stack: &CriticStack,
    batch: &Batch,
    policies: &PolicySet,
    gamma: Real,
    rng: &mut impl Rng,
) -> Result<Array<Real>> {
    let sampled = policies.sample_encoded(&batch.next_obs, rng);
    let next_state = Var::constant(batch.next_state.clone());
    let next_obs: Vec<Var<Real>> =
        batch.next_obs.iter().map(|o| Var::constant(o.clone())).collect();
    let next_act: Vec<Var<Real>> = sampled.into_iter().map(Var::constant).collect();
    let q = stack
        .min_ensemble_q_tot(&next_inputs(&next_state, &next_obs, &next_act), true)?
        .value_clone();
    assemble_target(batch, &q, gamma)
}

/// Per-agent variant of [`td_target`] for the `dec` decomposition.
pub fn td_target_dec(
    stack: &CriticStack,
    batch: &Batch,
    policies: &PolicySet,
    gamma: Real,
    rng: &mut impl Rng,
) -> Result<Vec<Array<Real>>> {
    let sampled = policies.sample_encoded(&batch.next_obs, rng);
    let next_state = Var::constant(batch.next_state.clone());
    let next_obs: Vec<Var<Real>> =
        batch.next_obs.iter().map(|o| Var::constant(o.clone())).collect();
    let next_act: Vec<Var<Real>> = sampled.into_iter().map(Var::constant).collect();
    let qs = stack.min_ensemble_agent_qs(&next_inputs(&next_state, &next_obs, &next_act), true)?;
    qs.iter().map(|q| assemble_target(batch, &q.value_clone(), gamma)).collect()
}

fn require_next_actions(batch: &Batch) -> Result<()> {
    for i in 0..batch.size {
        if batch.done.as_slice()[i] == 0.0 && !batch.has_next_actions[i] {
            return Err(Error::dataset(
                0,
                format!("batch row {i} is non-terminal but carries no next actions (sarsa needs them)"),
            ));
        }
    }
    Ok(())
}

/// `y = r + gamma * (1 - done) * min_k Q_tot^target(s', u'_data)`.
pub fn sarsa_target(stack: &CriticStack, batch: &Batch, gamma: Real) -> Result<Array<Real>> {
    require_next_actions(batch)?;
    let next_state = Var::constant(batch.next_state.clone());
    let next_obs: Vec<Var<Real>> =
        batch.next_obs.iter().map(|o| Var::constant(o.clone())).collect();
    let next_act: Vec<Var<Real>> =
        batch.next_act_enc.iter().map(|a| Var::constant(a.clone())).collect();
    let q = stack
        .min_ensemble_q_tot(&next_inputs(&next_state, &next_obs, &next_act), true)?
        .value_clone();
    assemble_target(batch, &q, gamma)
}

/// Per-agent variant of [`sarsa_target`] for the `dec` decomposition.
pub fn sarsa_target_dec(
    stack: &CriticStack,
    batch: &Batch,
    gamma: Real,
) -> Result<Vec<Array<Real>>> {
    require_next_actions(batch)?;
    let next_state = Var::constant(batch.next_state.clone());
    let next_obs: Vec<Var<Real>> =
        batch.next_obs.iter().map(|o| Var::constant(o.clone())).collect();
    let next_act: Vec<Var<Real>> =
        batch.next_act_enc.iter().map(|a| Var::constant(a.clone())).collect();
    let qs = stack.min_ensemble_agent_qs(&next_inputs(&next_state, &next_obs, &next_act), true)?;
    qs.iter().map(|q| assemble_target(batch, &q.value_clone(), gamma)).collect()
}

/// `y = r + gamma * (1 - done) * V(s')` with the online value network
/// evaluated without gradient.
pub fn iql_q_target(vnet: &VNet, batch: &Batch, gamma: Real) -> Result<Array<Real>> {
    assemble_target(batch, &vnet.state_values(&batch.next_state)?, gamma)
}

/// Per-agent variant of [`iql_q_target`].
pub fn iql_q_target_dec(vnet: &VNet, batch: &Batch, gamma: Real) -> Result<Vec<Array<Real>>> {
    (0..batch.next_obs.len())
        .map(|a| assemble_target(batch, &vnet.agent_values(a, &batch.next_obs[a])?, gamma))
        .collect()
}

// ---------------------------------------------------------------------------
// Critic update
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct CriticMetrics {
    /// Plain (unnormalized) MSE of the min-ensemble value against the target.
    pub td_loss: Real,
    /// Batch mean of the unnormalized min-ensemble value.
    pub q_mean: Real,
    /// Batch mean absolute unnormalized min-ensemble value.
    pub q_abs_mean: Real,
    pub v_loss: Option<Real>,
    pub grad_norm: Real,
    /// Normalization scale used this step (1 when SVN is off).
    pub sigma_q: Real,
}

fn plain_mse(q: &Array<Real>, y: &Array<Real>) -> Real {
    let n = q.numel() as Real;
    q.as_slice().iter().zip(y.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<Real>() / n
}

fn sum_vars(vars: Vec<Var<Real>>) -> Var<Real> {
    let mut it = vars.into_iter();
    let mut total = it.next().expect("at least one term");
    for v in it {
        total = total.add(&v);
    }
    total
}

/// One optimizer step on the critic ensemble (and the value network when one
/// is in play). The target networks are Polyak-updated afterwards.
///
/// The optimizer must own the critic parameters (plus the value network's, if
/// any); actors are only read, to sample TD next actions.
pub fn critic_update(
    stack: &CriticStack,
    vnet: Option<&VNet>,
    batch: &Batch,
    policies: &PolicySet,
    config: &ValueLearnConfig,
    optimizer: &mut Adam<Real>,
    rng: &mut impl Rng,
) -> Result<CriticMetrics> {
    config.validate()?;
    let state = Var::constant(batch.state.clone());
    let obs: Vec<Var<Real>> = batch.obs.iter().map(|o| Var::constant(o.clone())).collect();
    let act: Vec<Var<Real>> = batch.act_enc.iter().map(|a| Var::constant(a.clone())).collect();
    let inputs = QInputs { state: &state, obs: &obs, act: &act };

    let (loss, v_loss, min_values, target_flat, stats) = match stack.decomp() {
        Decomp::Dec => {
            let members: Vec<Vec<Var<Real>>> = (0..ENSEMBLE)
                .map(|m| stack.agent_qs(m, &inputs, false))
                .collect::<Result<_>>()?;
            let mins: Vec<Var<Real>> = (0..stack.dims().num_agents)
                .map(|a| members[0][a].min_elem(&members[1][a]))
                .collect();
            let pooled = Array::new(
                vec![mins.len() * batch.size, 1],
                mins.iter().flat_map(|q| q.value().as_slice().to_vec()).collect(),
            );
            let stats = if config.svn {
                svn_stats(&pooled, config.svn_epsilon)
            } else {
                NormStats::identity()
            };
            let targets: Vec<Array<Real>> = match config.method {
                ValueMethod::Td => td_target_dec(stack, batch, policies, config.gamma, rng)?,
                ValueMethod::Sarsa => sarsa_target_dec(stack, batch, config.gamma)?,
                ValueMethod::Iql => {
                    let vnet =
                        vnet.ok_or_else(|| Error::usage("iql needs a value network"))?;
                    iql_q_target_dec(vnet, batch, config.gamma)?
                }
            };
            let mut terms = Vec::new();
            for (a, y) in targets.iter().enumerate() {
                let y_var = Var::constant(y.clone());
                if config.listing1_strict {
                    terms.push(svn_td_loss(&mins[a], &y_var, &stats));
                } else {
                    for member in &members {
                        terms.push(svn_td_loss(&member[a], &y_var, &stats));
                    }
                }
            }
            let v_loss = match vnet {
                Some(vnet) => {
                    let mut v_terms = Vec::new();
                    for a in 0..stack.dims().num_agents {
                        let v = vnet.forward_agent(a, &obs[a])?;
                        let q_det = Var::constant(mins[a].value_clone());
                        v_terms.push(match config.method {
                            ValueMethod::Iql => {
                                expectile_loss(&q_det.sub(&v), config.iql_tau)
                            }
                            _ => v.sub(&q_det).square().mean(),
                        });
                    }
                    Some(sum_vars(v_terms))
                }
                None => None,
            };
            let flat_targets = Array::new(
                vec![targets.len() * batch.size, 1],
                targets.iter().flat_map(|t| t.as_slice().to_vec()).collect(),
            );
            (sum_vars(terms), v_loss, pooled, flat_targets, stats)
        }
        _ => {
            let members: Vec<Var<Real>> = (0..ENSEMBLE)
                .map(|m| stack.q_tot(m, &inputs, false))
                .collect::<Result<_>>()?;
            let q_min = members[0].min_elem(&members[1]);
            let min_values = q_min.value_clone();
            let stats = if config.svn {
                svn_stats(&min_values, config.svn_epsilon)
            } else {
                NormStats::identity()
            };
            let y = match config.method {
                ValueMethod::Td => td_target(stack, batch, policies, config.gamma, rng)?,
                ValueMethod::Sarsa => sarsa_target(stack, batch, config.gamma)?,
                ValueMethod::Iql => {
                    let vnet =
                        vnet.ok_or_else(|| Error::usage("iql needs a value network"))?;
                    iql_q_target(vnet, batch, config.gamma)?
                }
            };
            let y_var = Var::constant(y.clone());
            let loss = if config.listing1_strict {
                svn_td_loss(&q_min, &y_var, &stats)
            } else {
                sum_vars(members.iter().map(|q| svn_td_loss(q, &y_var, &stats)).collect())
            };
            let v_loss = match vnet {
                Some(vnet) => Some(v_regression_loss(
                    vnet, stack, batch, &inputs, &state, &obs, &q_min, config,
                )?),
                None => None,
            };
            (loss, v_loss, min_values, y, stats)
        }
    };

    let total = match &v_loss {
        Some(v) => loss.add(v),
        None => loss.clone(),
    };
    let total_value = total.value().as_slice()[0];
    if !total_value.is_finite() {
        return Err(Error::divergence(format!("critic loss became {total_value}")));
    }

    optimizer.zero_grad();
    total.backward()?;
    let grad_norm = crate::diffmath::global_grad_norm(optimizer.params());
    optimizer.step()?;
    stack.polyak(config.polyak_tau)?;

    let n = min_values.numel() as Real;
    Ok(CriticMetrics {
        td_loss: plain_mse(&min_values, &target_flat),
        q_mean: min_values.as_slice().iter().sum::<Real>() / n,
        q_abs_mean: min_values.as_slice().iter().map(|v| v.abs()).sum::<Real>() / n,
        v_loss: v_loss.map(|v| v.value().as_slice()[0]),
        grad_norm,
        sigma_q: stats.sigma_q,
    })
}

/// Value-network regression for the joint decompositions. IQL trains the
/// expectile; TD/SARSA keep a mean-regression baseline for AWR. A per-agent
/// value network trains against the per-agent utilities instead.
#[allow(clippy::too_many_arguments)]
fn v_regression_loss(
    vnet: &VNet,
    stack: &CriticStack,
    batch: &Batch,
    inputs: &QInputs,
    state: &Var<Real>,
    obs: &[Var<Real>],
    q_min: &Var<Real>,
    config: &ValueLearnConfig,
) -> Result<Var<Real>> {
    match vnet.scope() {
        VScope::Global => {
            let v = vnet.forward_state(state)?;
            let q_det = Var::constant(q_min.value_clone());
            Ok(match config.method {
                ValueMethod::Iql => expectile_loss(&q_det.sub(&v), config.iql_tau),
                _ => v.sub(&q_det).square().mean(),
            })
        }
        VScope::PerAgent => {
            let qs = stack.min_ensemble_agent_qs(inputs, false)?;
            let mut terms = Vec::new();
            for (a, qa) in qs.iter().enumerate() {
                let v = vnet.forward_agent(a, &obs[a])?;
                let q_det = Var::constant(qa.value_clone());
                terms.push(match config.method {
                    ValueMethod::Iql => expectile_loss(&q_det.sub(&v), config.iql_tau),
                    _ => v.sub(&q_det).square().mean(),
                });
            }
            let _ = batch;
            Ok(sum_vars(terms))
        }
    }
}
