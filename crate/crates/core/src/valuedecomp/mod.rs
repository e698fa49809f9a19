//! Value decomposition: how per-agent utilities become a joint action value.
//!
//! Four strategies share one critic container. `dec` keeps fully independent
//! per-agent critics (no joint value exists), `vdn` sums utilities, `mix`
//! feeds them through a state-conditioned monotonic [`MixerNet`], and `cen`
//! skips utilities entirely in favour of one network over the global state
//! and all actions. Every variant carries an ensemble of two members plus
//! frozen target copies of everything.

pub mod mixer;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::graph::{concat_cols_vars, Var};
use crate::diffmath::mlp::{Activation, Mlp};
use crate::diffmath::{polyak_update, Array};
use crate::envsim::EnvSpec;
use crate::error::{Error, Result};
use crate::Real;

pub use mixer::MixerNet;

pub const ENSEMBLE: usize = 2;
pub const DEFAULT_MIXER_EMBED: usize = 32;
pub const DEFAULT_MIXER_HYPER_HIDDEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decomp {
    Dec,
    Vdn,
    Mix,
    Cen,
}

impl FromStr for Decomp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dec" => Ok(Decomp::Dec),
            "vdn" => Ok(Decomp::Vdn),
            "mix" => Ok(Decomp::Mix),
            "cen" => Ok(Decomp::Cen),
            other => Err(Error::config(format!(
                "unknown decomposition '{other}' (known: dec, vdn, mix, cen)"
            ))),
        }
    }
}

impl fmt::Display for Decomp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decomp::Dec => "dec",
            Decomp::Vdn => "vdn",
            Decomp::Mix => "mix",
            Decomp::Cen => "cen",
        })
    }
}

/// Input dimensions the critic needs from an environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CriticDims {
    pub num_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    /// Per-agent action width as fed to networks (one-hot or raw).
    pub act_width: usize,
}

impl CriticDims {
    pub fn from_spec(spec: &EnvSpec) -> Self {
        CriticDims {
            num_agents: spec.num_agents,
            obs_dim: spec.obs_dim,
            state_dim: spec.state_dim,
            act_width: spec.action_space.encoded_width(),
        }
    }
}

/// Borrowed batch inputs for critic evaluation: global state `[B, S]`,
/// per-agent observations `[B, O]`, per-agent encoded actions `[B, W]`.
/// Actions are graph nodes so actor gradients can flow through them.
pub struct QInputs<'a> {
    pub state: &'a Var<Real>,
    pub obs: &'a [Var<Real>],
    pub act: &'a [Var<Real>],
}

pub struct CriticStack {
    decomp: Decomp,
    dims: CriticDims,
    /// `[member][agent]` utility networks; empty for `cen`.
    utilities: Vec<Vec<Mlp<Real>>>,
    /// One mixer per ensemble member; only for `mix`.
    mixers: Vec<MixerNet>,
    /// One joint network per member; only for `cen`.
    joints: Vec<Mlp<Real>>,
    t_utilities: Vec<Vec<Mlp<Real>>>,
    t_mixers: Vec<MixerNet>,
    t_joints: Vec<Mlp<Real>>,
}

impl CriticStack {
    pub fn new(
        decomp: Decomp,
        dims: CriticDims,
        hidden: &[usize],
        mixer_embed: usize,
        mixer_hyper_hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let util_sizes: Vec<usize> = std::iter::once(dims.obs_dim + dims.act_width)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let joint_sizes: Vec<usize> =
            std::iter::once(dims.state_dim + dims.num_agents * dims.act_width)
                .chain(hidden.iter().copied())
                .chain(std::iter::once(1))
                .collect();

        let mut utilities = Vec::new();
        let mut mixers = Vec::new();
        let mut joints = Vec::new();
        for _ in 0..ENSEMBLE {
            match decomp {
                Decomp::Cen => {
                    joints.push(Mlp::new(&joint_sizes, Activation::Relu, true, rng)?);
                }
                _ => {
                    let member: Result<Vec<_>> = (0..dims.num_agents)
                        .map(|_| Mlp::new(&util_sizes, Activation::Relu, true, rng))
                        .collect();
                    utilities.push(member?);
                    if decomp == Decomp::Mix {
                        mixers.push(MixerNet::new(
                            dims.num_agents,
                            dims.state_dim,
                            mixer_embed,
                            mixer_hyper_hidden,
                            rng,
                        )?);
                    }
                }
            }
        }

        let mut stack = CriticStack {
            decomp,
            dims,
            utilities,
            mixers,
            joints,
            t_utilities: Vec::new(),
            t_mixers: Vec::new(),
            t_joints: Vec::new(),
        };
        stack.rebuild_targets();
        Ok(stack)
    }

    pub fn decomp(&self) -> Decomp {
        self.decomp
    }

    pub fn dims(&self) -> CriticDims {
        self.dims
    }

    /// Hard-copy online parameters into fresh frozen target networks.
    pub fn rebuild_targets(&mut self) {
        self.t_utilities = self
            .utilities
            .iter()
            .map(|member| member.iter().map(Mlp::clone_frozen).collect())
            .collect();
        self.t_mixers = self.mixers.iter().map(MixerNet::clone_frozen).collect();
        self.t_joints = self.joints.iter().map(Mlp::clone_frozen).collect();
    }

    fn check_inputs(&self, inputs: &QInputs) -> Result<()> {
        if inputs.obs.len() != self.dims.num_agents || inputs.act.len() != self.dims.num_agents {
            return Err(Error::usage(format!(
                "critic inputs carry {} obs / {} act vectors, expected {} each",
                inputs.obs.len(),
                inputs.act.len(),
                self.dims.num_agents
            )));
        }
        Ok(())
    }

    /// Per-agent utilities `Q^a(o^a, u^a)`, each `[B, 1]`.
    pub fn agent_qs(&self, member: usize, inputs: &QInputs, target: bool) -> Result<Vec<Var<Real>>> {
        self.check_inputs(inputs)?;
        if self.decomp == Decomp::Cen {
            return Err(Error::usage("cen has no per-agent utilities"));
        }
        let nets = if target { &self.t_utilities[member] } else { &self.utilities[member] };
        nets.iter()
            .enumerate()
            .map(|(a, net)| {
                net.forward(&concat_cols_vars(&[inputs.obs[a].clone(), inputs.act[a].clone()]))
            })
            .collect()
    }

    /// Joint value `[B, 1]` for one ensemble member. `dec` has no joint
    /// value, which is a usage error by construction.
    pub fn q_tot(&self, member: usize, inputs: &QInputs, target: bool) -> Result<Var<Real>> {
        self.check_inputs(inputs)?;
        match self.decomp {
            Decomp::Dec => Err(Error::usage(
                "dec trains independent per-agent critics; a joint scalar is undefined",
            )),
            Decomp::Vdn => {
                let qs = self.agent_qs(member, inputs, target)?;
                let mut total = qs[0].clone();
                for q in &qs[1..] {
                    total = total.add(q);
                }
                Ok(total)
            }
            Decomp::Mix => {
                let qs = self.agent_qs(member, inputs, target)?;
                let stacked = concat_cols_vars(&qs);
                let mixer = if target { &self.t_mixers[member] } else { &self.mixers[member] };
                mixer.forward(&stacked, inputs.state)
            }
            Decomp::Cen => {
                let mut parts = vec![inputs.state.clone()];
                parts.extend(inputs.act.iter().cloned());
                let net = if target { &self.t_joints[member] } else { &self.joints[member] };
                net.forward(&concat_cols_vars(&parts))
            }
        }
    }

    /// Elementwise minimum of the two ensemble joint values.
    pub fn min_ensemble_q_tot(&self, inputs: &QInputs, target: bool) -> Result<Var<Real>> {
        let q0 = self.q_tot(0, inputs, target)?;
        let q1 = self.q_tot(1, inputs, target)?;
        Ok(q0.min_elem(&q1))
    }

    /// Per-agent minimum across members (the `dec` analogue of the above).
    pub fn min_ensemble_agent_qs(&self, inputs: &QInputs, target: bool) -> Result<Vec<Var<Real>>> {
        let m0 = self.agent_qs(0, inputs, target)?;
        let m1 = self.agent_qs(1, inputs, target)?;
        Ok(m0.iter().zip(&m1).map(|(a, b)| a.min_elem(b)).collect())
    }

    /// Exact mixer partials `∂f_mix/∂Q^a` at one (state, utilities) point.
    pub fn mixer_jacobian(
        &self,
        member: usize,
        state: &[Real],
        utilities: &[Real],
    ) -> Result<Vec<Real>> {
        if self.decomp != Decomp::Mix {
            return Err(Error::usage(format!(
                "mixer jacobian requested on a {} stack",
                self.decomp
            )));
        }
        if utilities.len() != self.dims.num_agents || state.len() != self.dims.state_dim {
            return Err(Error::usage("mixer jacobian input lengths do not match the stack"));
        }
        let q = Var::leaf(Array::new(vec![1, utilities.len()], utilities.to_vec()), true);
        let s = Var::constant(Array::new(vec![1, state.len()], state.to_vec()));
        let out = self.mixers[member].forward(&q, &s)?;
        out.sum().backward()?;
        let grad = q.try_grad().expect("utility leaf requires grad");
        Ok(grad.as_slice().to_vec())
    }

    pub fn mixer(&self, member: usize) -> Option<&MixerNet> {
        self.mixers.get(member)
    }

    pub fn utility(&self, member: usize, agent: usize) -> Option<&Mlp<Real>> {
        self.utilities.get(member).and_then(|m| m.get(agent))
    }

    pub fn joint(&self, member: usize) -> Option<&Mlp<Real>> {
        self.joints.get(member)
    }

    pub fn params(&self) -> Vec<Var<Real>> {
        let mut p = Vec::new();
        for member in &self.utilities {
            for net in member {
                p.extend(net.params());
            }
        }
        for m in &self.mixers {
            p.extend(m.params());
        }
        for j in &self.joints {
            p.extend(j.params());
        }
        p
    }

    pub fn target_params(&self) -> Vec<Var<Real>> {
        let mut p = Vec::new();
        for member in &self.t_utilities {
            for net in member {
                p.extend(net.params());
            }
        }
        for m in &self.t_mixers {
            p.extend(m.params());
        }
        for j in &self.t_joints {
            p.extend(j.params());
        }
        p
    }

    pub fn named_params(&self) -> Vec<(String, Var<Real>)> {
        let mut p = Vec::new();
        for (m, member) in self.utilities.iter().enumerate() {
            for (a, net) in member.iter().enumerate() {
                p.extend(net.named_params(&format!("critic{m}.agent{a}")));
            }
        }
        for (m, mixer) in self.mixers.iter().enumerate() {
            p.extend(mixer.named_params(&format!("critic{m}.mixer")));
        }
        for (m, j) in self.joints.iter().enumerate() {
            p.extend(j.named_params(&format!("critic{m}.joint")));
        }
        p
    }

    /// Soft target update `t <- (1-tau) t + tau * online`.
    pub fn polyak(&self, tau: Real) -> Result<()> {
        polyak_update(&self.target_params(), &self.params(), tau)
    }
}
