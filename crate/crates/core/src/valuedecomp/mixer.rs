//! Monotonic mixing network. A hypernetwork conditioned on the global state
//! generates the weights of a two-layer mixer over per-agent utilities;
//! taking the absolute value of every generated weight makes the mixture
//! monotone in each utility, so argmax decentralization stays consistent
//! with the joint value.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::diffmath::graph::Var;
use crate::diffmath::mlp::{Activation, Linear, Mlp};
use crate::diffmath::Array;
use crate::error::Result;
use crate::Real;

pub struct MixerNet {
    num_agents: usize,
    embed: usize,
    /// state -> first mixing layer weights `[A*E]`, through a hidden layer.
    hyper_w1: Mlp<Real>,
    /// state -> first mixing layer bias `[E]` (plain linear head).
    hyper_b1: Linear<Real>,
    /// state -> second mixing layer weights `[E]`.
    hyper_w2: Mlp<Real>,
    /// state -> output bias `[1]`.
    hyper_b2: Mlp<Real>,
}

impl MixerNet {
    pub fn new(
        num_agents: usize,
        state_dim: usize,
        embed: usize,
        hyper_hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (state_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut init = |shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            let data: Vec<Real> = (0..n).map(|_| dist.sample(rng)).collect();
            Var::leaf(Array::new(shape, data), true)
        };
        let hyper_b1 = Linear { weight: init(vec![state_dim, embed]), bias: init(vec![embed]) };
        Ok(MixerNet {
            num_agents,
            embed,
            hyper_w1: Mlp::new(
                &[state_dim, hyper_hidden, num_agents * embed],
                Activation::Relu,
                false,
                rng,
            )?,
            hyper_b1,
            hyper_w2: Mlp::new(&[state_dim, hyper_hidden, embed], Activation::Relu, false, rng)?,
            hyper_b2: Mlp::new(&[state_dim, hyper_hidden, 1], Activation::Relu, false, rng)?,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    /// `utilities` is `[B, A]`, `state` is `[B, S]`; output `[B, 1]`.
    pub fn forward(&self, utilities: &Var<Real>, state: &Var<Real>) -> Result<Var<Real>> {
        let w1 = self.hyper_w1.forward(state)?.abs();
        let b1 = state.matmul(&self.hyper_b1.weight).add(&self.hyper_b1.bias);
        let hidden = utilities.rowwise_vecmat(&w1, self.embed).add(&b1).elu();
        let w2 = self.hyper_w2.forward(state)?.abs();
        let b2 = self.hyper_b2.forward(state)?;
        Ok(hidden.mul(&w2).row_sum().add(&b2))
    }

    pub fn params(&self) -> Vec<Var<Real>> {
        let mut p = self.hyper_w1.params();
        p.push(self.hyper_b1.weight.clone());
        p.push(self.hyper_b1.bias.clone());
        p.extend(self.hyper_w2.params());
        p.extend(self.hyper_b2.params());
        p
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Var<Real>)> {
        let mut p = self.hyper_w1.named_params(&format!("{prefix}.w1"));
        p.push((format!("{prefix}.b1.w"), self.hyper_b1.weight.clone()));
        p.push((format!("{prefix}.b1.b"), self.hyper_b1.bias.clone()));
        p.extend(self.hyper_w2.named_params(&format!("{prefix}.w2")));
        p.extend(self.hyper_b2.named_params(&format!("{prefix}.b2")));
        p
    }

    pub fn clone_frozen(&self) -> MixerNet {
        MixerNet {
            num_agents: self.num_agents,
            embed: self.embed,
            hyper_w1: self.hyper_w1.clone_frozen(),
            hyper_b1: Linear {
                weight: Var::leaf(self.hyper_b1.weight.value_clone(), false),
                bias: Var::leaf(self.hyper_b1.bias.value_clone(), false),
            },
            hyper_w2: self.hyper_w2.clone_frozen(),
            hyper_b2: self.hyper_b2.clone_frozen(),
        }
    }

    /// Make the generated weights state-independent constants: `w1` flat
    /// `[A*E]` row-major, `b1` `[E]`, `w2` `[E]`, `b2` scalar. With
    /// `w1 = [I_A; 0]`, zero biases, and `w2 = [1…1 0…0]` the mixer reduces
    /// to plain summation on nonnegative utilities.
    pub fn force_constant(&self, w1: &[Real], b1: &[Real], w2: &[Real], b2: Real) -> Result<()> {
        self.hyper_w1.set_constant_output(w1)?;
        self.hyper_b1.weight.update_value(|a| a.as_mut_slice().fill(0.0));
        self.hyper_b1.bias.update_value(|a| a.as_mut_slice().copy_from_slice(b1));
        self.hyper_w2.set_constant_output(w2)?;
        self.hyper_b2.set_constant_output(&[b2])
    }

    /// The identity configuration from [`MixerNet::force_constant`]'s doc.
    pub fn force_identity(&self) -> Result<()> {
        let a = self.num_agents;
        let e = self.embed;
        let mut w1 = vec![0.0; a * e];
        for i in 0..a {
            w1[i * e + i] = 1.0;
        }
        let mut w2 = vec![0.0; e];
        w2[..a].fill(1.0);
        self.force_constant(&w1, &vec![0.0; e], &w2, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_mixer_sums_nonnegative_utilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mixer = MixerNet::new(2, 3, 8, 16, &mut rng).unwrap();
        mixer.force_identity().unwrap();
        let q = Var::constant(Array::new(vec![2, 2], vec![2.0, 3.0, 0.5, 1.5]));
        let s = Var::constant(Array::new(vec![2, 3], vec![0.1, -0.4, 2.0, 1.0, 1.0, 1.0]));
        let out = mixer.forward(&q, &s).unwrap();
        assert!((out.value().as_slice()[0] - 5.0).abs() < 1e-12);
        assert!((out.value().as_slice()[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn output_is_scalar_per_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mixer = MixerNet::new(3, 4, 32, 128, &mut rng).unwrap();
        let q = Var::constant(Array::new(vec![5, 3], vec![0.3; 15]));
        let s = Var::constant(Array::new(vec![5, 4], vec![0.7; 20]));
        assert_eq!(mixer.forward(&q, &s).unwrap().shape(), vec![5, 1]);
    }

    #[test]
    fn monotone_in_every_utility() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mixer = MixerNet::new(3, 4, 16, 32, &mut rng).unwrap();
        for probe in 0..100 {
            let mut draw = ChaCha8Rng::seed_from_u64(probe);
            let q: Vec<Real> = (0..3).map(|_| draw.gen_range(-3.0..3.0)).collect();
            let s: Vec<Real> = (0..4).map(|_| draw.gen_range(-1.0..1.0)).collect();
            let sv = Var::constant(Array::new(vec![1, 4], s));
            let base = mixer
                .forward(&Var::constant(Array::new(vec![1, 3], q.clone())), &sv)
                .unwrap()
                .value()
                .as_slice()[0];
            for a in 0..3 {
                let mut bumped = q.clone();
                bumped[a] += 1e-3;
                let up = mixer
                    .forward(&Var::constant(Array::new(vec![1, 3], bumped)), &sv)
                    .unwrap()
                    .value()
                    .as_slice()[0];
                assert!(up - base >= -1e-6, "probe {probe} agent {a}: {base} -> {up}");
            }
        }
    }
}
