//! Feed-forward networks over graph nodes.
//!
//! A [`Mlp`] is a stack of linear layers with ReLU (default) or ELU
//! activations. Layer normalization, when enabled, is applied to every hidden
//! pre-activation with a learned affine on top; it is used by critics only.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use super::array::Array;
use super::graph::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stabilizer inside the layer-norm variance square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Elu,
}

pub struct Linear<F: Scalar> {
    /// `[fan_in, fan_out]`
    pub weight: Var<F>,
    /// `[fan_out]`
    pub bias: Var<F>,
}

pub struct LayerNormAffine<F: Scalar> {
    pub gain: Var<F>,
    pub bias: Var<F>,
}

pub struct Mlp<F: Scalar> {
    layer_sizes: Vec<usize>,
    layers: Vec<Linear<F>>,
    norms: Option<Vec<LayerNormAffine<F>>>,
    activation: Activation,
}

/// Row-wise normalization to zero mean and unit variance (population
/// variance), before any learned affine.
pub fn layer_norm<F: Scalar>(x: &Var<F>) -> Var<F> {
    let centered = x.sub(&x.row_mean());
    let var = centered.square().row_mean();
    let denom = var.add_const(F::from_f64_lit(LAYER_NORM_EPS)).sqrt();
    centered.div(&denom)
}

fn init_uniform<F: Scalar>(shape: Vec<usize>, bound: f64, rng: &mut impl Rng) -> Array<F> {
    let dist = Uniform::new_inclusive(-bound, bound);
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::from_f64_lit(dist.sample(rng))).collect();
    Array::new(shape, data)
}

impl<F: Scalar> Mlp<F> {
    /// `sizes` lists every layer width including input and output.
    pub fn new(
        sizes: &[usize],
        activation: Activation,
        use_layer_norm: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config(format!(
                "mlp needs at least input and output sizes, got {sizes:?}"
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::config(format!("mlp layer sizes must be positive: {sizes:?}")));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            layers.push(Linear {
                weight: Var::leaf(init_uniform(vec![w[0], w[1]], bound, rng), true),
                bias: Var::leaf(init_uniform(vec![w[1]], bound, rng), true),
            });
        }
        let norms = if use_layer_norm {
            let hidden = &sizes[1..sizes.len() - 1];
            Some(
                hidden
                    .iter()
                    .map(|&d| LayerNormAffine {
                        gain: Var::leaf(Array::full(vec![d], F::one()), true),
                        bias: Var::leaf(Array::zeros(vec![d]), true),
                    })
                    .collect(),
            )
        } else {
            None
        };
        Ok(Mlp { layer_sizes: sizes.to_vec(), layers, norms, activation })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn uses_layer_norm(&self) -> bool {
        self.norms.is_some()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Graph forward; records intermediates for backward.
    pub fn forward(&self, input: &Var<F>) -> Result<Var<F>> {
        let in_dim = *input.shape().last().unwrap();
        if in_dim != self.input_dim() {
            return Err(Error::config(format!(
                "mlp expects input dim {}, got {in_dim}",
                self.input_dim()
            )));
        }
        let mut x = input.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = x.matmul(&layer.weight).add(&layer.bias);
            if i < last {
                if let Some(norms) = &self.norms {
                    let ln = &norms[i];
                    z = layer_norm(&z).mul(&ln.gain).add(&ln.bias);
                }
                z = match self.activation {
                    Activation::Relu => z.relu(),
                    Activation::Elu => z.elu(),
                };
            }
            x = z;
        }
        Ok(x)
    }

    /// Value-only forward on plain arrays (rollouts, target bootstrapping when
    /// a graph is unnecessary). Kept in lockstep with `forward` by tests.
    pub fn forward_values(&self, input: &Array<F>) -> Array<F> {
        let mut x = input.clone();
        let last = self.layers.len() - 1;
        let eps = F::from_f64_lit(LAYER_NORM_EPS);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = x.matmul(&layer.weight.value());
            let bias = layer.bias.value();
            let (rows, cols) = z.dims2();
            for r in 0..rows {
                for c in 0..cols {
                    let v = z.get2(r, c) + bias.as_slice()[c];
                    z.set2(r, c, v);
                }
            }
            if i < last {
                if let Some(norms) = &self.norms {
                    let gain = norms[i].gain.value();
                    let bias = norms[i].bias.value();
                    for r in 0..rows {
                        let mean = z.row(r).iter().copied().sum::<F>()
                            / F::from_f64_lit(cols as f64);
                        let var = z
                            .row(r)
                            .iter()
                            .map(|&v| (v - mean) * (v - mean))
                            .sum::<F>()
                            / F::from_f64_lit(cols as f64);
                        let denom = (var + eps).sqrt();
                        for c in 0..cols {
                            let norm = (z.get2(r, c) - mean) / denom;
                            z.set2(r, c, norm * gain.as_slice()[c] + bias.as_slice()[c]);
                        }
                    }
                }
                for v in z.as_mut_slice() {
                    *v = match self.activation {
                        Activation::Relu => {
                            if *v > F::zero() {
                                *v
                            } else {
                                F::zero()
                            }
                        }
                        Activation::Elu => {
                            if *v > F::zero() {
                                *v
                            } else {
                                v.exp() - F::one()
                            }
                        }
                    };
                }
            }
            x = z;
        }
        x
    }

    pub fn params(&self) -> Vec<Var<F>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(layer.weight.clone());
            out.push(layer.bias.clone());
        }
        if let Some(norms) = &self.norms {
            for ln in norms {
                out.push(ln.gain.clone());
                out.push(ln.bias.clone());
            }
        }
        out
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Var<F>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.w{i}"), layer.weight.clone()));
            out.push((format!("{prefix}.b{i}"), layer.bias.clone()));
        }
        if let Some(norms) = &self.norms {
            for (i, ln) in norms.iter().enumerate() {
                out.push((format!("{prefix}.ln{i}.gain"), ln.gain.clone()));
                out.push((format!("{prefix}.ln{i}.bias"), ln.bias.clone()));
            }
        }
        out
    }

    /// Frozen deep copy for use as a target network.
    /// Zero every parameter and write `values` into the final bias, making
    /// the network output exactly `values` for any input. Handy for
    /// constructing degenerate critics (constant utilities, identity mixers).
    pub fn set_constant_output(&self, values: &[F]) -> Result<()> {
        if values.len() != self.output_dim() {
            return Err(Error::config(format!(
                "constant output needs {} values, got {}",
                self.output_dim(),
                values.len()
            )));
        }
        for p in self.params() {
            p.update_value(|a| a.as_mut_slice().fill(F::zero()));
        }
        self.layers.last().unwrap().bias.update_value(|a| {
            a.as_mut_slice().copy_from_slice(values);
        });
        Ok(())
    }

    pub fn clone_frozen(&self) -> Mlp<F> {
        Mlp {
            layer_sizes: self.layer_sizes.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: Var::leaf(l.weight.value_clone(), false),
                    bias: Var::leaf(l.bias.value_clone(), false),
                })
                .collect(),
            norms: self.norms.as_ref().map(|ns| {
                ns.iter()
                    .map(|ln| LayerNormAffine {
                        gain: Var::leaf(ln.gain.value_clone(), false),
                        bias: Var::leaf(ln.bias.value_clone(), false),
                    })
                    .collect()
            }),
            activation: self.activation,
        }
    }
}
