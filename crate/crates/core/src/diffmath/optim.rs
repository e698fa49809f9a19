//! Adam optimizer and target-network utilities.

use super::array::Array;
use super::graph::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_ADAM_EPS: f64 = 1e-8;

/// Adam state owning the parameter handles it updates.
pub struct Adam<F: Scalar> {
    params: Vec<Var<F>>,
    first_moment: Vec<Array<F>>,
    second_moment: Vec<Array<F>>,
    step_count: u64,
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: Vec<Var<F>>, lr: F) -> Self {
        let first_moment = params.iter().map(|p| Array::zeros(p.shape())).collect();
        let second_moment = params.iter().map(|p| Array::zeros(p.shape())).collect();
        Adam {
            params,
            first_moment,
            second_moment,
            step_count: 0,
            lr,
            beta1: F::from_f64_lit(DEFAULT_BETA1),
            beta2: F::from_f64_lit(DEFAULT_BETA2),
            eps: F::from_f64_lit(DEFAULT_ADAM_EPS),
        }
    }

    pub fn params(&self) -> &[Var<F>] {
        &self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// One Adam update from the gradients currently accumulated on the
    /// parameters. A non-finite gradient aborts with a divergence diagnostic.
    pub fn step(&mut self) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        for (i, p) in self.params.iter().enumerate() {
            let g = p.grad();
            if !g.is_finite() {
                return Err(Error::divergence(format!(
                    "non-finite gradient in optimizer step {}",
                    self.step_count
                )));
            }
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            p.update_value(|val| {
                for j in 0..g.numel() {
                    let gj = g.as_slice()[j];
                    let mj = self.beta1 * m.as_slice()[j] + (F::one() - self.beta1) * gj;
                    let vj = self.beta2 * v.as_slice()[j] + (F::one() - self.beta2) * gj * gj;
                    m.as_mut_slice()[j] = mj;
                    v.as_mut_slice()[j] = vj;
                    let m_hat = mj / bc1;
                    let v_hat = vj / bc2;
                    val.as_mut_slice()[j] =
                        val.as_slice()[j] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            });
        }
        Ok(())
    }
}

/// Total Euclidean norm of the gradients on `params`.
pub fn global_grad_norm<F: Scalar>(params: &[Var<F>]) -> F {
    params
        .iter()
        .map(|p| {
            let g = p.grad();
            g.as_slice().iter().map(|&v| v * v).sum::<F>()
        })
        .sum::<F>()
        .sqrt()
}

/// `target <- (1 - tau) * target + tau * online`, elementwise.
pub fn polyak_update<F: Scalar>(target: &[Var<F>], online: &[Var<F>], tau: F) -> Result<()> {
    if tau < F::zero() || tau > F::one() {
        return Err(Error::config(format!("polyak tau must be in [0,1], got {tau}")));
    }
    if target.len() != online.len() {
        return Err(Error::config(format!(
            "polyak parameter count mismatch: {} vs {}",
            target.len(),
            online.len()
        )));
    }
    for (t, o) in target.iter().zip(online) {
        let ov = o.value();
        t.update_value(|tv| {
            assert_eq!(tv.shape(), ov.shape(), "polyak shape mismatch");
            for (tj, &oj) in tv.as_mut_slice().iter_mut().zip(ov.as_slice()) {
                *tj = (F::one() - tau) * *tj + tau * oj;
            }
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: Vec<f64>) -> Var<f64> {
        Var::leaf(Array::from_vec(v), true)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let p = param(vec![1.0, -2.0]);
        let mut opt = Adam::new(vec![p.clone()], 0.1);
        opt.step().unwrap(); // grad is all zeros
        assert_eq!(p.value().as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        // constant gradient g: bias-corrected m_hat/sqrt(v_hat) = sign(g)
        let p = param(vec![0.0, 0.0]);
        let loss = p.mul(&Var::constant(Array::from_vec(vec![3.0, -0.5]))).sum();
        loss.backward().unwrap();
        let mut opt = Adam::new(vec![p.clone()], 0.01);
        opt.step().unwrap();
        let v = p.value_clone();
        assert!((v.as_slice()[0] + 0.01).abs() < 1e-8);
        assert!((v.as_slice()[1] - 0.01).abs() < 1e-8);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn independent_parameters_update_independently() {
        let a = param(vec![1.0]);
        let b = param(vec![1.0]);
        // only `a` receives a gradient
        a.mul(&Var::constant(Array::from_vec(vec![2.0]))).sum().backward().unwrap();
        let mut opt = Adam::new(vec![a.clone(), b.clone()], 0.05);
        opt.step().unwrap();
        assert!(a.value().as_slice()[0] < 1.0);
        assert_eq!(b.value().as_slice()[0], 1.0);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let p = param(vec![1.0]);
        p.scale(f64::INFINITY).sum().backward().unwrap();
        let mut opt = Adam::new(vec![p], 0.1);
        assert!(matches!(opt.step(), Err(Error::Divergence(_))));
    }

    #[test]
    fn polyak_cases() {
        let t = param(vec![0.0, 0.0]);
        let o = param(vec![1.0, 1.0]);
        polyak_update(&[t.clone()], &[o.clone()], 0.005).unwrap();
        assert_eq!(t.value().as_slice(), &[0.005, 0.005]);

        let t2 = param(vec![3.0, -3.0]);
        polyak_update(&[t2.clone()], &[o.clone()], 0.0).unwrap();
        assert_eq!(t2.value().as_slice(), &[3.0, -3.0]);
        polyak_update(&[t2.clone()], &[o.clone()], 1.0).unwrap();
        assert_eq!(t2.value().as_slice(), &[1.0, 1.0]);

        assert!(matches!(
            polyak_update(&[t2], &[o], 1.5),
            Err(Error::Config(_))
        ));
    }
}
