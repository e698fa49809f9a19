//! Reverse-mode automatic differentiation over [`Array`].
//!
//! Define-by-run: every op allocates a fresh node holding its value, the
//! handles of its inputs, and a local backward rule. Calling [`Var::backward`]
//! on a scalar root walks the DAG once in reverse topological order and
//! accumulates `d root / d leaf` into every leaf created with
//! `requires_grad = true`.
//!
//! Nodes reachable only through inputs that do not need gradients are pruned
//! at construction (no parents, no backward rule), so forwarding through
//! frozen target networks costs value computation only.

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::array::{bcast_apply, bcast_rule, concat_cols, reduce_for_bcast, Array, Bcast};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Backward rule: given the node and the gradient of the loss w.r.t. its
/// value, produce one gradient contribution per parent (in parent order).
type BackwardFn<F> = Box<dyn Fn(&Node<F>, &Array<F>) -> Vec<Array<F>>>;

pub struct Node<F: Scalar> {
    id: u64,
    value: RefCell<Array<F>>,
    grad: RefCell<Option<Array<F>>>,
    requires_grad: bool,
    needs_grad: bool,
    parents: Vec<Var<F>>,
    backward: Option<BackwardFn<F>>,
}

/// Cheap cloneable handle to a graph node.
pub struct Var<F: Scalar>(Rc<Node<F>>);

impl<F: Scalar> Clone for Var<F> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<F: Scalar> Var<F> {
    /// A leaf node. Parameters use `requires_grad = true`; frozen copies
    /// (target networks) use `false` and prune everything built on them.
    pub fn leaf(value: Array<F>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value: RefCell::new(value),
            grad: RefCell::new(None),
            requires_grad,
            needs_grad: requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub fn constant(value: Array<F>) -> Self {
        Var::leaf(value, false)
    }

    pub fn scalar_const(v: F) -> Self {
        Var::constant(Array::scalar(v))
    }

    fn interior(value: Array<F>, parents: Vec<Var<F>>, backward: BackwardFn<F>) -> Self {
        let needs_grad = parents.iter().any(|p| p.0.needs_grad);
        if !needs_grad {
            return Var::constant(value);
        }
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value: RefCell::new(value),
            grad: RefCell::new(None),
            requires_grad: false,
            needs_grad,
            parents,
            backward: Some(backward),
        }))
    }

    pub fn value(&self) -> Ref<'_, Array<F>> {
        self.0.value.borrow()
    }

    pub fn value_clone(&self) -> Array<F> {
        self.0.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.borrow().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.0.value.borrow().numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Overwrite a leaf's value in place (optimizer updates, target copies).
    pub fn set_value(&self, value: Array<F>) {
        let mut v = self.0.value.borrow_mut();
        assert_eq!(v.shape(), value.shape(), "set_value shape mismatch");
        *v = value;
    }

    pub fn update_value(&self, f: impl FnOnce(&mut Array<F>)) {
        f(&mut self.0.value.borrow_mut());
    }

    /// Accumulated gradient; zeros if backward never reached this node.
    pub fn grad(&self) -> Array<F> {
        match &*self.0.grad.borrow() {
            Some(g) => g.clone(),
            None => Array::zeros(self.shape()),
        }
    }

    /// Accumulated gradient, or `None` if backward never reached this node.
    pub fn try_grad(&self) -> Option<Array<F>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    fn accumulate(&self, contrib: Array<F>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                assert_eq!(g.shape(), contrib.shape(), "gradient shape mismatch");
                for (gv, cv) in g.as_mut_slice().iter_mut().zip(contrib.as_slice()) {
                    *gv += *cv;
                }
            }
            None => *slot = Some(contrib),
        }
    }

    /// Reverse pass from a scalar root. Each reachable node is visited exactly
    /// once; gradients on shared subexpressions accumulate by summation.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::usage(format!(
                "backward requires a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.0.needs_grad {
            return Ok(()); // nothing upstream wants a gradient
        }
        let order = self.topo_order();
        self.accumulate(Array::scalar(F::one()));
        for var in order.iter().rev() {
            let node = &*var.0;
            let Some(bf) = node.backward.as_ref() else { continue };
            let grad = match &*node.grad.borrow() {
                Some(g) => g.clone(),
                None => continue, // no gradient flowed into this node
            };
            let contribs = bf(node, &grad);
            debug_assert_eq!(contribs.len(), node.parents.len());
            for (parent, contrib) in node.parents.iter().zip(contribs) {
                if parent.0.needs_grad {
                    parent.accumulate(contrib);
                }
            }
        }
        Ok(())
    }

    /// Post-order DFS over parent edges (iterative). Reversed, this yields a
    /// topological order in which every consumer precedes its inputs.
    fn topo_order(&self) -> Vec<Var<F>> {
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        // (node, next parent index to visit)
        let mut stack: Vec<(Var<F>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.0.id);
        while let Some((var, idx)) = stack.pop() {
            let parents = &var.0.parents;
            if idx < parents.len() {
                let next = parents[idx].clone();
                stack.push((var, idx + 1));
                if next.0.needs_grad && visited.insert(next.0.id) {
                    stack.push((next, 0));
                }
            } else {
                order.push(var);
            }
        }
        order
    }

    // ── value pass-through ──────────────────────────────────────────────

    /// Identity in value, zero gradient upstream.
    pub fn stop_gradient(&self) -> Var<F> {
        Var::constant(self.value_clone())
    }

    // ── elementwise binary ops (with limited broadcasting) ──────────────

    pub fn add(&self, other: &Var<F>) -> Var<F> {
        binary(self, other, |a, b| a + b, |_, _| F::one(), |_, _| F::one())
    }

    pub fn sub(&self, other: &Var<F>) -> Var<F> {
        binary(self, other, |a, b| a - b, |_, _| F::one(), |_, _| -F::one())
    }

    pub fn mul(&self, other: &Var<F>) -> Var<F> {
        binary(self, other, |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: &Var<F>) -> Var<F> {
        binary(self, other, |a, b| a / b, |_, b| F::one() / b, |a, b| -a / (b * b))
    }

    /// Elementwise minimum; on ties the gradient routes to `self`.
    pub fn min_elem(&self, other: &Var<F>) -> Var<F> {
        assert_eq!(self.shape(), other.shape(), "min_elem shape mismatch");
        let value = self.value().zip(&other.value(), |a, b| if a <= b { a } else { b });
        Var::interior(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|node, g| {
                let a = node.parents[0].value();
                let b = node.parents[1].value();
                let mut ga = g.clone();
                let mut gb = Array::zeros(g.shape().to_vec());
                for i in 0..g.numel() {
                    if a.as_slice()[i] > b.as_slice()[i] {
                        gb.as_mut_slice()[i] = ga.as_slice()[i];
                        ga.as_mut_slice()[i] = F::zero();
                    }
                }
                vec![ga, gb]
            }),
        )
    }

    // ── scalar-constant ops ─────────────────────────────────────────────

    pub fn scale(&self, c: F) -> Var<F> {
        unary(self, move |x| x * c, move |_, _| c)
    }

    pub fn add_const(&self, c: F) -> Var<F> {
        unary(self, move |x| x + c, |_, _| F::one())
    }

    pub fn neg(&self) -> Var<F> {
        self.scale(-F::one())
    }

    // ── elementwise unary ops ───────────────────────────────────────────

    pub fn relu(&self) -> Var<F> {
        unary(
            self,
            |x| if x > F::zero() { x } else { F::zero() },
            |x, _| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    pub fn elu(&self) -> Var<F> {
        unary(
            self,
            |x| if x > F::zero() { x } else { x.exp() - F::one() },
            |x, _| if x > F::zero() { F::one() } else { x.exp() },
        )
    }

    pub fn exp(&self) -> Var<F> {
        unary(self, |x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Var<F> {
        unary(self, |x| x.ln(), |x, _| F::one() / x)
    }

    pub fn abs(&self) -> Var<F> {
        unary(self, |x| x.abs(), |x, _| {
            if x > F::zero() {
                F::one()
            } else if x < F::zero() {
                -F::one()
            } else {
                F::zero()
            }
        })
    }

    pub fn square(&self) -> Var<F> {
        unary(self, |x| x * x, |x, _| F::from_f64_lit(2.0) * x)
    }

    pub fn sqrt(&self) -> Var<F> {
        unary(self, |x| x.sqrt(), |_, y| F::from_f64_lit(0.5) / y)
    }

    /// Hard clamp; unit gradient inside `[lo, hi]` (inclusive), zero outside.
    pub fn clamp(&self, lo: F, hi: F) -> Var<F> {
        unary(
            self,
            move |x| x.max(lo).min(hi),
            move |x, _| if x >= lo && x <= hi { F::one() } else { F::zero() },
        )
    }

    // ── linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&self, other: &Var<F>) -> Var<F> {
        let value = self.value().matmul(&other.value());
        Var::interior(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|node, g| {
                let a = node.parents[0].value();
                let b = node.parents[1].value();
                vec![g.matmul_nt(&b), a.matmul_tn(g)]
            }),
        )
    }

    /// Batched vector-matrix product: `self` is `[B, A]`, `weights` is
    /// `[B, A*E]` holding a per-row `[A, E]` matrix; output `[B, E]`.
    pub fn rowwise_vecmat(&self, weights: &Var<F>, e: usize) -> Var<F> {
        let q = self.value();
        let w = weights.value();
        let (rows, a_dim) = q.dims2();
        let (wrows, wcols) = w.dims2();
        assert_eq!(rows, wrows, "rowwise_vecmat batch mismatch");
        assert_eq!(wcols, a_dim * e, "rowwise_vecmat weight cols");
        let mut out = Array::zeros(vec![rows, e]);
        for b in 0..rows {
            for a in 0..a_dim {
                let qv = q.get2(b, a);
                for k in 0..e {
                    let v = out.get2(b, k) + qv * w.get2(b, a * e + k);
                    out.set2(b, k, v);
                }
            }
        }
        drop(q);
        drop(w);
        Var::interior(
            out,
            vec![self.clone(), weights.clone()],
            Box::new(move |node, g| {
                let q = node.parents[0].value();
                let w = node.parents[1].value();
                let (rows, a_dim) = q.dims2();
                let mut gq = Array::zeros(vec![rows, a_dim]);
                let mut gw = Array::zeros(vec![rows, a_dim * e]);
                for b in 0..rows {
                    for a in 0..a_dim {
                        let mut acc = F::zero();
                        for k in 0..e {
                            let gv = g.get2(b, k);
                            acc += gv * w.get2(b, a * e + k);
                            gw.set2(b, a * e + k, q.get2(b, a) * gv);
                        }
                        gq.set2(b, a, acc);
                    }
                }
                vec![gq, gw]
            }),
        )
    }

    // ── reductions ──────────────────────────────────────────────────────

    pub fn sum(&self) -> Var<F> {
        let value = Array::scalar(self.value().sum());
        Var::interior(
            value,
            vec![self.clone()],
            Box::new(|node, g| {
                let shape = node.parents[0].shape();
                vec![Array::full(shape, g.as_slice()[0])]
            }),
        )
    }

    pub fn mean(&self) -> Var<F> {
        let n = self.numel();
        self.sum().scale(F::one() / F::from_f64_lit(n as f64))
    }

    /// `[B, D] -> [B, 1]` row means.
    pub fn row_mean(&self) -> Var<F> {
        let value = self.value().row_mean();
        Var::interior(
            value,
            vec![self.clone()],
            Box::new(|node, g| {
                let parent = node.parents[0].value();
                let (_, cols) = parent.dims2();
                let inv = F::one() / F::from_f64_lit(cols as f64);
                vec![bcast_apply(&parent, &g.scale(inv), Bcast::Col, |_, gv| gv)]
            }),
        )
    }

    pub fn row_sum(&self) -> Var<F> {
        let value = self.value().row_sum();
        Var::interior(
            value,
            vec![self.clone()],
            Box::new(|node, g| {
                let parent = node.parents[0].value();
                vec![bcast_apply(&parent, g, Bcast::Col, |_, gv| gv)]
            }),
        )
    }

    // ── softmax family ──────────────────────────────────────────────────

    /// Row-wise log-softmax with max-subtraction for stability.
    pub fn log_softmax(&self) -> Var<F> {
        let x = self.value();
        let (rows, cols) = x.dims2();
        let mut out = Array::zeros(vec![rows, cols]);
        for r in 0..rows {
            let row = x.row(r);
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&v| (v - mx).exp()).sum::<F>().ln() + mx;
            for c in 0..cols {
                out.set2(r, c, row[c] - lse);
            }
        }
        drop(x);
        Var::interior(
            out,
            vec![self.clone()],
            Box::new(|node, g| {
                // dx = g - softmax(x) * rowsum(g)
                let y = node.value.borrow();
                let (rows, cols) = y.dims2();
                let mut gx = g.clone();
                for r in 0..rows {
                    let gsum: F = g.row(r).iter().copied().sum();
                    for c in 0..cols {
                        let soft = y.get2(r, c).exp();
                        gx.set2(r, c, g.get2(r, c) - soft * gsum);
                    }
                }
                vec![gx]
            }),
        )
    }

    pub fn softmax(&self) -> Var<F> {
        let x = self.value();
        let (rows, cols) = x.dims2();
        let mut out = Array::zeros(vec![rows, cols]);
        for r in 0..rows {
            let row = x.row(r);
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let denom: F = row.iter().map(|&v| (v - mx).exp()).sum();
            for c in 0..cols {
                out.set2(r, c, (row[c] - mx).exp() / denom);
            }
        }
        drop(x);
        Var::interior(
            out,
            vec![self.clone()],
            Box::new(|node, g| {
                // dx = y * (g - rowsum(g * y))
                let y = node.value.borrow();
                let (rows, cols) = y.dims2();
                let mut gx = Array::zeros(vec![rows, cols]);
                for r in 0..rows {
                    let mut dot = F::zero();
                    for c in 0..cols {
                        dot += g.get2(r, c) * y.get2(r, c);
                    }
                    for c in 0..cols {
                        gx.set2(r, c, y.get2(r, c) * (g.get2(r, c) - dot));
                    }
                }
                vec![gx]
            }),
        )
    }

    /// Pick one column per row: `[B, K] -> [B, 1]` with `out[b] = x[b, idx[b]]`.
    pub fn gather_col(&self, indices: &[usize]) -> Var<F> {
        let x = self.value();
        let (rows, cols) = x.dims2();
        assert_eq!(rows, indices.len(), "gather_col index count");
        let data: Vec<F> = indices
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                assert!(c < cols, "gather_col index {c} out of {cols}");
                x.get2(r, c)
            })
            .collect();
        drop(x);
        let idx: Vec<usize> = indices.to_vec();
        Var::interior(
            Array::new(vec![rows, 1], data),
            vec![self.clone()],
            Box::new(move |node, g| {
                let shape = node.parents[0].shape();
                let mut gx = Array::zeros(shape);
                for (r, &c) in idx.iter().enumerate() {
                    gx.set2(r, c, g.as_slice()[r]);
                }
                vec![gx]
            }),
        )
    }
}

/// Column-concatenate graph nodes: each `[B, Di]` into `[B, sum Di]`.
pub fn concat_cols_vars<F: Scalar>(parts: &[Var<F>]) -> Var<F> {
    assert!(!parts.is_empty());
    let values: Vec<Array<F>> = parts.iter().map(|p| p.value_clone()).collect();
    let refs: Vec<&Array<F>> = values.iter().collect();
    let value = concat_cols(&refs);
    let widths: Vec<usize> = values.iter().map(|v| v.dims2().1).collect();
    Var::interior(
        value,
        parts.to_vec(),
        Box::new(move |_node, g| {
            let (rows, _) = g.dims2();
            let mut out = Vec::with_capacity(widths.len());
            let mut offset = 0;
            for &w in &widths {
                let mut part = Array::zeros(vec![rows, w]);
                for r in 0..rows {
                    let src = &g.row(r)[offset..offset + w];
                    part.as_mut_slice()[r * w..(r + 1) * w].copy_from_slice(src);
                }
                offset += w;
                out.push(part);
            }
            out
        }),
    )
}

fn unary<F: Scalar>(
    input: &Var<F>,
    fv: impl Fn(F) -> F + 'static,
    // derivative as a function of (input value, output value)
    fd: impl Fn(F, F) -> F + 'static,
) -> Var<F> {
    let value = input.value().map(&fv);
    Var::interior(
        value,
        vec![input.clone()],
        Box::new(move |node, g| {
            let x = node.parents[0].value();
            let y = node.value.borrow();
            let mut gx = Array::zeros(x.shape().to_vec());
            for i in 0..gx.numel() {
                gx.as_mut_slice()[i] = g.as_slice()[i] * fd(x.as_slice()[i], y.as_slice()[i]);
            }
            vec![gx]
        }),
    )
}

fn binary<F: Scalar>(
    a: &Var<F>,
    b: &Var<F>,
    fv: fn(F, F) -> F,
    da: fn(F, F) -> F,
    db: fn(F, F) -> F,
) -> Var<F> {
    let ashape = a.shape();
    let bshape = b.shape();
    let (rule, swapped) = match bcast_rule(&ashape, &bshape) {
        Some(r) => (r, false),
        None => match bcast_rule(&bshape, &ashape) {
            Some(r) => (r, true),
            None => panic!("incompatible shapes {ashape:?} vs {bshape:?}"),
        },
    };
    let value = if !swapped {
        bcast_apply(&a.value(), &b.value(), rule, fv)
    } else {
        bcast_apply(&b.value(), &a.value(), rule, |x, y| fv(y, x))
    };
    Var::interior(
        value,
        vec![a.clone(), b.clone()],
        Box::new(move |node, g| {
            let av = node.parents[0].value();
            let bv = node.parents[1].value();
            // expand both operands to the output shape
            let (a_full, b_full) = if !swapped {
                let bf = bcast_apply(&av, &bv, rule, |_, y| y);
                (av.clone(), bf)
            } else {
                let af = bcast_apply(&bv, &av, rule, |_, y| y);
                (af, bv.clone())
            };
            let mut ga_full = Array::zeros(g.shape().to_vec());
            let mut gb_full = Array::zeros(g.shape().to_vec());
            for i in 0..g.numel() {
                let (x, y) = (a_full.as_slice()[i], b_full.as_slice()[i]);
                ga_full.as_mut_slice()[i] = g.as_slice()[i] * da(x, y);
                gb_full.as_mut_slice()[i] = g.as_slice()[i] * db(x, y);
            }
            let ga = if !swapped {
                ga_full
            } else {
                reduce_for_bcast(&ga_full, rule, av.shape())
            };
            let gb = if !swapped {
                reduce_for_bcast(&gb_full, rule, bv.shape())
            } else {
                gb_full
            };
            vec![ga, gb]
        }),
    )
}
