//! Dense row-major arrays and the plain math kernels the graph ops forward to.
//!
//! Shapes are kept deliberately small-dimensional: everything downstream is a
//! vector `[n]`, a matrix `[rows, cols]`, or a scalar `[1]`. Broadcasting is
//! limited to the cases the lab needs: per-row columns (`[B,1]` against
//! `[B,D]`), per-column rows (`[D]`/`[1,D]` against `[B,D]`), and scalars.

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Array<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Array<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "shape dims must be positive, got {shape:?}"
        );
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Array { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Array::new(shape, vec![F::zero(); n])
    }

    pub fn full(shape: Vec<usize>, v: F) -> Self {
        let n = shape.iter().product();
        Array::new(shape, vec![v; n])
    }

    pub fn scalar(v: F) -> Self {
        Array::new(vec![1], vec![v])
    }

    pub fn from_vec(data: Vec<F>) -> Self {
        Array::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    /// Interpret as a matrix, returning (rows, cols). Vectors count as one row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("dims2 on rank-{} array", self.shape.len()),
        }
    }

    pub fn get2(&self, r: usize, c: usize) -> F {
        let (_, cols) = self.dims2();
        self.data[r * cols + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: F) {
        let (_, cols) = self.dims2();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[F] {
        let (_, cols) = self.dims2();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(F, F) -> F) -> Self {
        assert_eq!(self.shape, other.shape, "zip shape mismatch");
        Array {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, c: F) -> Self {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> F {
        self.sum() / F::from_f64_lit(self.numel() as f64)
    }

    /// Euclidean norm over all elements.
    pub fn norm(&self) -> F {
        self.data
            .iter()
            .map(|&v| v * v)
            .sum::<F>()
            .sqrt()
    }

    /// `[rows, cols] -> [rows, 1]`, mean over each row.
    pub fn row_mean(&self) -> Self {
        let (rows, cols) = self.dims2();
        let inv = F::one() / F::from_f64_lit(cols as f64);
        let data = (0..rows).map(|r| self.row(r).iter().copied().sum::<F>() * inv).collect();
        Array::new(vec![rows, 1], data)
    }

    pub fn row_sum(&self) -> Self {
        let (rows, _) = self.dims2();
        let data = (0..rows).map(|r| self.row(r).iter().copied().sum::<F>()).collect();
        Array::new(vec![rows, 1], data)
    }

    /// `[rows, cols] -> [1, cols]`, summing down each column.
    pub fn col_sum(&self) -> Self {
        let (rows, cols) = self.dims2();
        let mut out = vec![F::zero(); cols];
        for r in 0..rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        Array::new(vec![1, cols], out)
    }

    pub fn transpose(&self) -> Self {
        let (rows, cols) = self.dims2();
        let mut out = vec![F::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = self.data[r * cols + c];
            }
        }
        Array::new(vec![cols, rows], out)
    }

    /// `self [m,k] * other [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Self) -> Self {
        let (m, k) = self.dims2();
        let (k2, n) = other.dims2();
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let arow = self.row(i);
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &a) in arow.iter().enumerate() {
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Array::new(vec![m, n], out)
    }

    /// `self [m,k] * other^T` where other is `[n,k]` -> `[m,n]`.
    pub fn matmul_nt(&self, other: &Self) -> Self {
        let (m, k) = self.dims2();
        let (n, k2) = other.dims2();
        assert_eq!(k, k2, "matmul_nt inner dims {k} vs {k2}");
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let arow = self.row(i);
            for j in 0..n {
                let brow = other.row(j);
                let mut acc = F::zero();
                for (&a, &b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                out[i * n + j] = acc;
            }
        }
        Array::new(vec![m, n], out)
    }

    /// `self^T * other` where self is `[k,m]`, other `[k,n]` -> `[m,n]`.
    pub fn matmul_tn(&self, other: &Self) -> Self {
        let (k, m) = self.dims2();
        let (k2, n) = other.dims2();
        assert_eq!(k, k2, "matmul_tn inner dims {k} vs {k2}");
        let mut out = vec![F::zero(); m * n];
        for p in 0..k {
            let arow = self.row(p);
            let brow = other.row(p);
            for (i, &a) in arow.iter().enumerate() {
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Array::new(vec![m, n], out)
    }
}

/// How `b` broadcasts against `a` in a binary op. `a` is always the full shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bcast {
    /// Same shape on both sides.
    Elementwise,
    /// `b` is `[B,1]`, expanded across columns of `a = [B,D]`.
    Col,
    /// `b` is `[D]`/`[1,D]`, expanded across rows of `a = [B,D]`.
    Row,
    /// `b` is a single element, expanded everywhere.
    Scalar,
}

/// Decide how `b` broadcasts onto the shape of `a`, if at all.
pub fn bcast_rule(a: &[usize], b: &[usize]) -> Option<Bcast> {
    if a == b {
        return Some(Bcast::Elementwise);
    }
    let bn: usize = b.iter().product();
    if bn == 1 {
        return Some(Bcast::Scalar);
    }
    if a.len() == 2 {
        let (rows, cols) = (a[0], a[1]);
        if b == [rows, 1] {
            return Some(Bcast::Col);
        }
        if b == [1, cols] || b == [cols] {
            return Some(Bcast::Row);
        }
    }
    None
}

/// Apply `f(a_i, b_j)` with `b` broadcast onto `a`'s shape per `rule`.
pub fn bcast_apply<F: Scalar>(
    a: &Array<F>,
    b: &Array<F>,
    rule: Bcast,
    f: impl Fn(F, F) -> F,
) -> Array<F> {
    match rule {
        Bcast::Elementwise => a.zip(b, f),
        Bcast::Scalar => {
            let s = b.as_slice()[0];
            a.map(|v| f(v, s))
        }
        Bcast::Col => {
            let (rows, cols) = a.dims2();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let bv = b.as_slice()[r];
                for &av in a.row(r) {
                    data.push(f(av, bv));
                }
            }
            Array::new(a.shape().to_vec(), data)
        }
        Bcast::Row => {
            let (rows, cols) = a.dims2();
            let bs = b.as_slice();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for (c, &av) in a.row(r).iter().enumerate() {
                    data.push(f(av, bs[c]));
                }
            }
            Array::new(a.shape().to_vec(), data)
        }
    }
}

/// Reduce a gradient of `a`'s full shape back down to the broadcast operand's
/// shape by summing over the expanded axes.
pub fn reduce_for_bcast<F: Scalar>(grad: &Array<F>, rule: Bcast, b_shape: &[usize]) -> Array<F> {
    match rule {
        Bcast::Elementwise => grad.clone(),
        Bcast::Scalar => Array::new(b_shape.to_vec(), vec![grad.sum()]),
        Bcast::Col => grad.row_sum(),
        Bcast::Row => {
            let summed = grad.col_sum();
            Array::new(b_shape.to_vec(), summed.into_vec())
        }
    }
}

/// Stack `[B,1]` (or `[B,Di]`) blocks side by side into `[B, sum(Di)]`.
pub fn concat_cols<F: Scalar>(parts: &[&Array<F>]) -> Array<F> {
    assert!(!parts.is_empty());
    let rows = parts[0].dims2().0;
    let total: usize = parts.iter().map(|p| p.dims2().1).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            assert_eq!(p.dims2().0, rows, "concat_cols row mismatch");
            data.extend_from_slice(p.row(r));
        }
    }
    Array::new(vec![rows, total], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Array::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Array::new(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.as_slice(), &[58.0, 64.0, 139.0, 154.0]);
        // transposed variants agree with explicit transpose + matmul
        assert_eq!(a.matmul_nt(&b.transpose()), c);
        assert_eq!(a.matmul_tn(&c), a.transpose().matmul(&c));
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(bcast_rule(&[4, 3], &[4, 3]), Some(Bcast::Elementwise));
        assert_eq!(bcast_rule(&[4, 3], &[4, 1]), Some(Bcast::Col));
        assert_eq!(bcast_rule(&[4, 3], &[3]), Some(Bcast::Row));
        assert_eq!(bcast_rule(&[4, 3], &[1, 3]), Some(Bcast::Row));
        assert_eq!(bcast_rule(&[4, 3], &[1]), Some(Bcast::Scalar));
        assert_eq!(bcast_rule(&[4, 3], &[3, 4]), None);
    }

    #[test]
    fn broadcast_reduce_roundtrip() {
        let a = Array::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Array::new(vec![2, 1], vec![10.0, 20.0]);
        let s = bcast_apply(&a, &b, Bcast::Col, |x, y| x + y);
        assert_eq!(s.as_slice(), &[11.0, 12.0, 13.0, 24.0, 25.0, 26.0]);
        let g = reduce_for_bcast(&Array::full(vec![2, 3], 1.0), Bcast::Col, &[2, 1]);
        assert_eq!(g.as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn concat_and_rows() {
        let a = Array::new(vec![2, 1], vec![1.0, 2.0]);
        let b = Array::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]);
        let c = concat_cols(&[&a, &b]);
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.as_slice(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        assert_eq!(c.row_mean().as_slice(), &[8.0 / 3.0, 13.0 / 3.0]);
    }
}
