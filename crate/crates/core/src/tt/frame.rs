use ndarray::{Array1, Array2, Array3, Array4, Axis};
use ndarray_linalg::c64;

use super::{check_cap, reshape2, reshape3, TTOperator, TTVector, DENSE_CAP};
use crate::error::{Error, Result};

/// Cap on the projected dimension `r_{k-1} n_k r_k` of explicit local matrices.
pub const PROJECTED_CAP: usize = 4096;

/// Interfaces around mode `k`: left cores `0..k`, the free mode size, right cores `k+1..m`.
///
/// The frame matrix `X^{<k} ⊗ I ⊗ (X^{>k})^T` is only ever applied core by core.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameContext {
    left: Vec<Array3<f64>>,
    mode_size: usize,
    right: Vec<Array3<f64>>,
}

impl FrameContext {
    pub fn new(left: Vec<Array3<f64>>, mode_size: usize, right: Vec<Array3<f64>>) -> Result<Self> {
        let mut r = 1;
        for c in &left {
            if c.shape()[0] != r {
                return Err(Error::shape("left interface ranks do not chain"));
            }
            r = c.shape()[2];
        }
        let mut q = 1;
        for c in right.iter().rev() {
            if c.shape()[2] != q {
                return Err(Error::shape("right interface ranks do not chain"));
            }
            q = c.shape()[0];
        }
        Ok(FrameContext { left, mode_size, right })
    }

    pub fn index(&self) -> usize {
        self.left.len()
    }

    pub fn order(&self) -> usize {
        self.left.len() + 1 + self.right.len()
    }

    pub fn left_rank(&self) -> usize {
        self.left.last().map_or(1, |c| c.shape()[2])
    }

    pub fn right_rank(&self) -> usize {
        self.right.first().map_or(1, |c| c.shape()[0])
    }

    pub fn mode_size(&self) -> usize {
        self.mode_size
    }

    pub fn local_size(&self) -> usize {
        self.left_rank() * self.mode_size * self.right_rank()
    }

    pub fn left_cores(&self) -> &[Array3<f64>] {
        &self.left
    }

    pub fn right_cores(&self) -> &[Array3<f64>] {
        &self.right
    }

    /// `X_{≠k} y` as a train, with `y` in `(a, i, c)` order.
    pub fn embed(&self, y: &Array1<f64>) -> Result<TTVector> {
        if y.len() != self.local_size() {
            return Err(Error::shape(format!("local vector of length {} for size {}", y.len(), self.local_size())));
        }
        let mut cores = self.left.clone();
        cores.push(reshape3(y, (self.left_rank(), self.mode_size, self.right_rank())));
        cores.extend(self.right.iter().cloned());
        TTVector::new(cores)
    }

    /// Dense frame matrix of shape `N × (r_{k-1} n_k r_k)`.
    pub fn densify(&self) -> Result<Array2<f64>> {
        let full: u128 = self
            .left
            .iter()
            .chain(&self.right)
            .map(|c| c.shape()[1] as u128)
            .product::<u128>()
            * self.mode_size as u128;
        check_cap("dense frame matrix", full * self.local_size() as u128, DENSE_CAP)?;
        let left = interface_left(&self.left);
        let right = interface_right(&self.right);
        let eye = Array2::<f64>::eye(self.mode_size);
        let lk = crate::dense::kron(&left.view(), &eye.view());
        Ok(crate::dense::kron(&lk.view(), &right.t()))
    }
}

/// `X^{<k}` as a dense `(n_1⋯n_{k-1}) × r_{k-1}` matrix.
fn interface_left(cores: &[Array3<f64>]) -> Array2<f64> {
    let mut acc = Array2::from_elem((1, 1), 1.0);
    for c in cores {
        let (r0, n, r1) = c.dim();
        let rows = acc.nrows();
        acc = acc.dot(&reshape2(c, r0, n * r1)).into_shape_with_order((rows * n, r1)).unwrap();
    }
    acc
}

/// `X^{>k}` as a dense `r_k × (n_{k+1}⋯n_m)` matrix.
fn interface_right(cores: &[Array3<f64>]) -> Array2<f64> {
    let mut acc = Array2::from_elem((1, 1), 1.0);
    for c in cores.iter().rev() {
        let (r0, n, r1) = c.dim();
        let cols = acc.ncols();
        acc = reshape2(c, r0 * n, r1).dot(&acc).into_shape_with_order((r0, n * cols)).unwrap();
    }
    acc
}

/// Extends a left interface `L[a, α, a']` by one mode:
/// `L'[b, β, b'] = Σ bra[a, i, b] L[a, α, a'] A[α, i, j, β] ket[a', j, b']`.
pub fn extend_left(
    l: &Array3<f64>,
    bra: &Array3<f64>,
    op: &Array4<f64>,
    ket: &Array3<f64>,
) -> Array3<f64> {
    let (a, n, b) = bra.dim();
    let (alpha, _, _, beta) = op.dim();
    let (ap, _, bp) = ket.dim();
    // t1[α, a', i, b]
    let t1 = reshape2(&l.view().permuted_axes([1, 2, 0]), alpha * ap, a).dot(&reshape2(bra, a, n * b));
    let t1 = t1.into_shape_with_order((alpha, ap, n, b)).unwrap();
    // t2[a', b, j, β]
    let t1 = reshape2(&t1.permuted_axes([1, 3, 0, 2]), ap * b, alpha * n);
    let t2 = t1.dot(&reshape2(op, alpha * n, n * beta));
    let t2 = t2.into_shape_with_order((ap, b, n, beta)).unwrap();
    // t3[b, β, b']
    let t2 = reshape2(&t2.permuted_axes([1, 3, 0, 2]), b * beta, ap * n);
    let t3 = t2.dot(&reshape2(ket, ap * n, bp));
    reshape3(&t3, (b, beta, bp))
}

/// Extends a right interface `R[b, β, b']` by one mode:
/// `R'[a, α, a'] = Σ bra[a, i, b] A[α, i, j, β] ket[a', j, b'] R[b, β, b']`.
pub fn extend_right(
    r: &Array3<f64>,
    bra: &Array3<f64>,
    op: &Array4<f64>,
    ket: &Array3<f64>,
) -> Array3<f64> {
    let (a, n, b) = bra.dim();
    let (alpha, _, _, beta) = op.dim();
    let (ap, _, bp) = ket.dim();
    // t1[a, i, β, b']
    let t1 = reshape2(bra, a * n, b).dot(&reshape2(r, b, beta * bp));
    let t1 = t1.into_shape_with_order((a, n, beta, bp)).unwrap();
    // t2[a, b', α, j]
    let t1 = reshape2(&t1.permuted_axes([0, 3, 1, 2]), a * bp, n * beta);
    let opm = reshape2(&op.view().permuted_axes([1, 3, 0, 2]), n * beta, alpha * n);
    let t2 = t1.dot(&opm).into_shape_with_order((a, bp, alpha, n)).unwrap();
    // t3[a, α, a']
    let t2 = reshape2(&t2.permuted_axes([0, 2, 3, 1]), a * alpha, n * bp);
    let ketm = reshape2(&ket.view().permuted_axes([1, 2, 0]), n * bp, ap);
    reshape3(&t2.dot(&ketm), (a, alpha, ap))
}

/// `X_{≠k}^T A X_{≠k}` restricted to one mode: interfaces plus the operator core.
#[derive(Debug, Clone, Copy)]
pub struct LocalOperator<'a> {
    pub left: &'a Array3<f64>,
    pub core: &'a Array4<f64>,
    pub right: &'a Array3<f64>,
}

impl<'a> LocalOperator<'a> {
    pub fn new(left: &'a Array3<f64>, core: &'a Array4<f64>, right: &'a Array3<f64>) -> Self {
        LocalOperator { left, core, right }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.left.shape()[0], self.core.shape()[1], self.right.shape()[0])
    }

    pub fn size(&self) -> usize {
        let (p, n, q) = self.dims();
        p * n * q
    }

    /// Applies to each column of `y` (local vectors in `(a', j, c')` order).
    pub fn apply(&self, y: &Array2<f64>) -> Result<Array2<f64>> {
        let (p, n, q) = self.dims();
        let (alpha, _, _, beta) = self.core.dim();
        if y.nrows() != p * n * q {
            return Err(Error::shape(format!("local vectors of length {} for size {}", y.nrows(), p * n * q)));
        }
        let s = y.ncols();
        // t1[a, α, j, c', s] = Σ_{a'} L[a, α, a'] y[a', j, c', s]
        let t1 = reshape2(self.left, p * alpha, p).dot(&reshape2(y, p, n * q * s));
        let t1 = t1.into_shape_with_order((p, alpha, n, q, s)).unwrap();
        // t2[a, c', s, i, β] = Σ_{α, j} t1 A[α, i, j, β]
        let t1 = reshape2(&t1.permuted_axes([0, 3, 4, 1, 2]), p * q * s, alpha * n);
        let opm = reshape2(&self.core.view().permuted_axes([0, 2, 1, 3]), alpha * n, n * beta);
        let t2 = t1.dot(&opm).into_shape_with_order((p, q, s, n, beta)).unwrap();
        // out[a, i, s, c] = Σ_{c', β} t2 R[c, β, c']
        let t2 = reshape2(&t2.permuted_axes([0, 3, 2, 1, 4]), p * n * s, q * beta);
        let rm = reshape2(&self.right.view().permuted_axes([2, 1, 0]), q * beta, q);
        let out = t2.dot(&rm).into_shape_with_order((p, n, s, q)).unwrap();
        Ok(reshape2(&out.permuted_axes([0, 1, 3, 2]), p * n * q, s))
    }

    pub fn apply_vec(&self, y: &Array1<f64>) -> Result<Array1<f64>> {
        let col = y.view().insert_axis(Axis(1)).to_owned();
        Ok(self.apply(&col)?.column(0).to_owned())
    }

    /// Applies to a complex vector through its real and imaginary parts.
    pub fn apply_complex(&self, y: &Array1<c64>) -> Result<Array1<c64>> {
        let mut two = Array2::zeros((y.len(), 2));
        for (i, z) in y.iter().enumerate() {
            two[[i, 0]] = z.re;
            two[[i, 1]] = z.im;
        }
        let out = self.apply(&two)?;
        Ok(out.rows().into_iter().map(|r| c64::new(r[0], r[1])).collect())
    }

    /// Explicit `(r_{k-1} n_k r_k)²` matrix by direct contraction.
    pub fn matrix(&self) -> Result<Array2<f64>> {
        let (p, n, q) = self.dims();
        let size = p * n * q;
        if size > PROJECTED_CAP {
            return Err(Error::CapExceeded {
                what: "projected matrix".into(),
                requested: (size * size) as u128,
                cap: (PROJECTED_CAP * PROJECTED_CAP) as u128,
            });
        }
        let (alpha, _, _, beta) = self.core.dim();
        // T1[a, a', i, j, β] = Σ_α L[a, α, a'] A[α, i, j, β]
        let lm = reshape2(&self.left.view().permuted_axes([0, 2, 1]), p * p, alpha);
        let t1 = lm.dot(&reshape2(self.core, alpha, n * n * beta));
        // T2[a, a', i, j, c, c'] = Σ_β T1 R[c, β, c']
        let rm = reshape2(&self.right.view().permuted_axes([1, 0, 2]), beta, q * q);
        let t2 = reshape2(&t1, p * p * n * n, beta).dot(&rm);
        let t2 = t2.into_shape_with_order(ndarray::IxDyn(&[p, p, n, n, q, q])).unwrap();
        let t2 = t2.permuted_axes(ndarray::IxDyn(&[0, 2, 4, 1, 3, 5]));
        Ok(reshape2(&t2, size, size))
    }

    /// Explicit matrix assembled column by column from `apply`.
    pub fn matrix_by_columns(&self) -> Result<Array2<f64>> {
        let size = self.size();
        if size > PROJECTED_CAP {
            return Err(Error::CapExceeded {
                what: "projected matrix".into(),
                requested: (size * size) as u128,
                cap: (PROJECTED_CAP * PROJECTED_CAP) as u128,
            });
        }
        self.apply(&Array2::eye(size))
    }
}

/// Left and right interface caches of one operator against a block iterate.
///
/// `left[k]` contracts modes `0..k` and `right[k]` contracts modes `k+1..m`;
/// entries are `None` when stale.
#[derive(Debug, Clone)]
pub struct OperatorEnv {
    left: Vec<Option<Array3<f64>>>,
    right: Vec<Option<Array3<f64>>>,
}

impl OperatorEnv {
    /// Builds every interface valid for a frame at index `k` from `cores`
    /// (entry `k` is ignored).
    pub fn build(op: &TTOperator, cores: &[Array3<f64>], k: usize) -> Result<Self> {
        let m = op.order();
        if cores.len() != m || k >= m {
            return Err(Error::shape("operator and frame orders differ"));
        }
        let ones = Array3::from_elem((1, 1, 1), 1.0);
        let mut left = vec![None; m];
        let mut right = vec![None; m];
        left[0] = Some(ones.clone());
        right[m - 1] = Some(ones);
        for j in 0..k {
            let next = extend_left(left[j].as_ref().unwrap(), &cores[j], op.core(j), &cores[j]);
            left[j + 1] = Some(next);
        }
        for j in (k + 1..m).rev() {
            let next = extend_right(right[j].as_ref().unwrap(), &cores[j], op.core(j), &cores[j]);
            right[j - 1] = Some(next);
        }
        Ok(OperatorEnv { left, right })
    }

    /// Refreshes after the block moved from `from` to `to`; `core` is the new
    /// shared core at `from`.
    pub fn advance(&mut self, op: &TTOperator, core: &Array3<f64>, from: usize, to: usize) {
        if to == from + 1 {
            let l = self.left[from].as_ref().expect("left interface at block index");
            self.left[to] = Some(extend_left(l, core, op.core(from), core));
            self.right[from] = None;
        } else {
            assert_eq!(to + 1, from, "block moves one mode at a time");
            let r = self.right[from].as_ref().expect("right interface at block index");
            self.right[to] = Some(extend_right(r, core, op.core(from), core));
            self.left[from] = None;
        }
    }

    pub fn left(&self, k: usize) -> Option<&Array3<f64>> {
        self.left[k].as_ref()
    }

    pub fn right(&self, k: usize) -> Option<&Array3<f64>> {
        self.right[k].as_ref()
    }

    pub fn local<'a>(&'a self, op: &'a TTOperator, k: usize) -> Result<LocalOperator<'a>> {
        match (self.left[k].as_ref(), self.right[k].as_ref()) {
            (Some(l), Some(r)) => Ok(LocalOperator::new(l, op.core(k), r)),
            _ => Err(Error::invalid(format!("interfaces at mode {k} are stale"))),
        }
    }
}

fn interfaces_for(frame: &FrameContext, op: &TTOperator) -> Result<(Array3<f64>, Array3<f64>)> {
    if op.order() != frame.order() {
        return Err(Error::shape("operator and frame orders differ"));
    }
    let k = frame.index();
    if op.core(k).shape()[1] != frame.mode_size() {
        return Err(Error::shape("operator and frame mode sizes differ"));
    }
    let mut l = Array3::from_elem((1, 1, 1), 1.0);
    for (j, c) in frame.left_cores().iter().enumerate() {
        if op.core(j).shape()[1] != c.shape()[1] {
            return Err(Error::shape(format!("mode {j} size differs")));
        }
        l = extend_left(&l, c, op.core(j), c);
    }
    let mut r = Array3::from_elem((1, 1, 1), 1.0);
    for (off, c) in frame.right_cores().iter().enumerate().rev() {
        let j = k + 1 + off;
        if op.core(j).shape()[1] != c.shape()[1] {
            return Err(Error::shape(format!("mode {j} size differs")));
        }
        r = extend_right(&r, c, op.core(j), c);
    }
    Ok((l, r))
}

/// `X_{≠k}^T A X_{≠k} y` without forming the frame.
pub fn frame_apply(frame: &FrameContext, op: &TTOperator, y: &Array1<f64>) -> Result<Array1<f64>> {
    let (l, r) = interfaces_for(frame, op)?;
    LocalOperator::new(&l, op.core(frame.index()), &r).apply_vec(y)
}

/// Explicit `X_{≠k}^T A X_{≠k}`.
pub fn frame_project(frame: &FrameContext, op: &TTOperator) -> Result<Array2<f64>> {
    let (l, r) = interfaces_for(frame, op)?;
    LocalOperator::new(&l, op.core(frame.index()), &r).matrix()
}

/// `y^* A x` for rank-one complex trains given by their factors.
pub fn bilinear_rank_one(op: &TTOperator, y: &[Array1<c64>], x: &[Array1<c64>]) -> Result<c64> {
    let m = op.order();
    if y.len() != m || x.len() != m {
        return Err(Error::shape("rank-one factors do not match operator order"));
    }
    let mut acc = Array1::from_elem(1, c64::new(1.0, 0.0));
    for k in 0..m {
        let core = op.core(k);
        let (ra, n, _, rb) = core.dim();
        if y[k].len() != n || x[k].len() != n {
            return Err(Error::shape(format!("factor length in mode {k}")));
        }
        let mut mk = Array2::<c64>::zeros((ra, rb));
        for a in 0..ra {
            for i in 0..n {
                let yi = y[k][i].conj();
                if yi == c64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    let w = yi * x[k][j];
                    for b in 0..rb {
                        mk[[a, b]] += w * core[[a, i, j, b]];
                    }
                }
            }
        }
        acc = acc.dot(&mk);
    }
    Ok(acc[0])
}
