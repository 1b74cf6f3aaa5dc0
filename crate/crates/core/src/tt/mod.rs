//! Tensor trains: vectors, operators, block iterates and frame products.
//!
//! Multi-indices are linearized with the last mode running fastest, so the
//! dense form of a rank-one train `x_1 ⊗ … ⊗ x_m` is the usual Kronecker
//! product. A core of a vector has shape `(r_{k-1}, n_k, r_k)`; an operator
//! core has shape `(r_{k-1}, n_k, n_k, r_k)` with row index before column index.

mod block;
mod frame;
mod io;
mod round;

use ndarray::{Array, Array1, Array2, Array3, Array4, ArrayBase, Axis, Data, Dimension};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dense;
use crate::error::{Error, Result};

pub use block::{BlockTT, ShiftDirection};
pub use frame::{
    bilinear_rank_one, extend_left, extend_right, frame_apply, frame_project, FrameContext,
    LocalOperator, OperatorEnv,
};
pub use io::{read_operator, read_vector, write_operator, write_vector, TTRecord};

/// Upper bound on entries materialized by any densifying routine.
pub const DENSE_CAP: u128 = 10_000_000;

pub(crate) fn reshape2<S, D>(a: &ArrayBase<S, D>, rows: usize, cols: usize) -> Array2<f64>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order((rows, cols))
        .expect("element count checked by caller")
}

pub(crate) fn reshape3<S, D>(a: &ArrayBase<S, D>, shape: (usize, usize, usize)) -> Array3<f64>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order(shape)
        .expect("element count checked by caller")
}

pub(crate) fn reshape4<S, D>(
    a: &ArrayBase<S, D>,
    shape: (usize, usize, usize, usize),
) -> Array4<f64>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order(shape)
        .expect("element count checked by caller")
}

fn check_cap(what: &str, requested: u128, cap: u128) -> Result<()> {
    if requested > cap {
        Err(Error::CapExceeded { what: what.to_string(), requested, cap })
    } else {
        Ok(())
    }
}

fn product(sizes: &[usize]) -> u128 {
    sizes.iter().map(|&n| n as u128).product()
}

/// A vector of length `n_1 ⋯ n_m` stored as a chain of third-order cores.
#[derive(Debug, Clone, PartialEq)]
pub struct TTVector {
    cores: Vec<Array3<f64>>,
}

impl TTVector {
    pub fn new(cores: Vec<Array3<f64>>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::shape("a tensor train needs at least one core"));
        }
        if cores[0].shape()[0] != 1 || cores[cores.len() - 1].shape()[2] != 1 {
            return Err(Error::shape("boundary ranks must be 1"));
        }
        for (k, w) in cores.windows(2).enumerate() {
            if w[0].shape()[2] != w[1].shape()[0] {
                return Err(Error::shape(format!(
                    "rank mismatch between cores {k} and {}: {} vs {}",
                    k + 1,
                    w[0].shape()[2],
                    w[1].shape()[0]
                )));
            }
        }
        if let Some(k) = cores.iter().position(|c| c.shape()[1] == 0) {
            return Err(Error::shape(format!("mode {k} has size 0")));
        }
        Ok(TTVector { cores })
    }

    /// The rank-one train `x_1 ⊗ … ⊗ x_m`.
    pub fn rank_one(factors: &[Array1<f64>]) -> Result<Self> {
        let cores = factors
            .iter()
            .map(|x| reshape3(x, (1, x.len(), 1)))
            .collect();
        TTVector::new(cores)
    }

    /// Gaussian cores with the requested interior ranks.
    pub fn random<R: Rng>(sizes: &[usize], interior: &[usize], rng: &mut R) -> Result<Self> {
        if interior.len() + 1 != sizes.len() {
            return Err(Error::shape(format!(
                "{} modes need {} interior ranks, got {}",
                sizes.len(),
                sizes.len().saturating_sub(1),
                interior.len()
            )));
        }
        let mut ranks = vec![1];
        ranks.extend_from_slice(interior);
        ranks.push(1);
        let cores = sizes
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                Array3::from_shape_simple_fn((ranks[k], n, ranks[k + 1]), || {
                    StandardNormal.sample(rng)
                })
            })
            .collect();
        TTVector::new(cores)
    }

    /// Exact train of a dense vector by successive SVDs, dropping singular
    /// values at or below `floor` times the largest.
    pub fn from_dense(v: &Array1<f64>, sizes: &[usize], floor: f64) -> Result<Self> {
        let total = product(sizes);
        if total != v.len() as u128 {
            return Err(Error::shape(format!("length {} vs mode product {total}", v.len())));
        }
        let mut cores = Vec::with_capacity(sizes.len());
        let mut rest = v.clone().into_shape_with_order((1, v.len())).unwrap();
        let mut r = 1;
        for (k, &n) in sizes.iter().enumerate() {
            if k + 1 == sizes.len() {
                cores.push(reshape3(&rest, (r, n, 1)));
                break;
            }
            let cols = rest.len() / (r * n);
            let mat = reshape2(&rest, r * n, cols);
            let f = dense::svd(&mat.view())?;
            let s0 = f.s[0];
            let keep = f.rank_above(floor * s0, usize::MAX);
            let u = f.u.slice(ndarray::s![.., ..keep]).to_owned();
            cores.push(reshape3(&u, (r, n, keep)));
            let sv = Array2::from_diag(&f.s.slice(ndarray::s![..keep])).dot(&f.vt.slice(ndarray::s![..keep, ..]));
            rest = sv;
            r = keep;
        }
        TTVector::new(cores)
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[1]).collect()
    }

    /// `(r_0, …, r_m)`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.shape()[0]).collect();
        r.push(1);
        r
    }

    pub fn core(&self, k: usize) -> &Array3<f64> {
        &self.cores[k]
    }

    pub fn cores(&self) -> &[Array3<f64>] {
        &self.cores
    }

    pub fn into_cores(self) -> Vec<Array3<f64>> {
        self.cores
    }

    pub fn evaluate(&self, index: &[usize]) -> Result<f64> {
        if index.len() != self.order() {
            return Err(Error::Bounds(format!(
                "index has {} entries for {} modes",
                index.len(),
                self.order()
            )));
        }
        let mut row = Array1::from_elem(1, 1.0);
        for (k, (&i, core)) in index.iter().zip(&self.cores).enumerate() {
            if i >= core.shape()[1] {
                return Err(Error::Bounds(format!(
                    "index {i} in mode {k} of size {}",
                    core.shape()[1]
                )));
            }
            row = row.dot(&core.index_axis(Axis(1), i));
        }
        Ok(row[0])
    }

    pub fn densify(&self) -> Result<Array1<f64>> {
        self.densify_with_cap(DENSE_CAP)
    }

    pub fn densify_with_cap(&self, cap: u128) -> Result<Array1<f64>> {
        check_cap("dense tensor-train vector", product(&self.mode_sizes()), cap)?;
        // running matrix of shape (n_1⋯n_k) × r_k
        let mut acc = Array2::from_elem((1, 1), 1.0);
        for core in &self.cores {
            let (r0, n, r1) = core.dim();
            let rows = acc.nrows();
            let next = acc.dot(&reshape2(core, r0, n * r1));
            acc = next.into_shape_with_order((rows * n, r1)).unwrap();
        }
        Ok(acc.into_shape_with_order(acc_len(&self.mode_sizes())).unwrap())
    }

    pub fn dot(&self, other: &TTVector) -> Result<f64> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::shape("dot of trains with different mode sizes"));
        }
        let mut env = Array2::from_elem((1, 1), 1.0);
        for (a, b) in self.cores.iter().zip(&other.cores) {
            // env'[p, q] = Σ_{p0, q0, i} env[p0, q0] a[p0, i, p] b[q0, i, q]
            let (ra0, n, ra1) = a.dim();
            let rb1 = b.shape()[2];
            let t = env.t().dot(&reshape2(a, ra0, n * ra1)); // (q0, i p)
            let t = reshape3(&t, (b.shape()[0], n, ra1));
            let t = reshape2(&t.permuted_axes([2, 0, 1]), ra1, b.shape()[0] * n);
            env = t.dot(&reshape2(b, b.shape()[0] * n, rb1));
        }
        Ok(env[[0, 0]])
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).map(|v| v.max(0.0).sqrt()).unwrap_or(f64::NAN)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.cores[0].mapv_inplace(|v| v * alpha);
    }

    /// Sum of two trains; ranks add.
    pub fn add(&self, other: &TTVector) -> Result<TTVector> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::shape("sum of trains with different mode sizes"));
        }
        let m = self.order();
        if m == 1 {
            return TTVector::new(vec![&self.cores[0] + &other.cores[0]]);
        }
        let mut cores = Vec::with_capacity(m);
        for (k, (a, b)) in self.cores.iter().zip(&other.cores).enumerate() {
            let (ra0, n, ra1) = a.dim();
            let (rb0, _, rb1) = b.dim();
            let core = if k == 0 {
                let mut c = Array3::zeros((1, n, ra1 + rb1));
                c.slice_mut(ndarray::s![.., .., ..ra1]).assign(a);
                c.slice_mut(ndarray::s![.., .., ra1..]).assign(b);
                c
            } else if k + 1 == m {
                let mut c = Array3::zeros((ra0 + rb0, n, 1));
                c.slice_mut(ndarray::s![..ra0, .., ..]).assign(a);
                c.slice_mut(ndarray::s![ra0.., .., ..]).assign(b);
                c
            } else {
                let mut c = Array3::zeros((ra0 + rb0, n, ra1 + rb1));
                c.slice_mut(ndarray::s![..ra0, .., ..ra1]).assign(a);
                c.slice_mut(ndarray::s![ra0.., .., ra1..]).assign(b);
                c
            };
            cores.push(core);
        }
        TTVector::new(cores)
    }

    /// Replaces core `k` by the Q factor of its `(r_{k-1} n_k) × r_k` unfolding
    /// and returns R; the caller must multiply R into core `k + 1` from the left.
    pub fn left_orthonormalize_core(&mut self, k: usize) -> Result<Array2<f64>> {
        let (q, r) = left_qr(&self.cores[k])?;
        self.cores[k] = q;
        Ok(r)
    }

    /// Replaces core `k` by the transposed Q factor of its `r_{k-1} × (n_k r_k)`
    /// unfolding and returns the left factor; the caller must multiply it into
    /// core `k - 1` from the right.
    pub fn right_orthonormalize_core(&mut self, k: usize) -> Result<Array2<f64>> {
        let (l, q) = right_qr(&self.cores[k])?;
        self.cores[k] = q;
        Ok(l)
    }

    /// Multiplies `r` into core `k` from the left (mode-0 product).
    pub fn absorb_left(&mut self, k: usize, r: &Array2<f64>) -> Result<()> {
        self.cores[k] = absorb_left_core(r, &self.cores[k])?;
        Ok(())
    }

    /// Multiplies `l` into core `k` from the right (mode-2 product).
    pub fn absorb_right(&mut self, k: usize, l: &Array2<f64>) -> Result<()> {
        self.cores[k] = absorb_right_core(&self.cores[k], l)?;
        Ok(())
    }

    /// Makes cores `0..k` left-orthonormal and cores `k+1..` right-orthonormal.
    pub fn orthonormalize_around(&mut self, k: usize) -> Result<()> {
        for j in 0..k {
            let r = self.left_orthonormalize_core(j)?;
            self.absorb_left(j + 1, &r)?;
        }
        for j in (k + 1..self.order()).rev() {
            let l = self.right_orthonormalize_core(j)?;
            self.absorb_right(j - 1, &l)?;
        }
        Ok(())
    }

    /// Rounds to relative accuracy `tol` in the 2-norm, optionally capping ranks.
    pub fn round(&self, tol: f64, max_rank: Option<usize>) -> Result<TTVector> {
        let cores = round::round_cores(self.cores.clone(), tol, max_rank)?;
        TTVector::new(cores)
    }
}

fn acc_len(sizes: &[usize]) -> usize {
    sizes.iter().product()
}

pub(crate) fn left_qr(core: &Array3<f64>) -> Result<(Array3<f64>, Array2<f64>)> {
    let (r0, n, r1) = core.dim();
    let (q, r) = dense::qr(&reshape2(core, r0 * n, r1).view())?;
    let s = q.ncols();
    Ok((reshape3(&q, (r0, n, s)), r))
}

pub(crate) fn right_qr(core: &Array3<f64>) -> Result<(Array2<f64>, Array3<f64>)> {
    let (r0, n, r1) = core.dim();
    let mat = reshape2(core, r0, n * r1);
    let (q, r) = dense::qr(&mat.t())?;
    let s = q.ncols();
    Ok((r.t().to_owned(), reshape3(&q.t(), (s, n, r1))))
}

pub(crate) fn absorb_left_core(r: &Array2<f64>, core: &Array3<f64>) -> Result<Array3<f64>> {
    let (r0, n, r1) = core.dim();
    if r.ncols() != r0 {
        return Err(Error::shape(format!("absorb {}x{} into core with r0 = {r0}", r.nrows(), r.ncols())));
    }
    let out = r.dot(&reshape2(core, r0, n * r1));
    Ok(reshape3(&out, (r.nrows(), n, r1)))
}

pub(crate) fn absorb_right_core(core: &Array3<f64>, l: &Array2<f64>) -> Result<Array3<f64>> {
    let (r0, n, r1) = core.dim();
    if l.nrows() != r1 {
        return Err(Error::shape(format!("absorb {}x{} into core with r1 = {r1}", l.nrows(), l.ncols())));
    }
    let out = reshape2(core, r0 * n, r1).dot(l);
    Ok(reshape3(&out, (r0, n, l.ncols())))
}

/// A matrix on `R^{n_1 ⋯ n_m}` stored as a chain of fourth-order cores.
#[derive(Debug, Clone, PartialEq)]
pub struct TTOperator {
    cores: Vec<Array4<f64>>,
}

impl TTOperator {
    pub fn new(cores: Vec<Array4<f64>>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::shape("a tensor-train operator needs at least one core"));
        }
        if cores[0].shape()[0] != 1 || cores[cores.len() - 1].shape()[3] != 1 {
            return Err(Error::shape("boundary ranks must be 1"));
        }
        for (k, c) in cores.iter().enumerate() {
            if c.shape()[1] != c.shape()[2] {
                return Err(Error::shape(format!("operator core {k} is not square in its mode")));
            }
        }
        for (k, w) in cores.windows(2).enumerate() {
            if w[0].shape()[3] != w[1].shape()[0] {
                return Err(Error::shape(format!(
                    "rank mismatch between operator cores {k} and {}",
                    k + 1
                )));
            }
        }
        Ok(TTOperator { cores })
    }

    /// `M_1 ⊗ … ⊗ M_m` as a rank-one operator.
    pub fn kronecker(factors: &[Array2<f64>]) -> Result<Self> {
        let cores = factors
            .iter()
            .map(|a| {
                let (r, c) = a.dim();
                if r != c {
                    return Err(Error::shape("Kronecker factors must be square"));
                }
                Ok(reshape4(a, (1, r, c, 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        TTOperator::new(cores)
    }

    pub fn identity(sizes: &[usize]) -> Self {
        let factors: Vec<Array2<f64>> = sizes.iter().map(|&n| Array2::eye(n)).collect();
        TTOperator::kronecker(&factors).expect("identity factors are square")
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[1]).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.shape()[0]).collect();
        r.push(1);
        r
    }

    pub fn core(&self, k: usize) -> &Array4<f64> {
        &self.cores[k]
    }

    pub fn cores(&self) -> &[Array4<f64>] {
        &self.cores
    }

    pub fn evaluate(&self, rows: &[usize], cols: &[usize]) -> Result<f64> {
        if rows.len() != self.order() || cols.len() != self.order() {
            return Err(Error::Bounds("multi-index length does not match operator order".into()));
        }
        let mut acc = Array1::from_elem(1, 1.0);
        for (k, core) in self.cores.iter().enumerate() {
            let n = core.shape()[1];
            if rows[k] >= n || cols[k] >= n {
                return Err(Error::Bounds(format!("index ({}, {}) in mode {k} of size {n}", rows[k], cols[k])));
            }
            acc = acc.dot(&core.slice(ndarray::s![.., rows[k], cols[k], ..]));
        }
        Ok(acc[0])
    }

    pub fn densify(&self) -> Result<Array2<f64>> {
        self.densify_with_cap(DENSE_CAP)
    }

    pub fn densify_with_cap(&self, cap: u128) -> Result<Array2<f64>> {
        let n = product(&self.mode_sizes());
        check_cap("dense tensor-train operator", n * n, cap)?;
        // acc indexed (rows so far, cols so far, rank)
        let mut acc = Array::from_elem((1, 1, 1), 1.0);
        for core in &self.cores {
            let (r0, nk, _, r1) = core.dim();
            let (pr, pc, _) = acc.dim();
            let t = reshape2(&acc, pr * pc, r0).dot(&reshape2(core, r0, nk * nk * r1));
            // (pr, pc, i, j, r1) → (pr, i, pc, j, r1)
            let t = t
                .into_shape_with_order((pr, pc, nk, nk, r1))
                .unwrap()
                .permuted_axes([0, 2, 1, 3, 4]);
            acc = reshape3(&t, (pr * nk, pc * nk, r1));
        }
        let (r, c, _) = acc.dim();
        Ok(reshape2(&acc, r, c))
    }

    /// Core-wise product; ranks multiply.
    pub fn matvec(&self, v: &TTVector) -> Result<TTVector> {
        if self.mode_sizes() != v.mode_sizes() {
            return Err(Error::shape(format!(
                "operator modes {:?} vs vector modes {:?}",
                self.mode_sizes(),
                v.mode_sizes()
            )));
        }
        let cores = self
            .cores
            .iter()
            .zip(v.cores())
            .map(|(a, x)| {
                let (ra0, n, _, ra1) = a.dim();
                let (rx0, _, rx1) = x.dim();
                // z[(α, p), i, (β, q)] = Σ_j a[α, i, j, β] x[p, j, q]
                let a2 = reshape2(&a.view().permuted_axes([0, 1, 3, 2]), ra0 * n * ra1, n);
                let x2 = reshape2(&x.view().permuted_axes([1, 0, 2]), n, rx0 * rx1);
                let z = a2.dot(&x2).into_shape_with_order((ra0, n, ra1, rx0, rx1)).unwrap();
                reshape3(&z.permuted_axes([0, 3, 1, 2, 4]), (ra0 * rx0, n, ra1 * rx1))
            })
            .collect();
        TTVector::new(cores)
    }

    pub fn add(&self, other: &TTOperator) -> Result<TTOperator> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::shape("sum of operators with different mode sizes"));
        }
        let (a, sizes) = self.as_vector();
        let (b, _) = other.as_vector();
        TTOperator::from_vector(&a.add(&b)?, &sizes)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.cores[0].mapv_inplace(|v| v * alpha);
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.as_vector().0.norm()
    }

    /// Rounds with the mode pair of each core fused into one index.
    pub fn round(&self, tol: f64, max_rank: Option<usize>) -> Result<TTOperator> {
        let (v, sizes) = self.as_vector();
        let cores = round::round_cores(v.into_cores(), tol, max_rank)?;
        TTOperator::from_vector(&TTVector::new(cores)?, &sizes)
    }

    fn as_vector(&self) -> (TTVector, Vec<usize>) {
        let cores = self
            .cores
            .iter()
            .map(|c| {
                let (r0, n, _, r1) = c.dim();
                reshape3(c, (r0, n * n, r1))
            })
            .collect();
        (TTVector { cores }, self.mode_sizes())
    }

    fn from_vector(v: &TTVector, sizes: &[usize]) -> Result<TTOperator> {
        let cores = v
            .cores()
            .iter()
            .zip(sizes)
            .map(|(c, &n)| {
                let (r0, _, r1) = c.dim();
                reshape4(c, (r0, n, n, r1))
            })
            .collect();
        TTOperator::new(cores)
    }
}

/// Convenience: `tt_round` on vectors.
pub fn tt_round(v: &TTVector, tol: f64, max_rank: Option<usize>) -> Result<TTVector> {
    v.round(tol, max_rank)
}

pub fn tt_round_operator(a: &TTOperator, tol: f64, max_rank: Option<usize>) -> Result<TTOperator> {
    a.round(tol, max_rank)
}

pub fn tt_matvec(a: &TTOperator, v: &TTVector) -> Result<TTVector> {
    a.matvec(v)
}

#[cfg(test)]
mod tests;
