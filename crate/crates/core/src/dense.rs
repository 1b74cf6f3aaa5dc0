//! Small dense kernels shared by the tensor-train code and the solver.
//!
//! Matrices are `ndarray::Array2` in row-major (C) order. Factorizations go
//! through LAPACK; the wrappers here pin down conventions LAPACK leaves open
//! (sign of the R diagonal, eigenvector normalization, infinite eigenvalues).

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::{
    c64, EigGeneralized, GeneralizedEigenvalue, JobSvd, Lapack, Scalar, QR, SVDDC,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn mag<T: Scalar>(v: T) -> f64 {
    num_traits::ToPrimitive::to_f64(&v.abs()).unwrap_or(f64::NAN)
}

pub type DenseMatrix = Array2<f64>;

/// |β| at or below this multiple of ‖N‖_F marks an eigenvalue as infinite.
pub const INFINITE_BETA_TOL: f64 = 1e-14;

/// Thin SVD `a = u · diag(s) · vt` with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd<T: Scalar> {
    pub u: Array2<T>,
    pub s: Array1<f64>,
    pub vt: Array2<T>,
}

impl<T: Scalar> Svd<T> {
    /// Number of singular values strictly above `floor`, at least one and at most `cap`.
    pub fn rank_above(&self, floor: f64, cap: usize) -> usize {
        let r = self.s.iter().take_while(|&&v| v > floor).count();
        r.clamp(1, cap.max(1)).min(self.s.len())
    }

    /// Smallest rank whose discarded tail has Frobenius norm at most `tail`.
    pub fn rank_for_tail(&self, tail: f64) -> usize {
        let mut acc = 0.0;
        let mut r = self.s.len();
        while r > 1 {
            let next = acc + self.s[r - 1] * self.s[r - 1];
            if next.sqrt() > tail {
                break;
            }
            acc = next;
            r -= 1;
        }
        r
    }
}

fn check_finite<T: Scalar>(a: &ArrayView2<T>, what: &'static str) -> Result<()> {
    if a.iter().all(|&v| mag(v).is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn svd<T: Scalar + Lapack>(a: &ArrayView2<T>) -> Result<Svd<T>> {
    check_finite(a, "svd")?;
    let (rows, cols) = a.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::shape(format!("svd of empty {rows}x{cols} matrix")));
    }
    let owned = a.as_standard_layout().to_owned();
    let (u, s, vt) = owned.svddc(JobSvd::Some)?;
    let u = u.expect("svddc with JobSvd::Some returns U");
    let vt = vt.expect("svddc with JobSvd::Some returns VT");
    let s = s.mapv(|v| num_traits::ToPrimitive::to_f64(&v).unwrap_or(f64::NAN));
    Ok(Svd {
        u: u.as_standard_layout().to_owned(),
        s,
        vt: vt.as_standard_layout().to_owned(),
    })
}

/// Thin QR with the diagonal of R made real and nonnegative.
pub fn qr<T: Scalar + Lapack>(a: &ArrayView2<T>) -> Result<(Array2<T>, Array2<T>)> {
    check_finite(a, "qr")?;
    let (q, r) = a.as_standard_layout().to_owned().qr()?;
    let mut q = q.as_standard_layout().to_owned();
    let mut r = r.as_standard_layout().to_owned();
    for i in 0..r.nrows().min(r.ncols()) {
        let d = r[[i, i]];
        let size = d.abs();
        if mag(d) == 0.0 {
            continue;
        }
        let phase = d / T::from_real(size);
        let conj = phase.conj();
        r.row_mut(i).mapv_inplace(|v| v * conj);
        q.column_mut(i).mapv_inplace(|v| v * phase);
    }
    Ok((q, r))
}

/// Orthonormal basis of `extra` columns completing the orthonormal columns of `basis`.
pub fn complete_basis(basis: &ArrayView2<f64>, random: Array2<f64>) -> Result<Array2<f64>> {
    let (rows, have) = basis.dim();
    let want = random.ncols();
    if have + want > rows {
        return Err(Error::shape(format!(
            "cannot add {want} orthonormal columns to {have} in dimension {rows}"
        )));
    }
    let mut extra = random;
    // two passes of block Gram-Schmidt against the existing basis
    for _ in 0..2 {
        let coef = basis.t().dot(&extra);
        extra = extra - basis.dot(&coef);
    }
    let (mut q, _) = qr(&extra.view())?;
    for _ in 0..2 {
        let coef = basis.t().dot(&q);
        q = q - basis.dot(&coef);
        let (q2, _) = qr(&q.view())?;
        q = q2;
    }
    Ok(q)
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
///
/// Returns the solution and the ratio of smallest to largest pivot magnitude;
/// `None` when a pivot vanishes relative to `pivot_tol` times the largest entry.
pub fn solve_small<T: Scalar>(
    a: &ArrayView2<T>,
    b: &ArrayView1<T>,
    pivot_tol: f64,
) -> (Option<Array1<T>>, f64) {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.len(), n);
    let mut m = a.to_owned();
    let mut x = b.to_owned();
    let scale = m.iter().map(|&v| mag(v)).fold(0.0, f64::max);
    if scale == 0.0 {
        return (None, 0.0);
    }
    let mut pmin = f64::INFINITY;
    let mut pmax: f64 = 0.0;
    for col in 0..n {
        let (piv, size) = (col..n)
            .map(|r| (r, mag(m[[r, col]])))
            .fold((col, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        pmin = pmin.min(size);
        pmax = pmax.max(size);
        if size <= pivot_tol * scale {
            return (None, pmin / pmax.max(f64::MIN_POSITIVE));
        }
        if piv != col {
            for c in 0..n {
                m.swap([piv, c], [col, c]);
            }
            x.swap(piv, col);
        }
        let d = m[[col, col]];
        for r in col + 1..n {
            let f = m[[r, col]] / d;
            if mag(f) == 0.0 {
                continue;
            }
            for c in col..n {
                let v = m[[col, c]];
                m[[r, c]] -= f * v;
            }
            let v = x[col];
            x[r] -= f * v;
        }
    }
    for r in (0..n).rev() {
        let mut acc = x[r];
        for c in r + 1..n {
            acc -= m[[r, c]] * x[c];
        }
        x[r] = acc / m[[r, r]];
    }
    (Some(x), pmin / pmax)
}

/// Solves a square system through LAPACK LU.
pub fn solve(a: &ArrayView2<c64>, b: &ArrayView1<c64>) -> Result<Array1<c64>> {
    use ndarray_linalg::Solve;
    let a = a.as_standard_layout().to_owned();
    Ok(a.solve(b)?)
}

/// Frobenius norm.
pub fn frobenius<T: Scalar>(a: &ArrayView2<T>) -> f64 {
    a.iter()
        .map(|v| {
            let m = mag(*v);
            m * m
        })
        .sum::<f64>()
        .sqrt()
}

pub fn norm_c(v: &ArrayView1<c64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Scales to unit norm and rotates the phase so the largest entry is real positive.
pub fn normalize_phase(v: &mut Array1<c64>) -> f64 {
    let nrm = norm_c(&v.view());
    if nrm == 0.0 {
        return 0.0;
    }
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        // strictly larger by a margin keeps the choice stable under roundoff
        if z.norm() > best_mag * (1.0 + 1e-10) {
            best = i;
            best_mag = z.norm();
        }
    }
    let phase = v[best] / v[best].norm();
    let f = phase.conj() / nrm;
    v.mapv_inplace(|z| z * f);
    v[best] = c64::new(v[best].re, 0.0);
    nrm
}

/// One eigenvalue of a pencil in (α, β) form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PencilEigenvalue {
    pub alpha: c64,
    pub beta: c64,
    /// `α/β`, or `None` when β is negligible (infinite eigenvalue).
    pub value: Option<c64>,
}

#[derive(Debug, Clone)]
pub struct GeneralizedEigenResult {
    pub eigenvalues: Vec<PencilEigenvalue>,
    /// Columns are unit-norm right eigenvectors with the largest entry real positive.
    pub right: Array2<c64>,
    /// Left eigenvectors `y` with `y^H M = λ y^H N`, paired column-by-column with `right`.
    pub left: Option<Array2<c64>>,
    /// max over finite pairs of ‖Mx − λNx‖ / ((‖M‖ + |λ|‖N‖)‖x‖).
    pub max_relative_residual: f64,
    pub norm_m: f64,
    pub norm_n: f64,
}

impl GeneralizedEigenResult {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn finite_values(&self) -> Vec<c64> {
        self.eigenvalues.iter().filter_map(|e| e.value).collect()
    }

    pub fn n_infinite(&self) -> usize {
        self.eigenvalues.iter().filter(|e| e.value.is_none()).count()
    }
}

fn raw_pencil(m: &ArrayView2<f64>, n: &ArrayView2<f64>) -> Result<(Vec<PencilEigenvalue>, Array2<c64>)> {
    let norm_n = frobenius(n);
    let norm_m = frobenius(m);
    let (vals, vecs) = (
        m.as_standard_layout().to_owned(),
        n.as_standard_layout().to_owned(),
    )
        .eig_generalized(None)?;
    let mut out = Vec::with_capacity(vals.len());
    for ev in vals.iter() {
        let (alpha, beta) = match *ev {
            GeneralizedEigenvalue::Finite(_, (a, b)) => (a, b),
            GeneralizedEigenvalue::Indeterminate((a, b)) => (a, b),
        };
        if alpha.norm() <= 1e-13 * norm_m.max(f64::MIN_POSITIVE)
            && beta.norm() <= 1e-13 * norm_n.max(f64::MIN_POSITIVE)
        {
            return Err(Error::SingularPencil(format!(
                "alpha = {alpha:.3e}, beta = {beta:.3e} with ‖M‖ = {norm_m:.3e}, ‖N‖ = {norm_n:.3e}"
            )));
        }
        let value = if beta.norm() <= INFINITE_BETA_TOL * norm_n {
            None
        } else {
            let v = alpha / beta;
            if v.re.is_finite() && v.im.is_finite() {
                Some(v)
            } else {
                None
            }
        };
        out.push(PencilEigenvalue { alpha, beta, value });
    }
    let mut vecs = vecs.as_standard_layout().to_owned();
    for mut col in vecs.axis_iter_mut(Axis(1)) {
        let mut v = col.to_owned();
        normalize_phase(&mut v);
        col.assign(&v);
    }
    Ok((out, vecs))
}

/// Full spectrum of the pencil `(m, n)`: `m x = λ n x`.
pub fn generalized_eig(
    m: &ArrayView2<f64>,
    n: &ArrayView2<f64>,
    want_left: bool,
) -> Result<GeneralizedEigenResult> {
    let dim = m.nrows();
    if m.ncols() != dim || n.dim() != (dim, dim) {
        return Err(Error::shape(format!(
            "pencil needs equal square matrices, got {:?} and {:?}",
            m.dim(),
            n.dim()
        )));
    }
    check_finite(m, "generalized_eig")?;
    check_finite(n, "generalized_eig")?;
    let norm_m = frobenius(m);
    let norm_n = frobenius(n);
    let (eigenvalues, right) = raw_pencil(m, n)?;

    let left = if want_left {
        let (lvals, lvecs) = raw_pencil(&m.t(), &n.t())?;
        // y^H M = λ y^H N  iff  M^T ȳ = λ N^T ȳ, so pair eigenvalues of the transposed pencil
        let mut used = vec![false; lvals.len()];
        let mut left = Array2::<c64>::zeros((dim, dim));
        for (j, ev) in eigenvalues.iter().enumerate() {
            let mut best = None;
            let mut best_d = f64::INFINITY;
            for (i, lv) in lvals.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let d = match (ev.value, lv.value) {
                    (Some(a), Some(b)) => (a - b).norm(),
                    (None, None) => 0.0,
                    _ => f64::INFINITY,
                };
                if d < best_d {
                    best_d = d;
                    best = Some(i);
                }
            }
            if let Some(i) = best {
                used[i] = true;
                                let y = lvecs.column(i).mapv(|z| z.conj());
                left.column_mut(j).assign(&y);
            }
        }
        Some(left)
    } else {
        None
    };

    let mc = m.mapv(c64::from);
    let nc = n.mapv(c64::from);
    let mut worst: f64 = 0.0;
    for (j, ev) in eigenvalues.iter().enumerate() {
        if let Some(lam) = ev.value {
            let x = right.column(j);
            let r = mc.dot(&x) - nc.dot(&x).mapv(|z| z * lam);
            let denom = (norm_m + lam.norm() * norm_n) * norm_c(&x);
            if denom > 0.0 {
                worst = worst.max(norm_c(&r.view()) / denom);
            }
        }
    }

    Ok(GeneralizedEigenResult {
        eigenvalues,
        right,
        left,
        max_relative_residual: worst,
        norm_m,
        norm_n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RitzRule {
    /// Smallest modulus among eigenvalues with positive real part.
    #[default]
    PositiveRealPart,
    /// Smallest modulus among eigenvalues with positive imaginary part.
    PositiveImagPart,
}

impl std::str::FromStr for RitzRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive-real-part" | "real" => Ok(RitzRule::PositiveRealPart),
            "positive-imag-part" | "imag" => Ok(RitzRule::PositiveImagPart),
            other => Err(Error::invalid(format!("unknown ritz rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RitzSelection {
    /// Indices into the eigenvalue list, best first.
    pub indices: Vec<usize>,
    /// Set when fewer than the requested count satisfied the rule.
    pub padded: bool,
}

fn ritz_order(a: &c64, b: &c64) -> std::cmp::Ordering {
    a.norm()
        .total_cmp(&b.norm())
        .then(a.re.total_cmp(&b.re))
        // positive imaginary part first within a conjugate pair
        .then(b.im.total_cmp(&a.im))
}

/// Picks `count` finite eigenvalues by smallest modulus subject to `rule`.
pub fn select_ritz(result: &GeneralizedEigenResult, count: usize, rule: RitzRule) -> RitzSelection {
    let mut eligible: Vec<(usize, c64)> = Vec::new();
    let mut rest: Vec<(usize, c64)> = Vec::new();
    for (i, ev) in result.eigenvalues.iter().enumerate() {
        let Some(v) = ev.value else { continue };
        let ok = match rule {
            RitzRule::PositiveRealPart => v.re > 0.0,
            RitzRule::PositiveImagPart => v.im > 0.0,
        };
        if ok {
            eligible.push((i, v));
        } else {
            rest.push((i, v));
        }
    }
    let by_value = |a: &(usize, c64), b: &(usize, c64)| ritz_order(&a.1, &b.1).then(a.0.cmp(&b.0));
    eligible.sort_by(by_value);
    rest.sort_by(by_value);
    let padded = eligible.len() < count;
    let indices = eligible
        .into_iter()
        .chain(rest)
        .take(count)
        .map(|(i, _)| i)
        .collect();
    RitzSelection { indices, padded }
}

/// |⟨u, v⟩| / (‖u‖‖v‖), clamped to [0, 1].
pub fn principal_cosine(u: &ArrayView1<c64>, v: &ArrayView1<c64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!("cosine of lengths {} and {}", u.len(), v.len())));
    }
    let nu = norm_c(u);
    let nv = norm_c(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("principal cosine of a zero vector"));
    }
    let dot: c64 = u.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
    Ok((dot.norm() / (nu * nv)).clamp(0.0, 1.0))
}

/// Determinant through LAPACK LU.
pub fn det(a: &ArrayView2<f64>) -> Result<f64> {
    use ndarray_linalg::Determinant;
    Ok(a.as_standard_layout().to_owned().det()?)
}

/// Inverse through LAPACK LU.
pub fn inv(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    use ndarray_linalg::Inverse;
    Ok(a.as_standard_layout().to_owned().inv()?)
}

/// Kronecker product with the second factor's index running fastest.
pub fn kron<T: Scalar>(a: &ArrayView2<T>, b: &ArrayView2<T>) -> Array2<T> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::<T>::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let f = a[[i, j]];
            out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
                .assign(&b.mapv(|v| v * f));
        }
    }
    out
}

pub fn kron_vec<T: Scalar>(a: &ArrayView1<T>, b: &ArrayView1<T>) -> Array1<T> {
    let mut out = Array1::<T>::zeros(a.len() * b.len());
    for (i, &x) in a.iter().enumerate() {
        out.slice_mut(s![i * b.len()..(i + 1) * b.len()])
            .assign(&b.mapv(|v| v * x));
    }
    out
}
