use ndarray::{Array1, Array2};
use ndarray_linalg::c64;

use super::{EigenTuple, MEProblem};
use crate::dense::{frobenius, normalize_phase, solve, solve_small};
use crate::error::{Error, Result};
use crate::tt::{bilinear_rank_one, TTOperator};

const RAYLEIGH_PIVOT_TOL: f64 = 1e-14;
const DUPLICATE_FLOOR: f64 = 1e-14;

/// λ from the m×m system `[x_i^* B_ij x_i] λ = [x_i^* A_i x_i]`.
pub fn tensor_rayleigh_quotient(prob: &MEProblem, vectors: &[Array1<c64>]) -> Result<Vec<c64>> {
    let m = prob.m();
    if vectors.len() != m {
        return Err(Error::shape(format!("{} vectors for m = {m}", vectors.len())));
    }
    let mut mat = Array2::<c64>::zeros((m, m));
    let mut rhs = Array1::<c64>::zeros(m);
    for (i, x) in vectors.iter().enumerate() {
        if x.len() != prob.a(i).nrows() {
            return Err(Error::shape(format!("x_{} has length {}", i + 1, x.len())));
        }
        let nrm = x.iter().map(|z| z.norm_sqr()).sum::<f64>();
        if nrm == 0.0 || !nrm.is_finite() {
            return Err(Error::invalid(format!("x_{} is zero or non-finite", i + 1)));
        }
        let quad = |a: &Array2<f64>| {
            let ax = a.mapv(c64::from).dot(x);
            x.iter().zip(ax.iter()).map(|(u, v)| u.conj() * v).sum::<c64>() / nrm
        };
        rhs[i] = quad(prob.a(i));
        for j in 0..m {
            mat[[i, j]] = quad(prob.b(i, j));
        }
    }
    match solve_small(&mat.view(), &rhs.view(), RAYLEIGH_PIVOT_TOL) {
        (Some(l), _) => Ok(l.to_vec()),
        (None, ratio) => Err(Error::Singular { what: "Rayleigh quotient system".into(), pivot_ratio: ratio }),
    }
}

/// Solves `(A_k − Σ_j λ_j B_kj) y = rhs`, regularizing when the pencil is numerically singular.
fn shifted_solve(prob: &MEProblem, k: usize, lambda: &[c64], rhs: &Array1<c64>) -> Result<Array1<c64>> {
    let mut mat = prob.pencil(k, lambda);
    let ok = |y: &Array1<c64>| y.iter().all(|z| z.re.is_finite() && z.im.is_finite());
    if let Ok(y) = solve(&mat.view(), &rhs.view()) {
        if ok(&y) {
            return Ok(y);
        }
    }
    let scale = frobenius(&prob.a(k).view());
    let delta = 1e-12 * if scale > 0.0 { scale } else { 1.0 };
    for i in 0..mat.nrows() {
        mat[[i, i]] += delta;
    }
    let y = solve(&mat.view(), &rhs.view())?;
    if !ok(&y) {
        return Err(Error::NonFinite("regularized inverse iteration"));
    }
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct TrqiOutcome {
    /// Never has a larger residual than the input.
    pub tuple: EigenTuple,
    pub iterations: usize,
    pub failed: bool,
}

/// Tensor Rayleigh quotient iteration.
///
/// Alternates the Rayleigh quotient for λ with one shifted inverse-iteration
/// step per equation, `x_k ← (A_k − Σ_j λ_j B_kj)^{-1} B_km x_k`. The best
/// tuple seen is returned.
pub fn trqi_refine(prob: &MEProblem, t: &EigenTuple, max_iter: usize, tol: f64) -> Result<TrqiOutcome> {
    let m = prob.m();
    let mut best = EigenTuple::new(prob, t.lambda.clone(), t.vectors.clone())?;
    best.left = t.left.clone();
    let mut x = best.vectors.clone();
    let mut iterations = 0;
    let mut failed = false;
    for it in 0..=max_iter {
        if best.residual < tol {
            break;
        }
        let lambda = match tensor_rayleigh_quotient(prob, &x) {
            Ok(l) => l,
            Err(_) => {
                failed = true;
                break;
            }
        };
        let cand = EigenTuple::new(prob, lambda.clone(), x.clone())?;
        if cand.residual < best.residual {
            best = cand;
        }
        if best.residual < tol || it == max_iter {
            break;
        }
        let mut next = Vec::with_capacity(m);
        for (k, xk) in x.iter().enumerate() {
            let rhs = prob.b(k, m - 1).mapv(c64::from).dot(xk);
            match shifted_solve(prob, k, &lambda, &rhs) {
                Ok(mut y) => {
                    if normalize_phase(&mut y) == 0.0 {
                        failed = true;
                        break;
                    }
                    next.push(y);
                }
                Err(_) => {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            break;
        }
        x = next;
        iterations = it + 1;
    }
    Ok(TrqiOutcome { tuple: best, iterations, failed })
}

/// Left eigenvector tuple: right vectors of the transposed problem at `conj(λ)`,
/// so that `y_i^* (A_i − Σ_j λ_j B_ij) = 0`.
///
/// The returned tuple's `lambda` is `conj(λ)`, its residual that of the transposed problem.
pub fn left_eigenvector_tuple(prob: &MEProblem, t: &EigenTuple) -> Result<TrqiOutcome> {
    let pt = prob.transposed();
    let lambda: Vec<c64> = t.lambda.iter().map(|l| l.conj()).collect();
    let mut seed = Vec::with_capacity(prob.m());
    for (k, xk) in t.vectors.iter().enumerate() {
        let mut y = shifted_solve(&pt, k, &lambda, xk)?;
        if normalize_phase(&mut y) == 0.0 {
            return Err(Error::invalid("left inverse iteration collapsed to zero"));
        }
        seed.push(y);
    }
    let start = EigenTuple::new(&pt, lambda, seed)?;
    trqi_refine(&pt, &start, 10, 1e-13)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DuplicateVerdict {
    Accept { max_ratio: f64 },
    Reject { against: usize, ratio: f64 },
    /// `(y^p)^* Δ0 x^p` too small to divide by.
    Degenerate { against: usize, denominator: f64 },
}

impl DuplicateVerdict {
    pub fn accepted(&self) -> bool {
        matches!(self, DuplicateVerdict::Accept { .. })
    }
}

fn unit(v: &[Array1<c64>]) -> Vec<Array1<c64>> {
    v.iter()
        .map(|x| {
            let n = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if n > 0.0 { x.mapv(|z| z / n) } else { x.clone() }
        })
        .collect()
}

/// Accepts `candidate` iff `|(y^p)^* Δ0 x̂| / |(y^p)^* Δ0 x^p| < ξ` for every found `p`.
pub fn duplicate_check(
    candidate: &[Array1<c64>],
    found: &[EigenTuple],
    delta0: &TTOperator,
    xi: f64,
) -> Result<DuplicateVerdict> {
    let xc = unit(candidate);
    let scale = delta0.frobenius_norm();
    let mut max_ratio: f64 = 0.0;
    for (p, t) in found.iter().enumerate() {
        let y = t
            .left
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("found tuple {p} carries no left vectors")))?;
        let y = unit(y);
        let den = bilinear_rank_one(delta0, &y, &unit(&t.vectors))?.norm();
        if den <= DUPLICATE_FLOOR * scale {
            return Ok(DuplicateVerdict::Degenerate { against: p, denominator: den });
        }
        let ratio = bilinear_rank_one(delta0, &y, &xc)?.norm() / den;
        if ratio >= xi {
            return Ok(DuplicateVerdict::Reject { against: p, ratio });
        }
        max_ratio = max_ratio.max(ratio);
    }
    Ok(DuplicateVerdict::Accept { max_ratio })
}
