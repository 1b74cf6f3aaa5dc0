//! Single-candidate transport between neighbouring frames, residual estimates
//! and the mode-by-mode convergence walk.

use ndarray::{Array1, Array2, Array3};
use ndarray_linalg::c64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DeltaPencil, SolverConfig};
use crate::dense::{normalize_phase, svd};
use crate::error::{Error, Result};
use crate::problem::{tensor_rayleigh_quotient, trqi_refine, EigenTuple, MEProblem};
use crate::tt::{extend_left, extend_right, BlockTT, LocalOperator, OperatorEnv, ShiftDirection};

/// Singular values of a single transported pair below this are dropped.
const TRANSPORT_FLOOR: f64 = 1e-14;
const IMAG_TOL: f64 = 1e-12;
const ALS_PASSES: usize = 5;

/// Rank-one approximation `σ · a ⊗ b ⊗ c` of an `r_{k-1} × n_k × r_k` tensor.
#[derive(Debug, Clone)]
pub struct RankOne {
    pub left: Array1<c64>,
    /// Unit norm, largest entry real positive.
    pub middle: Array1<c64>,
    pub right: Array1<c64>,
    pub sigma: f64,
}

fn contract_middle(x: &Array3<c64>, a: &Array1<c64>, c: &Array1<c64>) -> Array1<c64> {
    let (p, n, q) = x.dim();
    Array1::from_shape_fn(n, |i| {
        let mut acc = c64::new(0.0, 0.0);
        for al in 0..p {
            for g in 0..q {
                acc += a[al].conj() * x[[al, i, g]] * c[g].conj();
            }
        }
        acc
    })
}

fn contract_left(x: &Array3<c64>, b: &Array1<c64>, c: &Array1<c64>) -> Array1<c64> {
    let (p, n, q) = x.dim();
    Array1::from_shape_fn(p, |al| {
        let mut acc = c64::new(0.0, 0.0);
        for i in 0..n {
            for g in 0..q {
                acc += b[i].conj() * x[[al, i, g]] * c[g].conj();
            }
        }
        acc
    })
}

fn contract_right(x: &Array3<c64>, a: &Array1<c64>, b: &Array1<c64>) -> Array1<c64> {
    let (p, n, q) = x.dim();
    Array1::from_shape_fn(q, |g| {
        let mut acc = c64::new(0.0, 0.0);
        for al in 0..p {
            for i in 0..n {
                acc += a[al].conj() * b[i].conj() * x[[al, i, g]];
            }
        }
        acc
    })
}

fn unit(mut v: Array1<c64>) -> (Array1<c64>, f64) {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 {
        v.mapv_inplace(|z| z / n);
    }
    (v, n)
}

/// Two sequential rank-one SVD truncations followed by alternating refinement.
pub fn rank_one_factor(x: &Array3<c64>) -> Result<RankOne> {
    let (p, n, q) = x.dim();
    if x.iter().all(|z| z.norm() == 0.0) {
        return Err(Error::invalid("rank-one factor of a zero tensor"));
    }
    let first = svd(&x.view().into_shape_with_order((p, n * q)).unwrap())?;
    // x ≈ σ a ⊗ b ⊗ c with plain (unconjugated) outer products
    let mut a = first.u.column(0).to_owned();
    let rest = first.vt.row(0).mapv(|z| z * first.s[0]);
    let second = svd(&rest.into_shape_with_order((n, q)).unwrap().view())?;
    let mut b = second.u.column(0).to_owned();
    let mut c = second.vt.row(0).to_owned();
    let mut sigma = second.s[0];
    for _ in 0..ALS_PASSES {
        let (nb, _) = unit(contract_middle(x, &a, &c));
        let (na, _) = unit(contract_left(x, &nb, &c));
        let (nc, s) = unit(contract_right(x, &na, &nb));
        let gain = s - sigma;
        a = na;
        b = nb;
        c = nc;
        sigma = s;
        if gain <= 1e-15 * s {
            break;
        }
    }
    normalize_phase(&mut b);
    Ok(RankOne { left: a, middle: b, right: c, sigma })
}

fn realify(v: &Array1<c64>) -> Array2<f64> {
    let imag = v.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
    let total = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if imag <= IMAG_TOL * total {
        Array2::from_shape_fn((v.len(), 1), |(i, _)| v[i].re)
    } else {
        Array2::from_shape_fn((v.len(), 2), |(i, j)| if j == 0 { v[i].re } else { v[i].im })
    }
}

fn complexify(cols: &Array2<f64>) -> Array1<c64> {
    Array1::from_shape_fn(cols.nrows(), |i| {
        c64::new(cols[[i, 0]], if cols.ncols() > 1 { cols[[i, 1]] } else { 0.0 })
    })
}

/// Read-only view of the sweep state needed to move single candidates around.
pub struct Walker<'a> {
    pub x: &'a BlockTT,
    pub env_m: &'a OperatorEnv,
    pub env_0: &'a OperatorEnv,
    pub pencil: &'a DeltaPencil,
}

/// One transported estimate.
#[derive(Debug, Clone)]
pub struct Hop {
    pub mode: usize,
    pub residual: f64,
    pub estimate: Array1<c64>,
}

impl Walker<'_> {
    /// Moves `v` (local vector at the block index) mode by mode in `direction`
    /// until the boundary, stopping after the first residual `≥ stop`.
    pub fn transport(&self, mu: c64, v: &Array1<c64>, direction: ShiftDirection, stop: f64) -> Result<Vec<Hop>> {
        let k = self.x.index();
        let m = self.x.order();
        let mut temp = self.x.clone();
        temp.set_block_columns(&realify(v))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (dm, d0) = (&self.pencil.delta_m, &self.pencil.delta0);
        let env_err = || Error::invalid("operator interfaces are stale");
        // running interfaces on the side the block moves away from
        let (run_m, run_0) = match direction {
            ShiftDirection::Right => (self.env_m.left(k), self.env_0.left(k)),
            ShiftDirection::Left => (self.env_m.right(k), self.env_0.right(k)),
        };
        let mut run_m = run_m.ok_or_else(env_err)?.clone();
        let mut run_0 = run_0.ok_or_else(env_err)?.clone();
        let mut hops = Vec::new();
        let mut j = k;
        while let Some(next) = direction.step(j, m) {
            temp.shift(direction, usize::MAX, 0, TRANSPORT_FLOOR, &mut rng)?;
            let core = temp.core(j);
            let (fixed_m, fixed_0) = match direction {
                ShiftDirection::Right => {
                    run_m = extend_left(&run_m, core, dm.core(j), core);
                    run_0 = extend_left(&run_0, core, d0.core(j), core);
                    (self.env_m.right(next), self.env_0.right(next))
                }
                ShiftDirection::Left => {
                    run_m = extend_right(&run_m, core, dm.core(j), core);
                    run_0 = extend_right(&run_0, core, d0.core(j), core);
                    (self.env_m.left(next), self.env_0.left(next))
                }
            };
            let (fixed_m, fixed_0) = (fixed_m.ok_or_else(env_err)?, fixed_0.ok_or_else(env_err)?);
            let (lm, l0) = match direction {
                ShiftDirection::Right => (
                    LocalOperator::new(&run_m, dm.core(next), fixed_m),
                    LocalOperator::new(&run_0, d0.core(next), fixed_0),
                ),
                ShiftDirection::Left => (
                    LocalOperator::new(fixed_m, dm.core(next), &run_m),
                    LocalOperator::new(fixed_0, d0.core(next), &run_0),
                ),
            };
            let xhat = complexify(&temp.block_columns());
            let r = &lm.apply_complex(&xhat)? - &l0.apply_complex(&xhat)?.mapv(|z| z * mu);
            let residual = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let (p, n, q) = lm.dims();
            let tensor = xhat.into_shape_with_order((p, n, q)).unwrap();
            let estimate = rank_one_factor(&tensor)?.middle;
            hops.push(Hop { mode: next, residual, estimate });
            j = next;
            if residual >= stop {
                break;
            }
        }
        Ok(hops)
    }
}

/// Outcome of the convergence walk for one Ritz pair.
#[derive(Debug, Clone)]
pub enum WalkOutcome {
    /// Some projected residual reached `ε₁`; `visited` modes had estimates.
    Aborted { visited: usize },
    /// Estimates for every mode; the refined tuple and whether it meets `ε`.
    Complete { tuple: EigenTuple, converged: bool },
    /// Estimates for every mode, but no Rayleigh quotient could be formed.
    Degenerate,
}

impl WalkOutcome {
    pub fn converged(&self) -> Option<&EigenTuple> {
        match self {
            WalkOutcome::Complete { tuple, converged: true } => Some(tuple),
            _ => None,
        }
    }
}

/// One Ritz pair of the projected pencil with everything selection needs.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub mu: c64,
    /// Unit local vector.
    pub vector: Array1<c64>,
    /// Middle rank-one factor at the current mode.
    pub estimate: Array1<c64>,
    /// Projected residual one mode ahead.
    pub residual: f64,
    /// Middle factor one mode ahead, compared against in the next step.
    pub next_estimate: Array1<c64>,
    pub walk: WalkOutcome,
}

/// Residual of `(μ, X_{≠k} v)` projected on the frame one mode ahead.
pub fn estimate_residual(walker: &Walker<'_>, direction: ShiftDirection, mu: c64, v: &Array1<c64>) -> Result<f64> {
    let (v, nrm) = unit(v.clone());
    if nrm == 0.0 {
        return Err(Error::invalid("zero Ritz vector"));
    }
    let hops = walker.transport(mu, &v, direction, 0.0)?;
    hops.first().map(|h| h.residual).ok_or(Error::Boundary {
        mode: walker.x.index(),
        modes: walker.x.order(),
        direction: direction.sign(),
    })
}

/// Builds a candidate and runs the convergence walk: onward in `direction`,
/// then back from the current mode in the reverse direction.
pub fn check_convergence(
    walker: &Walker<'_>,
    prob: &MEProblem,
    config: &SolverConfig,
    direction: ShiftDirection,
    mu: c64,
    v: &Array1<c64>,
) -> Result<Candidate> {
    let k = walker.x.index();
    let m = walker.x.order();
    let (v, nrm) = unit(v.clone());
    if nrm == 0.0 {
        return Err(Error::invalid("zero Ritz vector"));
    }
    let frame = walker.x.frame();
    let local = v.clone().into_shape_with_order((frame.left_rank(), frame.mode_size(), frame.right_rank())).unwrap();
    let estimate = rank_one_factor(&local)?.middle;

    let ahead = walker.transport(mu, &v, direction, config.eps1)?;
    let first = ahead.first().ok_or(Error::Boundary { mode: k, modes: m, direction: direction.sign() })?;
    let (residual, next_estimate) = (first.residual, first.estimate.clone());

    let mut estimates: Vec<Option<Array1<c64>>> = vec![None; m];
    estimates[k] = Some(estimate.clone());
    let mut visited = 1;
    let mut aborted = false;
    for hop in &ahead {
        if hop.residual >= config.eps1 {
            aborted = true;
            break;
        }
        estimates[hop.mode] = Some(hop.estimate.clone());
        visited += 1;
    }
    if !aborted && visited < m {
        for hop in walker.transport(mu, &v, direction.reversed(), config.eps1)? {
            if hop.residual >= config.eps1 {
                aborted = true;
                break;
            }
            estimates[hop.mode] = Some(hop.estimate);
            visited += 1;
        }
    }
    let walk = if aborted || visited < m {
        WalkOutcome::Aborted { visited }
    } else {
        let vectors: Vec<Array1<c64>> = estimates.into_iter().map(|e| e.expect("every mode visited")).collect();
        match tensor_rayleigh_quotient(prob, &vectors) {
            Err(_) => WalkOutcome::Degenerate,
            Ok(lambda) => {
                let start = EigenTuple::new(prob, lambda, vectors)?;
                let refined = trqi_refine(prob, &start, config.trqi_max_iter, config.eps * 1e-6)?;
                let converged = refined.tuple.residual < config.eps;
                WalkOutcome::Complete { tuple: refined.tuple, converged }
            }
        }
    };
    Ok(Candidate { mu, vector: v, estimate, residual, next_estimate, walk })
}
