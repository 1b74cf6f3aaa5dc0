use ndarray::{Array1, Array2};
use ndarray_linalg::c64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{EigenTuple, GeneratorMeta, MEProblem};
use crate::dense::{inv, solve_small};
use crate::error::{Error, Result};

/// Largest number of multi-indices the oracle will enumerate.
pub const ORACLE_CAP: u128 = 10_000_000;
const STYLE: &str = "paper-listing";
const CHUNK: usize = 4096;

/// A problem with known spectrum: `A_i = U_i diag(a_i) Z_i`, `B_ij = U_i diag(b_ij) Z_i`.
#[derive(Debug, Clone)]
pub struct GeneratedProblem {
    pub problem: MEProblem,
    pub u: Vec<Array2<f64>>,
    pub z: Vec<Array2<f64>>,
    pub a: Vec<Array1<f64>>,
    /// `b[i][j]` is the diagonal of `B_{i+1, j+1}`.
    pub b: Vec<Vec<Array1<f64>>>,
    pub seed: u64,
}

/// Chebyshev–Gauss–Lobatto points `cos(π k/(n−1))`, from 1 down to −1.
pub fn chebyshev_points(n: usize) -> Array1<f64> {
    if n == 1 {
        return Array1::from_elem(1, 1.0);
    }
    Array1::from_iter((0..n).map(|k| (std::f64::consts::PI * k as f64 / (n - 1) as f64).cos()))
}

/// Random m-parameter problem with every equation of size `n`.
///
/// Row `i` evaluates its Chebyshev points on its own interval, so the
/// eigenvalues are the solutions of one small linear system per multi-index.
pub fn generate_random_mep(m: usize, n: usize, seed: u64) -> Result<GeneratedProblem> {
    if m == 0 || n == 0 {
        return Err(Error::invalid("generator needs m ≥ 1 and n ≥ 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Vec::with_capacity(m);
    let mut u = Vec::with_capacity(m);
    for _ in 0..m {
        z.push(Array2::<f64>::eye(n) + Array2::from_shape_fn((n, n), |_| 0.3 * rng.random::<f64>()));
        u.push(Array2::<f64>::eye(n) + Array2::from_shape_fn((n, n), |_| 0.3 * rng.random::<f64>()));
    }
    let a: Vec<Array1<f64>> = (0..m)
        .map(|_| Array1::from_iter((0..n).map(|_| -5.0 * rng.sample::<f64, _>(StandardNormal))))
        .collect();

    let x = chebyshev_points(n);
    let step = 3.9 / (2 * m) as f64;
    let limit = |k: usize| -1.9 + step * k as f64;
    let b: Vec<Vec<Array1<f64>>> = (0..m)
        .map(|i| {
            let (lo, hi) = (limit(2 * i), limit(2 * i + 1));
            let pts = x.mapv(|t| t / 2.0 * (hi - lo) + (lo + hi) / 2.0);
            (0..m).map(|j| pts.mapv(|p| p.powi(j as i32))).collect()
        })
        .collect();

    let build = |i: usize, d: &Array1<f64>| u[i].dot(&Array2::from_diag(d)).dot(&z[i]);
    let am = (0..m).map(|i| build(i, &a[i])).collect();
    let bm = (0..m).map(|i| (0..m).map(|j| build(i, &b[i][j])).collect()).collect();
    let problem = MEProblem::new(am, bm)?;
    Ok(GeneratedProblem { problem, u, z, a, b, seed })
}

/// One exact eigenvalue tuple, keyed by its diagonal multi-index.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTuple {
    pub index: Vec<usize>,
    pub lambda: Vec<f64>,
}

impl OracleTuple {
    pub fn lambda_m(&self) -> f64 {
        *self.lambda.last().expect("tuples are nonempty")
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Sorted by `|λ_m − target|`, ties by multi-index.
    pub tuples: Vec<OracleTuple>,
    /// Multi-indices whose m×m system was singular.
    pub skipped: usize,
    pub enumerated: u128,
}

impl GeneratedProblem {
    pub fn m(&self) -> usize {
        self.problem.m()
    }

    pub fn n(&self) -> usize {
        self.a[0].len()
    }

    /// Same family with `λ_m` moved by `eta`.
    pub fn shifted(&self, eta: f64) -> GeneratedProblem {
        let m = self.m();
        let a = (0..m).map(|i| &self.a[i] + &(&self.b[i][m - 1] * eta)).collect();
        GeneratedProblem { problem: self.problem.apply_shift(eta), a, ..self.clone() }
    }

    pub fn meta(&self) -> GeneratorMeta {
        GeneratorMeta {
            seed: self.seed,
            style: STYLE.into(),
            a: self.a.iter().map(|v| v.to_vec()).collect(),
            b: self.b.iter().map(|row| row.iter().map(|v| v.to_vec()).collect()).collect(),
            u: self.u.iter().map(|x| x.iter().copied().collect()).collect(),
            z: self.z.iter().map(|x| x.iter().copied().collect()).collect(),
        }
    }

    /// Rebuilds the factored form from a problem file's metadata.
    pub fn from_meta(problem: MEProblem, meta: &GeneratorMeta) -> Result<GeneratedProblem> {
        let m = problem.m();
        let sizes = problem.sizes();
        if meta.a.len() != m || meta.b.len() != m || meta.u.len() != m || meta.z.len() != m {
            return Err(Error::Format("generator metadata does not match the problem".into()));
        }
        let square = |d: &Vec<f64>, n: usize| {
            Array2::from_shape_vec((n, n), d.clone()).map_err(|e| Error::Format(e.to_string()))
        };
        let u = (0..m).map(|i| square(&meta.u[i], sizes[i])).collect::<Result<Vec<_>>>()?;
        let z = (0..m).map(|i| square(&meta.z[i], sizes[i])).collect::<Result<Vec<_>>>()?;
        let a: Vec<Array1<f64>> = meta.a.iter().map(|v| Array1::from(v.clone())).collect();
        let b: Vec<Vec<Array1<f64>>> = meta
            .b
            .iter()
            .map(|row| row.iter().map(|v| Array1::from(v.clone())).collect())
            .collect();
        if (0..m).any(|i| a[i].len() != sizes[i] || b[i].len() != m || b[i].iter().any(|v| v.len() != sizes[i])) {
            return Err(Error::Format("generator metadata has wrong lengths".into()));
        }
        Ok(GeneratedProblem { problem, u, z, a, b, seed: meta.seed })
    }

    /// Largest deviation of the stored matrices from their factored form.
    pub fn reconstruction_error(&self) -> f64 {
        let m = self.m();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            let f = |d: &Array1<f64>| self.u[i].dot(&Array2::from_diag(d)).dot(&self.z[i]);
            let mut check = |x: &Array2<f64>, d: &Array1<f64>| {
                let diff = x - &f(d);
                worst = diff.iter().fold(worst, |acc, v| acc.max(v.abs()));
            };
            check(self.problem.a(i), &self.a[i]);
            for j in 0..m {
                check(self.problem.b(i, j), &self.b[i][j]);
            }
        }
        worst
    }

    /// λ at one multi-index, or `None` when its system is singular.
    pub fn lambda_at(&self, index: &[usize]) -> Option<Vec<f64>> {
        let m = self.m();
        let mat = Array2::from_shape_fn((m, m), |(i, j)| self.b[i][j][index[i]]);
        let rhs = Array1::from_iter((0..m).map(|i| self.a[i][index[i]]));
        solve_small(&mat.view(), &rhs.view(), 1e-13).0.map(|v| v.to_vec())
    }

    /// Assembles the eigenvector tuple from columns of `Z_i^{-1}`.
    pub fn eigen_tuple(&self, t: &OracleTuple) -> Result<EigenTuple> {
        let vectors = (0..self.m())
            .map(|i| {
                let zi = inv(&self.z[i].view())?;
                Ok(zi.column(t.index[i]).mapv(c64::from))
            })
            .collect::<Result<Vec<_>>>()?;
        EigenTuple::new(&self.problem, t.lambda.iter().map(|&l| c64::from(l)).collect(), vectors)
    }
}

fn decode(mut lin: usize, sizes: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; sizes.len()];
    for k in (0..sizes.len()).rev() {
        idx[k] = lin % sizes[k];
        lin /= sizes[k];
    }
    idx
}

/// `λ_m` of every nonsingular multi-index, in linear index order.
pub fn all_lambda_m(g: &GeneratedProblem) -> Result<Vec<f64>> {
    let sizes = g.problem.sizes();
    let total: u128 = sizes.iter().map(|&n| n as u128).product();
    if total > ORACLE_CAP {
        return Err(Error::CapExceeded { what: "oracle multi-indices".into(), requested: total, cap: ORACLE_CAP });
    }
    let lambda: Vec<Option<f64>> = (0..total as usize)
        .into_par_iter()
        .map(|lin| g.lambda_at(&decode(lin, &sizes)).map(|l| l[l.len() - 1]))
        .collect();
    Ok(lambda.into_iter().flatten().collect())
}

/// The same family shifted so that every `λ_m` is at least 1, with the shift used.
pub fn shift_positive(g: &GeneratedProblem) -> Result<(GeneratedProblem, f64)> {
    let min = all_lambda_m(g)?.into_iter().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::invalid("every multi-index is singular"));
    }
    let eta = 1.0 - min;
    Ok((g.shifted(eta), eta))
}

/// Enumerates every multi-index and keeps the `how_many` tuples with `λ_m` closest to `target`.
pub fn oracle_eigenvalues(g: &GeneratedProblem, how_many: usize, target: f64) -> Result<OracleResult> {
    let sizes = g.problem.sizes();
    let total: u128 = sizes.iter().map(|&n| n as u128).product();
    if total > ORACLE_CAP {
        return Err(Error::CapExceeded { what: "oracle multi-indices".into(), requested: total, cap: ORACLE_CAP });
    }
    let total_us = total as usize;
    let key = |t: &OracleTuple| (t.lambda_m() - target).abs();
    let order =
        |x: &OracleTuple, y: &OracleTuple| key(x).total_cmp(&key(y)).then_with(|| x.index.cmp(&y.index));

    let chunks: Vec<(Vec<OracleTuple>, usize)> = (0..total_us.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut kept = Vec::new();
            let mut skipped = 0;
            for lin in c * CHUNK..((c + 1) * CHUNK).min(total_us) {
                let index = decode(lin, &sizes);
                match g.lambda_at(&index) {
                    Some(lambda) => kept.push(OracleTuple { index, lambda }),
                    None => skipped += 1,
                }
            }
            kept.sort_by(order);
            kept.truncate(how_many);
            (kept, skipped)
        })
        .collect();

    let skipped = chunks.iter().map(|c| c.1).sum();
    let mut tuples: Vec<OracleTuple> = chunks.into_iter().flat_map(|c| c.0).collect();
    tuples.sort_by(order);
    tuples.truncate(how_many);
    Ok(OracleResult { tuples, skipped, enumerated: total })
}
