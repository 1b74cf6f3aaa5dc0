//! Multiparameter eigenvalue problems
//! `A_i x_i = λ_1 B_i1 x_i + … + λ_m B_im x_i`, `i = 1, …, m`.

mod generator;
mod refine;

use std::path::Path;

use ndarray::{Array1, Array2};
use ndarray_linalg::c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generator::{
    all_lambda_m, chebyshev_points, generate_random_mep, oracle_eigenvalues, shift_positive,
    GeneratedProblem, OracleResult, OracleTuple, ORACLE_CAP,
};
pub use refine::{
    duplicate_check, left_eigenvector_tuple, tensor_rayleigh_quotient, trqi_refine, DuplicateVerdict,
    TrqiOutcome,
};

/// The matrices `A_i` and `B_ij` of an m-parameter problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MEProblem {
    a: Vec<Array2<f64>>,
    b: Vec<Vec<Array2<f64>>>,
}

impl MEProblem {
    /// `b[i][j]` is `B_{i+1, j+1}`.
    pub fn new(a: Vec<Array2<f64>>, b: Vec<Vec<Array2<f64>>>) -> Result<Self> {
        let m = a.len();
        if m == 0 {
            return Err(Error::invalid("a problem needs at least one equation"));
        }
        if b.len() != m || b.iter().any(|row| row.len() != m) {
            return Err(Error::shape(format!("need an {m}×{m} array of B matrices")));
        }
        for i in 0..m {
            let n = a[i].nrows();
            if n == 0 || a[i].ncols() != n {
                return Err(Error::shape(format!("A_{} is {:?}, not square", i + 1, a[i].dim())));
            }
            for (j, bij) in b[i].iter().enumerate() {
                if bij.dim() != (n, n) {
                    return Err(Error::shape(format!(
                        "B_{}{} is {:?}, expected {n}×{n}",
                        i + 1,
                        j + 1,
                        bij.dim()
                    )));
                }
            }
        }
        if a.iter().chain(b.iter().flatten()).any(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("problem matrices"));
        }
        Ok(MEProblem { a, b })
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.a.iter().map(|x| x.nrows()).collect()
    }

    pub fn a(&self, i: usize) -> &Array2<f64> {
        &self.a[i]
    }

    pub fn b(&self, i: usize, j: usize) -> &Array2<f64> {
        &self.b[i][j]
    }

    /// `A_i + η B_im`; only `λ_m` moves, to `λ_m + η`.
    pub fn apply_shift(&self, eta: f64) -> MEProblem {
        let m = self.m();
        let a = (0..m).map(|i| &self.a[i] + &(&self.b[i][m - 1] * eta)).collect();
        MEProblem { a, b: self.b.clone() }
    }

    /// The problem with every matrix transposed (left eigenvectors become right ones).
    pub fn transposed(&self) -> MEProblem {
        MEProblem {
            a: self.a.iter().map(|x| x.t().to_owned()).collect(),
            b: self.b.iter().map(|row| row.iter().map(|x| x.t().to_owned()).collect()).collect(),
        }
    }

    /// `A_i − Σ_j λ_j B_ij` in complex arithmetic.
    pub fn pencil(&self, i: usize, lambda: &[c64]) -> Array2<c64> {
        let mut out = self.a[i].mapv(c64::from);
        for (j, &l) in lambda.iter().enumerate() {
            out.zip_mut_with(&self.b[i][j], |o, &v| *o -= l * v);
        }
        out
    }

    pub fn read_json(path: &Path) -> Result<(MEProblem, Option<GeneratorMeta>)> {
        let text = std::fs::read_to_string(path)?;
        let file: ProblemFile = serde_json::from_str(&text)?;
        file.into_problem()
    }

    pub fn to_file(&self, meta: Option<GeneratorMeta>) -> ProblemFile {
        ProblemFile {
            m: self.m(),
            sizes: self.sizes(),
            a: self.a.iter().map(flatten).collect(),
            b: self.b.iter().map(|row| row.iter().map(flatten).collect()).collect(),
            generator: meta,
        }
    }
}

fn flatten(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn unflatten(data: &[f64], n: usize, what: &str) -> Result<Array2<f64>> {
    Array2::from_shape_vec((n, n), data.to_vec())
        .map_err(|_| Error::shape(format!("{what} has {} entries, expected {}", data.len(), n * n)))
}

/// Generator metadata carried alongside a problem so the oracle can be rerun.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub seed: u64,
    pub style: String,
    /// `a_i`, one vector per equation.
    pub a: Vec<Vec<f64>>,
    /// `b_ij` diagonals.
    pub b: Vec<Vec<Vec<f64>>>,
    /// Left factors `U_i`, row-major.
    #[serde(default)]
    pub u: Vec<Vec<f64>>,
    /// Right factors `Z_i`, row-major.
    #[serde(default)]
    pub z: Vec<Vec<f64>>,
}

/// JSON layout of a problem file; matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub m: usize,
    pub sizes: Vec<usize>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorMeta>,
}

impl ProblemFile {
    pub fn into_problem(self) -> Result<(MEProblem, Option<GeneratorMeta>)> {
        if self.sizes.len() != self.m || self.a.len() != self.m || self.b.len() != self.m {
            return Err(Error::shape("problem file: m, sizes, A and B disagree"));
        }
        let mut a = Vec::with_capacity(self.m);
        let mut b = Vec::with_capacity(self.m);
        for i in 0..self.m {
            let n = self.sizes[i];
            a.push(unflatten(&self.a[i], n, &format!("A_{}", i + 1))?);
            if self.b[i].len() != self.m {
                return Err(Error::shape(format!("row {} of B has {} matrices", i + 1, self.b[i].len())));
            }
            let row = self.b[i]
                .iter()
                .enumerate()
                .map(|(j, d)| unflatten(d, n, &format!("B_{}{}", i + 1, j + 1)))
                .collect::<Result<Vec<_>>>()?;
            b.push(row);
        }
        Ok((MEProblem::new(a, b)?, self.generator))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// An eigenvalue tuple with its eigenvector tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenTuple {
    pub lambda: Vec<c64>,
    /// Unit-norm `x_1, …, x_m`.
    pub vectors: Vec<Array1<c64>>,
    /// ∞-norm of the stacked residual.
    pub residual: f64,
    pub left: Option<Vec<Array1<c64>>>,
}

impl EigenTuple {
    /// Normalizes the vectors and evaluates the residual.
    pub fn new(prob: &MEProblem, lambda: Vec<c64>, vectors: Vec<Array1<c64>>) -> Result<Self> {
        let vectors: Vec<Array1<c64>> = vectors
            .into_iter()
            .map(|mut v| {
                crate::dense::normalize_phase(&mut v);
                v
            })
            .collect();
        let (_, residual) = residual_tuple(prob, &lambda, &vectors)?;
        Ok(EigenTuple { lambda, vectors, residual, left: None })
    }

    pub fn lambda_m(&self) -> c64 {
        *self.lambda.last().expect("tuples are nonempty")
    }
}

/// Per-equation residuals `(A_i − Σ_j λ_j B_ij) x_i` and the ∞-norm of their stack.
pub fn residual_tuple(
    prob: &MEProblem,
    lambda: &[c64],
    vectors: &[Array1<c64>],
) -> Result<(Vec<Array1<c64>>, f64)> {
    let m = prob.m();
    if lambda.len() != m || vectors.len() != m {
        return Err(Error::shape(format!(
            "tuple with {} values and {} vectors for m = {m}",
            lambda.len(),
            vectors.len()
        )));
    }
    let mut out = Vec::with_capacity(m);
    let mut worst: f64 = 0.0;
    for i in 0..m {
        if vectors[i].len() != prob.a[i].nrows() {
            return Err(Error::shape(format!("x_{} has length {}", i + 1, vectors[i].len())));
        }
        let r = prob.pencil(i, lambda).dot(&vectors[i]);
        worst = r.iter().fold(worst, |acc, z| acc.max(z.norm()));
        out.push(r);
    }
    Ok((out, worst))
}
