//! Operator determinants `Δ_0` and `Δ_i` in TT form.
//!
//! The determinant of an m×m matrix factors as `D_{1,m}(a_1) D_{2,m}(a_2) ⋯ D_{m,m}(a_m)`
//! where `a_k` is row k and `D_{k,m}` is `C(m,k−1) × C(m,k)`. Replacing each scalar
//! entry `a_kl` by the matrix `B_kl` turns the product into a tensor train whose
//! k-th core carries mode k, so the ranks follow Pascal's triangle.

use ndarray::{s, Array2, Array4};

use crate::error::{Error, Result};
use crate::problem::MEProblem;
use crate::tt::TTOperator;

/// Default rounding tolerance applied after construction.
pub const DELTA_ROUND_TOL: f64 = 1e-13;

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// `D_{k,n}(a)` for `1 ≤ k ≤ n`.
pub fn determinant_factor(k: usize, n: usize, a: &[f64]) -> Result<Array2<f64>> {
    if n == 0 || k == 0 || k > n {
        return Err(Error::invalid(format!("determinant factor D_{{{k},{n}}} does not exist")));
    }
    if a.len() != n {
        return Err(Error::shape(format!("row of length {} for n = {n}", a.len())));
    }
    Ok(factor(k, n, a))
}

fn factor(k: usize, n: usize, a: &[f64]) -> Array2<f64> {
    if k == 1 {
        return Array2::from_shape_vec((1, n), a.to_vec()).expect("row shape");
    }
    if k == n {
        let sign = |i: usize| if i % 2 == 0 { 1.0 } else { -1.0 };
        return Array2::from_shape_fn((n, 1), |(i, _)| sign(i) * a[n - 1 - i]);
    }
    let upper = factor(k - 1, n - 1, &a[1..]);
    let lower = factor(k, n - 1, &a[1..]);
    let (r1, c1) = upper.dim();
    let (r2, c2) = lower.dim();
    let mut out = Array2::zeros((r1 + r2, c1 + c2));
    out.slice_mut(s![..r1, ..c1]).assign(&upper);
    out.slice_mut(s![r1.., c1..]).assign(&lower);
    let diag = if (k - 1) % 2 == 0 { a[0] } else { -a[0] };
    for i in 0..r2 {
        out[[r1 + i, i]] = diag;
    }
    out
}

/// The k-th core (0-based) built from the row `[M_1, …, M_m]` of matrices.
fn delta_core(k: usize, row: &[&Array2<f64>]) -> Array4<f64> {
    let m = row.len();
    let n = row[0].nrows();
    let (ra, rb) = (binomial(m, k), binomial(m, k + 1));
    let mut core = Array4::zeros((ra, n, n, rb));
    let mut unit = vec![0.0; m];
    for (l, mat) in row.iter().enumerate() {
        unit[l] = 1.0;
        let e = factor(k + 1, m, &unit);
        unit[l] = 0.0;
        for ((a, b), &w) in e.indexed_iter() {
            if w != 0.0 {
                core.slice_mut(s![a, .., .., b]).scaled_add(w, *mat);
            }
        }
    }
    core
}

fn build(prob: &MEProblem, replace: Option<usize>, round_tol: Option<f64>) -> Result<TTOperator> {
    let m = prob.m();
    let cores = (0..m)
        .map(|k| {
            let row: Vec<&Array2<f64>> =
                (0..m).map(|l| if replace == Some(l) { prob.a(k) } else { prob.b(k, l) }).collect();
            delta_core(k, &row)
        })
        .collect();
    let op = TTOperator::new(cores)?;
    match round_tol {
        Some(tol) => op.round(tol, None),
        None => Ok(op),
    }
}

/// `Δ_0 = Σ_σ sgn(σ) B_{1σ(1)} ⊗ ⋯ ⊗ B_{mσ(m)}`.
pub fn build_delta0(prob: &MEProblem, round_tol: Option<f64>) -> Result<TTOperator> {
    build(prob, None, round_tol)
}

/// `Δ_i` (1-based `i`): column `i` of the operator determinant replaced by `A_1, …, A_m`.
pub fn build_delta_i(prob: &MEProblem, i: usize, round_tol: Option<f64>) -> Result<TTOperator> {
    if i == 0 || i > prob.m() {
        return Err(Error::invalid(format!("Δ_{i} requested for m = {}", prob.m())));
    }
    build(prob, Some(i - 1), round_tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{det, kron};
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0))
    }

    fn factor_det(a: &Array2<f64>) -> f64 {
        let n = a.nrows();
        let mut acc = Array2::from_elem((1, 1), 1.0);
        for k in 1..=n {
            acc = acc.dot(&determinant_factor(k, n, &a.row(k - 1).to_vec()).unwrap());
        }
        acc[[0, 0]]
    }

    fn kron_all(ms: &[&Array2<f64>]) -> Array2<f64> {
        ms[1..].iter().fold(ms[0].clone(), |acc, x| kron(&acc.view(), &x.view()))
    }

    fn permutations(m: usize) -> Vec<(Vec<usize>, f64)> {
        if m == 1 {
            return vec![(vec![0], 1.0)];
        }
        let mut out = Vec::new();
        for (p, s) in permutations(m - 1) {
            for pos in 0..m {
                let mut q = p.clone();
                q.insert(pos, m - 1);
                // inserting the largest element at pos creates m−1−pos inversions
                let sign = if (m - 1 - pos) % 2 == 0 { s } else { -s };
                out.push((q, sign));
            }
        }
        out
    }

    fn problem(m: usize, n: usize, seed: u64) -> MEProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = (0..m).map(|_| random(n, &mut rng)).collect();
        let b = (0..m).map(|_| (0..m).map(|_| random(n, &mut rng)).collect()).collect();
        MEProblem::new(a, b).unwrap()
    }

    fn brute(prob: &MEProblem, replace: Option<usize>) -> Array2<f64> {
        let m = prob.m();
        let mut acc: Option<Array2<f64>> = None;
        for (p, sign) in permutations(m) {
            let ms: Vec<&Array2<f64>> =
                (0..m).map(|k| if replace == Some(p[k]) { prob.a(k) } else { prob.b(k, p[k]) }).collect();
            let term = kron_all(&ms) * sign;
            acc = Some(match acc {
                None => term,
                Some(x) => x + term,
            });
        }
        acc.unwrap()
    }

    #[test]
    fn two_by_two() {
        let a = determinant_factor(1, 2, &[2.0, 3.0]).unwrap();
        let b = determinant_factor(2, 2, &[5.0, 7.0]).unwrap();
        assert_eq!(b, Array2::from_shape_vec((2, 1), vec![7.0, -5.0]).unwrap());
        assert_eq!(a.dot(&b)[[0, 0]], 2.0 * 7.0 - 3.0 * 5.0);
    }

    #[test]
    fn shapes_follow_pascal() {
        let a = [1.0; 4];
        let shapes: Vec<_> = (1..=4).map(|k| determinant_factor(k, 4, &a).unwrap().dim()).collect();
        assert_eq!(shapes, vec![(1, 4), (4, 6), (6, 4), (4, 1)]);
        assert!(determinant_factor(0, 3, &[1.0; 3]).is_err());
        assert!(determinant_factor(4, 3, &[1.0; 3]).is_err());
        assert!(determinant_factor(2, 3, &[1.0; 2]).is_err());
    }

    #[test]
    fn factor_product_is_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=7 {
            for _ in 0..20 {
                let a = random(n, &mut rng);
                let d = det(&a.view()).unwrap();
                assert!((factor_det(&a) - d).abs() <= 1e-12 * d.abs().max(1.0), "n = {n}");
            }
        }
    }

    #[test]
    fn delta0_m2_expansion() {
        let p = problem(2, 3, 1);
        let d0 = build_delta0(&p, None).unwrap().densify().unwrap();
        let want = kron(&p.b(0, 0).view(), &p.b(1, 1).view()) - kron(&p.b(0, 1).view(), &p.b(1, 0).view());
        assert!((&d0 - &want).iter().all(|v| v.abs() < 1e-13));
        let d1 = build_delta_i(&p, 1, None).unwrap().densify().unwrap();
        let want = kron(&p.a(0).view(), &p.b(1, 1).view()) - kron(&p.b(0, 1).view(), &p.a(1).view());
        assert!((&d1 - &want).iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn matches_signed_permutation_sums() {
        for (m, n) in [(3, 2), (4, 2), (3, 3)] {
            let p = problem(m, n, 10 + m as u64);
            let d0 = build_delta0(&p, None).unwrap();
            let ranks: Vec<usize> = (0..=m).map(|k| binomial(m, k)).collect();
            assert_eq!(d0.ranks(), ranks);
            assert!((&d0.densify().unwrap() - &brute(&p, None)).iter().all(|v| v.abs() < 1e-11));
            for i in 1..=m {
                let di = build_delta_i(&p, i, None).unwrap().densify().unwrap();
                assert!((&di - &brute(&p, Some(i - 1))).iter().all(|v| v.abs() < 1e-11), "m={m} i={i}");
            }
        }
        assert!(build_delta_i(&problem(2, 2, 0), 3, None).is_err());
        assert!(build_delta_i(&problem(2, 2, 0), 0, None).is_err());
    }

    #[test]
    fn rounding_keeps_the_operator() {
        let p = problem(4, 3, 7);
        let exact = build_delta0(&p, None).unwrap();
        let rounded = build_delta0(&p, Some(DELTA_ROUND_TOL)).unwrap();
        for (k, (&r, &e)) in rounded.ranks().iter().zip(exact.ranks().iter()).enumerate() {
            assert!(r <= e.min(if k == 0 || k == 4 { 1 } else { 81 }));
        }
        let diff = &exact.densify().unwrap() - &rounded.densify().unwrap();
        assert!(diff.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn diagonal_problem_eigenvalues() {
        // diagonal B_ij, A_i: every multi-index gives an eigenvalue of (Δ_i, Δ0)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, n) = (2, 3);
        let diag = |rng: &mut ChaCha8Rng| Array2::from_diag(&Array1::from_iter((0..n).map(|_| rng.random_range(0.5..2.0))));
        let a: Vec<_> = (0..m).map(|_| diag(&mut rng)).collect();
        let b: Vec<Vec<_>> = (0..m).map(|_| (0..m).map(|_| diag(&mut rng)).collect()).collect();
        let p = MEProblem::new(a, b).unwrap();
        let d0 = build_delta0(&p, None).unwrap().densify().unwrap();
        for i in 1..=m {
            let di = build_delta_i(&p, i, None).unwrap().densify().unwrap();
            for (i1, i2) in (0..n).flat_map(|x| (0..n).map(move |y| (x, y))) {
                let row = i1 * n + i2;
                let mat = Array2::from_shape_fn((2, 2), |(r, c)| p.b(r, c)[[[i1, i2][r], [i1, i2][r]]]);
                let rhs = [p.a(0)[[i1, i1]], p.a(1)[[i2, i2]]];
                let dt = det(&mat.view()).unwrap();
                let lam = if i == 1 {
                    (rhs[0] * mat[[1, 1]] - mat[[0, 1]] * rhs[1]) / dt
                } else {
                    (mat[[0, 0]] * rhs[1] - rhs[0] * mat[[1, 0]]) / dt
                };
                assert!((di[[row, row]] / d0[[row, row]] - lam).abs() < 1e-12);
            }
        }
    }
}
