use ndarray::{Array1, Array2};
use ndarray_linalg::c64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::walk::Candidate;
use crate::dense::principal_cosine;

const IMAG_TOL: f64 = 1e-12;
const CONJUGATE_TOL: f64 = 1e-10;

/// Why a block column was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pick {
    /// Close to an estimate carried over from the previous step.
    Matched(usize),
    /// Filled in by smallest estimated residual.
    Filled(usize),
    /// No candidate left.
    Random,
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// Real block columns, exactly `b` of them.
    pub columns: Array2<f64>,
    /// One entry per chosen candidate or random column.
    pub picks: Vec<Pick>,
    /// Rank-one estimates one mode ahead for the chosen candidates.
    pub next_estimates: Vec<Array1<c64>>,
}

impl Selection {
    pub fn matched(&self) -> usize {
        self.picks.iter().filter(|p| matches!(p, Pick::Matched(_))).count()
    }
}

fn is_complex(v: &Array1<c64>) -> bool {
    let imag = v.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
    let total = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    imag > IMAG_TOL * total
}

fn matches_previous(c: &Candidate, previous: &[Array1<c64>], threshold: f64) -> bool {
    previous.iter().any(|p| {
        principal_cosine(&p.view(), &c.estimate.view()).map(|cos| cos > threshold).unwrap_or(false)
    })
}

/// Chooses `b` block columns among the candidates.
///
/// Unconverged candidates whose current-mode estimate is within the cosine
/// threshold of a previous estimate come first, then the remaining unconverged
/// ones; both groups by estimated residual. A complex candidate occupies two
/// columns (real and imaginary part) and its conjugate partner is skipped.
/// Random columns make up any shortfall.
pub fn select_eigenpairs<R: Rng>(
    candidates: &[Candidate],
    previous: &[Array1<c64>],
    b: usize,
    cos_threshold: f64,
    rng: &mut R,
) -> Selection {
    let size = candidates.first().map_or(0, |c| c.vector.len());
    let by_residual = |list: &mut Vec<usize>| {
        list.sort_by(|&x, &y| candidates[x].residual.total_cmp(&candidates[y].residual).then(x.cmp(&y)))
    };
    let mut matched = Vec::new();
    let mut rest = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        if c.walk.converged().is_some() {
            continue;
        }
        if matches_previous(c, previous, cos_threshold) {
            matched.push(i);
        } else {
            rest.push(i);
        }
    }
    by_residual(&mut matched);
    by_residual(&mut rest);

    let mut cols: Vec<Array1<f64>> = Vec::with_capacity(b);
    let mut picks = Vec::new();
    let mut next_estimates = Vec::new();
    let mut taken: Vec<c64> = Vec::new();
    let order = matched.iter().map(|&i| Pick::Matched(i)).chain(rest.iter().map(|&i| Pick::Filled(i)));
    for pick in order {
        if cols.len() == b {
            break;
        }
        let i = match pick {
            Pick::Matched(i) | Pick::Filled(i) => i,
            Pick::Random => unreachable!(),
        };
        let c = &candidates[i];
        let complex = is_complex(&c.vector);
        if complex {
            let partner = taken
                .iter()
                .any(|t| (t.conj() - c.mu).norm() <= CONJUGATE_TOL * c.mu.norm().max(1.0) && t.im != 0.0);
            if partner || cols.len() + 2 > b {
                continue;
            }
            cols.push(c.vector.mapv(|z| z.re));
            cols.push(c.vector.mapv(|z| z.im));
        } else {
            cols.push(c.vector.mapv(|z| z.re));
        }
        taken.push(c.mu);
        picks.push(pick);
        next_estimates.push(c.next_estimate.clone());
    }
    while cols.len() < b {
        let mut v: Array1<f64> = Array1::from_shape_simple_fn(size, || StandardNormal.sample(rng));
        let n = v.dot(&v).sqrt();
        if n > 0.0 {
            v /= n;
        }
        cols.push(v);
        picks.push(Pick::Random);
    }
    let mut columns = Array2::zeros((size, b));
    for (j, c) in cols.iter().enumerate() {
        columns.column_mut(j).assign(c);
    }
    Selection { columns, picks, next_estimates }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::walk::WalkOutcome;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cand(mu: f64, residual: f64, est: [f64; 2], converged: bool) -> Candidate {
        let e = Array1::from_vec(vec![c64::new(est[0], 0.0), c64::new(est[1], 0.0)]);
        let walk = if converged {
            WalkOutcome::Complete {
                tuple: crate::problem::EigenTuple {
                    lambda: vec![c64::new(mu, 0.0)],
                    vectors: vec![],
                    residual: 0.0,
                    left: None,
                },
                converged: true,
            }
        } else {
            WalkOutcome::Aborted { visited: 1 }
        };
        Candidate {
            mu: c64::new(mu, 0.0),
            vector: Array1::from_elem(3, c64::new(mu, 0.0)),
            estimate: e.clone(),
            residual,
            next_estimate: e,
            walk,
        }
    }

    #[test]
    fn matched_first_then_by_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cs = vec![
            cand(1.0, 1e-2, [1.0, 0.0], false),
            cand(2.0, 1e-5, [0.0, 1.0], false),
            cand(3.0, 1e-3, [1.0, 0.05], false),
            cand(4.0, 1e-9, [1.0, 0.0], true),
        ];
        let prev = vec![Array1::from_vec(vec![c64::new(1.0, 0.0), c64::new(0.0, 0.0)])];
        let s = select_eigenpairs(&cs, &prev, 2, 0.99, &mut rng);
        assert_eq!(s.picks, vec![Pick::Matched(2), Pick::Matched(0)]);
        let s = select_eigenpairs(&cs, &prev, 3, 0.99, &mut rng);
        assert_eq!(s.picks, vec![Pick::Matched(2), Pick::Matched(0), Pick::Filled(1)]);
        let s = select_eigenpairs(&cs, &[], 2, 0.99, &mut rng);
        assert_eq!(s.picks, vec![Pick::Filled(1), Pick::Filled(2)]);
        let s = select_eigenpairs(&cs, &prev, 5, 0.99, &mut rng);
        assert_eq!(s.picks.len(), 5);
        assert_eq!(s.picks[3..], [Pick::Random, Pick::Random]);
        assert_eq!(s.columns.dim(), (3, 5));
    }

    #[test]
    fn complex_pairs_take_two_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = cand(1.0, 1e-4, [1.0, 0.0], false);
        a.mu = c64::new(1.0, 0.5);
        a.vector = Array1::from_elem(3, c64::new(1.0, 1.0));
        let mut b = a.clone();
        b.mu = a.mu.conj();
        b.vector.mapv_inplace(|z| z.conj());
        b.residual = 2e-4;
        let c = cand(2.0, 1e-3, [0.0, 1.0], false);
        let s = select_eigenpairs(&[a.clone(), b, c.clone()], &[], 3, 0.99, &mut rng);
        assert_eq!(s.picks, vec![Pick::Filled(0), Pick::Filled(2)]);
        // one slot left cannot hold a complex pair
        let mut c = c;
        c.residual = 1e-5;
        let s = select_eigenpairs(&[c, a], &[], 2, 0.99, &mut rng);
        assert_eq!(s.picks, vec![Pick::Filled(0), Pick::Random]);
    }
}
