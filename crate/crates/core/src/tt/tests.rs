use ndarray::{array, Array1, Array2, Array3, Array4};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::dense::{frobenius, kron, kron_vec};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn2(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || StandardNormal.sample(rng))
}

fn random_operator(sizes: &[usize], ranks: &[usize], rng: &mut ChaCha8Rng) -> TTOperator {
    let mut r = vec![1];
    r.extend_from_slice(ranks);
    r.push(1);
    let cores = sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| Array4::from_shape_simple_fn((r[k], n, n, r[k + 1]), || StandardNormal.sample(rng)))
        .collect();
    TTOperator::new(cores).unwrap()
}

fn all_indices(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in sizes {
        out = out
            .into_iter()
            .flat_map(|p| (0..n).map(move |i| {
                let mut q = p.clone();
                q.push(i);
                q
            }))
            .collect();
    }
    out
}

fn rel(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let d = (a - b).mapv(|v| v * v).sum().sqrt();
    d / b.mapv(|v| v * v).sum().sqrt().max(f64::MIN_POSITIVE)
}

#[test]
fn evaluate_trivial_cases() {
    let one = TTVector::new(vec![Array3::from_elem((1, 1, 1), 1.0); 3]).unwrap();
    assert_eq!(one.evaluate(&[0, 0, 0]).unwrap(), 1.0);

    let v = TTVector::rank_one(&[array![1.0, 2.0], array![3.0, 4.0]]).unwrap();
    assert_eq!(v.evaluate(&[1, 0]).unwrap(), 6.0);
    assert!(matches!(v.evaluate(&[2, 0]), Err(Error::Bounds(_))));
}

#[test]
fn densify_uses_kronecker_order() {
    let v = TTVector::rank_one(&[array![1.0, 0.0], array![0.0, 1.0]]).unwrap();
    assert_eq!(v.densify().unwrap(), array![0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn densify_matches_evaluate_exhaustively() {
    let mut r = rng(1);
    for sizes in [vec![2, 2, 2], vec![3, 2, 3, 2], vec![3, 3, 3]] {
        let ranks: Vec<usize> = (1..sizes.len()).map(|k| 1 + k % 3).collect();
        let v = TTVector::random(&sizes, &ranks, &mut r).unwrap();
        let d = v.densify().unwrap();
        for (lin, idx) in all_indices(&sizes).iter().enumerate() {
            assert!((d[lin] - v.evaluate(idx).unwrap()).abs() < 1e-13);
        }
    }
}

#[test]
fn densify_refuses_above_cap() {
    let v = TTVector::rank_one(&[Array1::ones(1000), Array1::ones(1000), Array1::ones(1000)]).unwrap();
    assert!(matches!(v.densify(), Err(Error::CapExceeded { .. })));
}

#[test]
fn matvec_identity_and_kronecker() {
    let mut r = rng(2);
    let v = TTVector::random(&[3, 2, 4], &[2, 3], &mut r).unwrap();
    let id = TTOperator::identity(&[3, 2, 4]);
    assert_eq!(id.matvec(&v).unwrap().densify().unwrap(), v.densify().unwrap());

    let b1 = randn2(2, 2, &mut r);
    let b2 = randn2(3, 3, &mut r);
    let x1 = array![1.0, -2.0];
    let x2 = array![0.5, 1.0, 3.0];
    let op = TTOperator::kronecker(&[b1.clone(), b2.clone()]).unwrap();
    let out = op.matvec(&TTVector::rank_one(&[x1.clone(), x2.clone()]).unwrap()).unwrap();
    let expect = kron_vec(&b1.dot(&x1).view(), &b2.dot(&x2).view());
    assert!(rel(&out.densify().unwrap(), &expect) < 1e-14);
}

#[test]
fn matvec_matches_dense_and_rank_law() {
    let mut r = rng(3);
    let a = random_operator(&[3, 3, 3], &[4, 2], &mut r);
    let v = TTVector::random(&[3, 3, 3], &[3, 4], &mut r).unwrap();
    let out = a.matvec(&v).unwrap();
    assert_eq!(out.ranks(), vec![1, 12, 8, 1]);
    let expect = a.densify().unwrap().dot(&v.densify().unwrap());
    assert!(rel(&out.densify().unwrap(), &expect) <= 1e-12);
    assert!(a.matvec(&TTVector::random(&[3, 3, 2], &[1, 1], &mut r).unwrap()).is_err());
}

#[test]
fn operator_densify_matches_kronecker() {
    let mut r = rng(4);
    let a = randn2(2, 2, &mut r);
    let b = randn2(3, 3, &mut r);
    let op = TTOperator::kronecker(&[a.clone(), b.clone()]).unwrap();
    let d = op.densify().unwrap();
    assert!(frobenius(&(&d - &kron(&a.view(), &b.view())).view()) < 1e-14);
    let rows = [1, 2];
    let cols = [0, 1];
    assert!((op.evaluate(&rows, &cols).unwrap() - d[[1 * 3 + 2, 0 * 3 + 1]]).abs() < 1e-15);
}

fn left_gram(core: &Array3<f64>) -> Array2<f64> {
    let (r0, n, r1) = core.dim();
    let m = reshape2(core, r0 * n, r1);
    m.t().dot(&m)
}

fn right_gram(core: &Array3<f64>) -> Array2<f64> {
    let (r0, n, r1) = core.dim();
    let m = reshape2(core, r0, n * r1);
    m.dot(&m.t())
}

#[test]
fn orthonormalize_core_contracts() {
    let mut r = rng(5);
    let mut v = TTVector::random(&[3, 4, 3], &[3, 3], &mut r).unwrap();
    let before = v.densify().unwrap();
    let rr = v.left_orthonormalize_core(0).unwrap();
    assert!(frobenius(&(left_gram(v.core(0)) - Array2::<f64>::eye(3)).view()) < 1e-13);
    for i in 0..rr.nrows().min(rr.ncols()) {
        assert!(rr[[i, i]] >= 0.0);
    }
    v.absorb_left(1, &rr).unwrap();
    assert!(rel(&v.densify().unwrap(), &before) < 1e-12);

    let l = v.right_orthonormalize_core(2).unwrap();
    assert!(frobenius(&(right_gram(v.core(2)) - Array2::<f64>::eye(3)).view()) < 1e-13);
    v.absorb_right(1, &l).unwrap();
    assert!(rel(&v.densify().unwrap(), &before) < 1e-12);

    // an orthonormal core yields the identity transfer matrix
    let again = v.left_orthonormalize_core(0).unwrap();
    assert!(frobenius(&(again - Array2::<f64>::eye(3)).view()) < 1e-13);
}

#[test]
fn round_exact_and_rank_one() {
    let mut r = rng(6);
    let x: Vec<Array1<f64>> = (0..4).map(|_| randn2(3, 1, &mut r).column(0).to_owned()).collect();
    let v = TTVector::rank_one(&x).unwrap();
    let inflated = v.add(&v).unwrap().add(&v).unwrap();
    assert_eq!(inflated.ranks(), vec![1, 3, 3, 3, 1]);
    let rounded = inflated.round(0.0, None).unwrap();
    assert_eq!(rounded.ranks(), vec![1, 1, 1, 1, 1]);
    let mut thrice = v.densify().unwrap();
    thrice *= 3.0;
    assert!(rel(&rounded.densify().unwrap(), &thrice) < 1e-13);

    let w = TTVector::random(&[3, 3, 3, 3], &[2, 3, 2], &mut r).unwrap();
    let w2 = w.round(0.0, None).unwrap();
    assert!(rel(&w2.densify().unwrap(), &w.densify().unwrap()) < 1e-13);
    assert!(w2.ranks().iter().zip(w.ranks()).all(|(a, b)| *a <= b));
}

#[test]
fn round_respects_tolerance() {
    let mut r = rng(7);
    let w = TTVector::random(&[4, 4, 4, 4], &[4, 6, 4], &mut r).unwrap();
    let d = w.densify().unwrap();
    for tol in [1e-1, 1e-2, 0.3] {
        let out = w.round(tol, None).unwrap();
        assert!(rel(&out.densify().unwrap(), &d) <= tol * (1.0 + 1e-12));
    }
    let capped = w.round(0.0, Some(2)).unwrap();
    assert!(capped.ranks().iter().all(|&r| r <= 2));
}

#[test]
fn round_operator_identity_doubled() {
    let id = TTOperator::identity(&[2, 3, 2]);
    let doubled = id.add(&id).unwrap();
    assert_eq!(doubled.ranks(), vec![1, 2, 2, 1]);
    let rounded = doubled.round(0.0, None).unwrap();
    assert_eq!(rounded.ranks(), vec![1, 1, 1, 1]);
    let expect = Array2::<f64>::eye(12) * 2.0;
    assert!(frobenius(&(rounded.densify().unwrap() - expect).view()) < 1e-13);
}

fn orthonormal_frame(sizes: &[usize], ranks: &[usize], k: usize, seed: u64) -> FrameContext {
    let mut r = rng(seed);
    let mut v = TTVector::random(sizes, ranks, &mut r).unwrap();
    v.orthonormalize_around(k).unwrap();
    let cores = v.into_cores();
    FrameContext::new(cores[..k].to_vec(), sizes[k], cores[k + 1..].to_vec()).unwrap()
}

#[test]
fn frame_is_orthonormal() {
    for k in 0..3 {
        let f = orthonormal_frame(&[3, 3, 3], &[2, 2], k, 8 + k as u64);
        let x = f.densify().unwrap();
        let gram = x.t().dot(&x);
        let dev = (gram - Array2::<f64>::eye(f.local_size())).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
        assert!(dev <= 1e-12, "mode {k}: {dev}");
    }
}

#[test]
fn frame_apply_and_project_match_dense() {
    let mut r = rng(9);
    let a = random_operator(&[3, 3, 3], &[2, 3], &mut r);
    let ad = a.densify().unwrap();
    for k in 0..3 {
        let f = orthonormal_frame(&[3, 3, 3], &[2, 2], k, 20 + k as u64);
        let x = f.densify().unwrap();
        let dense_proj = x.t().dot(&ad).dot(&x);
        let y = randn2(f.local_size(), 1, &mut r).column(0).to_owned();
        let got = frame_apply(&f, &a, &y).unwrap();
        assert!(rel(&got, &dense_proj.dot(&y)) <= 1e-12);

        let p = frame_project(&f, &a).unwrap();
        assert!(frobenius(&(&p - &dense_proj).view()) <= 1e-12 * frobenius(&dense_proj.view()));

        let (l, rr) = super::frame::tests_support::interfaces(&f, &a);
        let local = LocalOperator::new(&l, a.core(k), &rr);
        let by_cols = local.matrix_by_columns().unwrap();
        assert!(frobenius(&(&p - &by_cols).view()) <= 1e-12 * frobenius(&p.view()));

        // identity operator leaves local vectors unchanged
        let id = TTOperator::identity(&[3, 3, 3]);
        assert!(rel(&frame_apply(&f, &id, &y).unwrap(), &y) < 1e-12);
        let pid = frame_project(&f, &id).unwrap();
        assert!(frobenius(&(pid - Array2::<f64>::eye(f.local_size())).view()) < 1e-12);

        // linearity
        let z = randn2(f.local_size(), 1, &mut r).column(0).to_owned();
        let lhs = frame_apply(&f, &a, &(&y * 2.0 - &z * 0.5)).unwrap();
        let rhs = frame_apply(&f, &a, &y).unwrap() * 2.0 - frame_apply(&f, &a, &z).unwrap() * 0.5;
        assert!(rel(&lhs, &rhs) < 1e-13);
    }
}

#[test]
fn project_symmetric_operator_is_symmetric() {
    let mut r = rng(10);
    let sym = |m: Array2<f64>| &m + &m.t();
    let op = TTOperator::kronecker(&[sym(randn2(3, 3, &mut r)), sym(randn2(3, 3, &mut r)), sym(randn2(3, 3, &mut r))])
        .unwrap();
    let f = orthonormal_frame(&[3, 3, 3], &[2, 2], 1, 11);
    let p = frame_project(&f, &op).unwrap();
    assert!(frobenius(&(&p - &p.t()).view()) < 1e-12 * frobenius(&p.view()));
}

#[test]
fn operator_env_matches_fresh_interfaces() {
    let mut r = rng(12);
    let a = random_operator(&[3, 4, 3, 2], &[2, 3, 2], &mut r);
    let mut x = BlockTT::random(&[3, 4, 3, 2], 2, 3, &mut r).unwrap();
    let mut env = OperatorEnv::build(&a, x.shared_cores(), 0).unwrap();
    for dir in [ShiftDirection::Right, ShiftDirection::Right, ShiftDirection::Right, ShiftDirection::Left, ShiftDirection::Left] {
        let from = x.index();
        x.shift(dir, 3, 1, 1e-14, &mut r).unwrap();
        let to = x.index();
        env.advance(&a, x.core(from), from, to);
        let f = x.frame();
        let y = x.block_columns();
        let fresh = frame_project(&f, &a).unwrap();
        let cached = env.local(&a, to).unwrap().apply(&y).unwrap();
        assert!(frobenius(&(fresh.dot(&y) - cached).view()) <= 1e-11 * frobenius(&fresh.view()) * frobenius(&y.view()));
    }
}

#[test]
fn shift_preserves_columns_and_orthonormality() {
    let mut r = rng(13);
    let sizes = [3, 3, 3];
    let mut x = BlockTT::random(&sizes, 2, 3, &mut r).unwrap();
    let mut cols = x.densify().unwrap();
    for dir in [ShiftDirection::Right, ShiftDirection::Right, ShiftDirection::Left, ShiftDirection::Left] {
        x.shift(dir, 9, 0, 1e-14, &mut r).unwrap();
        let after = x.densify().unwrap();
        assert!(frobenius(&(&after - &cols).view()) <= 1e-12 * frobenius(&cols.view()));
        cols = after;
        let fd = x.frame().densify().unwrap();
        let gram = fd.t().dot(&fd);
        let dev = (gram - Array2::<f64>::eye(x.local_size())).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
        assert!(dev <= 1e-12);
    }
    assert!(matches!(
        x.shift(ShiftDirection::Left, 3, 0, 1e-14, &mut r),
        Err(Error::Boundary { .. })
    ));
}

#[test]
fn shift_rank_one_block_keeps_column() {
    let mut r = rng(14);
    let x1 = array![1.0, 2.0, -1.0];
    let x2 = array![0.5, 0.0, 1.0];
    let x3 = array![2.0, 1.0, 1.0];
    let mut x = BlockTT::from_rank_one_columns(&[vec![x1.clone(), x2.clone(), x3.clone()]], 0).unwrap();
    x.orthonormalize_frame().unwrap();
    let expect = kron_vec(&kron_vec(&x1.view(), &x2.view()).view(), &x3.view());
    x.shift(ShiftDirection::Right, 1, 0, 1e-14, &mut r).unwrap();
    assert_eq!(x.ranks()[1], 1);
    assert!(rel(&x.densify().unwrap().column(0).to_owned(), &expect) < 1e-12);
}

#[test]
fn shift_with_kick_adds_orthonormal_directions() {
    let mut r = rng(15);
    let mut x = BlockTT::random(&[4, 4, 4], 2, 2, &mut r).unwrap();
    let before = x.densify().unwrap();
    let info = x.shift(ShiftDirection::Right, 1, 1, 1e-14, &mut r).unwrap();
    assert_eq!(info.kept, 1);
    assert_eq!(info.kicked, 1);
    assert_eq!(x.ranks()[1], 2);
    let g = left_gram(x.core(0));
    assert!(frobenius(&(g - Array2::<f64>::eye(2)).view()) < 1e-13);
    // truncation to rank one changes the columns, the kick does not add to them
    let plain = {
        let mut y = BlockTT::random(&[4, 4, 4], 2, 2, &mut rng(15)).unwrap();
        y.shift(ShiftDirection::Right, 1, 0, 1e-14, &mut r).unwrap();
        y.densify().unwrap()
    };
    assert!(frobenius(&(x.densify().unwrap() - plain).view()) < 1e-12 * frobenius(&before.view()));
}

#[test]
fn block_columns_round_trip() {
    let mut r = rng(16);
    let mut x = BlockTT::random(&[3, 2, 3], 3, 2, &mut r).unwrap();
    let cols = randn2(x.local_size(), 3, &mut r);
    x.set_block_columns(&cols).unwrap();
    assert_eq!(x.block_columns(), cols);
    for ib in 0..3 {
        let col = x.column(ib).unwrap().densify().unwrap();
        let via_frame = x.frame().densify().unwrap().dot(&cols.column(ib));
        assert!(rel(&col, &via_frame) < 1e-13);
    }
}

#[test]
fn bilinear_rank_one_matches_dense() {
    use ndarray_linalg::c64;
    let mut r = rng(17);
    let a = random_operator(&[2, 3, 2], &[2, 2], &mut r);
    let mk = |n: usize, r: &mut ChaCha8Rng| -> Array1<c64> {
        (0..n).map(|_| c64::new(StandardNormal.sample(r), StandardNormal.sample(r))).collect()
    };
    let x: Vec<_> = [2, 3, 2].iter().map(|&n| mk(n, &mut r)).collect();
    let y: Vec<_> = [2, 3, 2].iter().map(|&n| mk(n, &mut r)).collect();
    let got = bilinear_rank_one(&a, &y, &x).unwrap();
    let xd = kron_vec(&kron_vec(&x[0].view(), &x[1].view()).view(), &x[2].view());
    let yd = kron_vec(&kron_vec(&y[0].view(), &y[1].view()).view(), &y[2].view());
    let ad = a.densify().unwrap().mapv(c64::from);
    let expect: c64 = yd.iter().zip(ad.dot(&xd).iter()).map(|(u, v)| u.conj() * v).sum();
    assert!((got - expect).norm() < 1e-12 * expect.norm().max(1.0));
}

#[test]
fn binary_and_json_round_trip() {
    let mut r = rng(18);
    let v = TTVector::random(&[3, 2, 4], &[2, 3], &mut r).unwrap();
    let a = random_operator(&[2, 3], &[2], &mut r);
    let mut buf = Vec::new();
    write_vector(&mut buf, &v).unwrap();
    write_operator(&mut buf, &a).unwrap();
    let mut cur = std::io::Cursor::new(buf);
    assert_eq!(read_vector(&mut cur).unwrap(), v);
    assert_eq!(read_operator(&mut cur).unwrap(), a);

    let json = serde_json::to_string(&TTRecord::from(&v)).unwrap();
    let back: TTRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(back.to_vector().unwrap(), v);
    assert!(back.to_operator().is_err());

    let mut bad = std::io::Cursor::new(b"XXXX".to_vec());
    assert!(read_vector(&mut bad).is_err());
}

#[test]
fn from_dense_reconstructs() {
    let mut r = rng(19);
    let v = TTVector::random(&[2, 3, 2, 3], &[2, 2, 2], &mut r).unwrap();
    let d = v.densify().unwrap();
    let w = TTVector::from_dense(&d, &[2, 3, 2, 3], 1e-14).unwrap();
    assert!(rel(&w.densify().unwrap(), &d) < 1e-13);
    assert!(w.ranks().iter().zip(v.ranks()).all(|(a, b)| *a <= b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prop_densify_equals_evaluate(seed in 0u64..10_000, m in 2usize..5, n in 1usize..4, rank in 1usize..4) {
        let mut r = rng(seed);
        let sizes = vec![n; m];
        let ranks = vec![rank; m - 1];
        let v = TTVector::random(&sizes, &ranks, &mut r).unwrap();
        let d = v.densify().unwrap();
        for (lin, idx) in all_indices(&sizes).iter().enumerate() {
            prop_assert!((d[lin] - v.evaluate(idx).unwrap()).abs() <= 1e-12 * (1.0 + d[lin].abs()));
        }
    }

    #[test]
    fn prop_round_error_bound(seed in 0u64..10_000, tol in 0.0f64..0.5) {
        let mut r = rng(seed);
        let v = TTVector::random(&[3, 3, 3, 3], &[3, 5, 3], &mut r).unwrap();
        let d = v.densify().unwrap();
        let out = v.round(tol, None).unwrap();
        prop_assert!(rel(&out.densify().unwrap(), &d) <= tol.max(1e-13) * (1.0 + 1e-10));
        prop_assert!(out.ranks().iter().zip(v.ranks()).all(|(a, b)| *a <= b));
    }

    #[test]
    fn prop_matvec_rank_law(seed in 0u64..10_000, ra in 1usize..3, rv in 1usize..4) {
        let mut r = rng(seed);
        let a = random_operator(&[2, 2, 2], &[ra, ra], &mut r);
        let v = TTVector::random(&[2, 2, 2], &[rv, rv], &mut r).unwrap();
        let out = a.matvec(&v).unwrap();
        prop_assert_eq!(out.ranks(), vec![1, ra * rv, ra * rv, 1]);
    }
}
