use ndarray::{s, Array2, Array3};

use super::{absorb_left_core, absorb_right_core, reshape2, reshape3, right_qr};
use crate::dense;
use crate::error::{Error, Result};

/// Relative truncation applied even when the requested tolerance is zero.
const ROUNDOFF_FLOOR: f64 = 16.0 * f64::EPSILON;

/// Right-to-left QR sweep followed by a left-to-right truncated SVD sweep.
///
/// Each of the `m - 1` truncations discards a tail of norm at most
/// `tol / sqrt(m - 1) * ‖X‖`, so the total error stays below `tol * ‖X‖`.
pub(crate) fn round_cores(
    mut cores: Vec<Array3<f64>>,
    tol: f64,
    max_rank: Option<usize>,
) -> Result<Vec<Array3<f64>>> {
    if !(tol >= 0.0) {
        return Err(Error::invalid(format!("rounding tolerance {tol} must be nonnegative")));
    }
    let m = cores.len();
    if m <= 1 {
        return Ok(cores);
    }
    for k in (1..m).rev() {
        let (l, q) = right_qr(&cores[k])?;
        cores[k] = q;
        cores[k - 1] = absorb_right_core(&cores[k - 1], &l)?;
    }
    let norm = cores[0].iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(cores
            .iter()
            .map(|c| Array3::zeros((1, c.shape()[1], 1)))
            .collect());
    }
    let delta = tol.max(ROUNDOFF_FLOOR) / ((m - 1) as f64).sqrt() * norm;
    let cap = max_rank.unwrap_or(usize::MAX).max(1);
    for k in 0..m - 1 {
        let (r0, n, r1) = cores[k].dim();
        let f = dense::svd(&reshape2(&cores[k], r0 * n, r1).view())?;
        let keep = f.rank_for_tail(delta).min(cap);
        cores[k] = reshape3(&f.u.slice(s![.., ..keep]), (r0, n, keep));
        let sv: Array2<f64> =
            Array2::from_diag(&f.s.slice(s![..keep])).dot(&f.vt.slice(s![..keep, ..]));
        cores[k + 1] = absorb_left_core(&sv, &cores[k + 1])?;
    }
    Ok(cores)
}
