use ndarray::{s, Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::frame::FrameContext;
use super::{
    absorb_left_core, absorb_right_core, left_qr, reshape2, reshape3, reshape4, right_qr,
    TTVector,
};
use crate::dense;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftDirection {
    /// Towards mode `k + 1`.
    Right,
    /// Towards mode `k - 1`.
    Left,
}

impl ShiftDirection {
    pub fn sign(self) -> i8 {
        match self {
            ShiftDirection::Right => 1,
            ShiftDirection::Left => -1,
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            ShiftDirection::Right => ShiftDirection::Left,
            ShiftDirection::Left => ShiftDirection::Right,
        }
    }

    /// Neighbouring mode in this direction, if it exists.
    pub fn step(self, k: usize, modes: usize) -> Option<usize> {
        match self {
            ShiftDirection::Right if k + 1 < modes => Some(k + 1),
            ShiftDirection::Left if k > 0 => Some(k - 1),
            _ => None,
        }
    }
}

/// `b` trains sharing every core except the block core at `index`, which has
/// shape `(r_{k-1}, n_k, b, r_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTT {
    cores: Vec<Array3<f64>>,
    block: Array4<f64>,
    index: usize,
}

/// Summary of one block shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftInfo {
    /// Rank kept from the truncated SVD.
    pub kept: usize,
    /// Random directions appended.
    pub kicked: usize,
}

impl BlockTT {
    pub fn new(cores: Vec<Array3<f64>>, block: Array4<f64>, index: usize) -> Result<Self> {
        let m = cores.len();
        if index >= m {
            return Err(Error::Bounds(format!("block index {index} with {m} modes")));
        }
        let x = BlockTT { cores, block, index };
        x.validate()?;
        Ok(x)
    }

    fn validate(&self) -> Result<()> {
        let m = self.cores.len();
        let mut left = 1;
        for k in 0..m {
            let (r0, r1) = if k == self.index {
                (self.block.shape()[0], self.block.shape()[3])
            } else {
                (self.cores[k].shape()[0], self.cores[k].shape()[2])
            };
            if r0 != left {
                return Err(Error::shape(format!("rank mismatch entering mode {k}: {r0} vs {left}")));
            }
            left = r1;
        }
        if left != 1 {
            return Err(Error::shape("last rank must be 1"));
        }
        if self.block.shape()[2] == 0 {
            return Err(Error::shape("block size must be positive"));
        }
        Ok(())
    }

    /// Random iterate with block index 0 whose cores `1..m` are right-orthonormal.
    ///
    /// Interior ranks are `min(rank, n_1⋯n_k, n_{k+1}⋯n_m)`.
    pub fn random<R: Rng>(sizes: &[usize], b: usize, rank: usize, rng: &mut R) -> Result<Self> {
        let m = sizes.len();
        if m == 0 || b == 0 || rank == 0 {
            return Err(Error::invalid("random block train needs modes, b ≥ 1 and rank ≥ 1"));
        }
        let mut ranks = vec![1usize; m + 1];
        for k in 1..m {
            let left: u128 = sizes[..k].iter().map(|&n| n as u128).product();
            let right: u128 = sizes[k..].iter().map(|&n| n as u128).product();
            ranks[k] = (rank as u128).min(left).min(right) as usize;
        }
        let mut cores: Vec<Array3<f64>> = (0..m)
            .map(|k| {
                Array3::from_shape_simple_fn((ranks[k], sizes[k], ranks[k + 1]), || {
                    StandardNormal.sample(rng)
                })
            })
            .collect();
        for k in (1..m).rev() {
            let (l, q) = right_qr(&cores[k])?;
            cores[k] = q;
            cores[k - 1] = absorb_right_core(&cores[k - 1], &l)?;
        }
        let r1 = cores[0].shape()[2];
        let block = Array4::from_shape_simple_fn((1, sizes[0], b, r1), || StandardNormal.sample(rng));
        cores[0] = Array3::zeros((0, 0, 0));
        BlockTT::new(cores, block, 0)
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn block_size(&self) -> usize {
        self.block.shape()[2]
    }

    pub fn block(&self) -> &Array4<f64> {
        &self.block
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        (0..self.order())
            .map(|k| if k == self.index { self.block.shape()[1] } else { self.cores[k].shape()[1] })
            .collect()
    }

    /// `(r_0, …, r_m)`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = (0..self.order())
            .map(|k| if k == self.index { self.block.shape()[0] } else { self.cores[k].shape()[0] })
            .collect();
        r.push(1);
        r
    }

    /// Shared core `k`; panics at the block index.
    pub fn core(&self, k: usize) -> &Array3<f64> {
        assert_ne!(k, self.index, "mode {k} holds the block core");
        &self.cores[k]
    }

    /// Size `r_{k-1} n_k r_k` of the local space at the block index.
    pub fn local_size(&self) -> usize {
        let (r0, n, _, r1) = self.block.dim();
        r0 * n * r1
    }

    /// Replaces the block core by `b` local vectors, one per column of `cols`.
    pub fn set_block_columns(&mut self, cols: &Array2<f64>) -> Result<()> {
        let (r0, n, _, r1) = self.block.dim();
        if cols.nrows() != r0 * n * r1 || cols.ncols() == 0 {
            return Err(Error::shape(format!(
                "block columns {:?} for local size {}",
                cols.dim(),
                r0 * n * r1
            )));
        }
        let b = cols.ncols();
        // (a, i, c, ib) → (a, i, ib, c)
        let t = reshape4(cols, (r0, n, r1, b));
        self.block = reshape4(&t.permuted_axes([0, 1, 3, 2]), (r0, n, b, r1));
        Ok(())
    }

    /// Local vectors of the block core as columns of an `(r_{k-1} n_k r_k) × b` matrix.
    pub fn block_columns(&self) -> Array2<f64> {
        let (r0, n, b, r1) = self.block.dim();
        reshape2(&self.block.view().permuted_axes([0, 1, 3, 2]), r0 * n * r1, b)
    }

    pub fn frame(&self) -> FrameContext {
        FrameContext::new(
            self.cores[..self.index].to_vec(),
            self.block.shape()[1],
            self.cores[self.index + 1..].to_vec(),
        )
        .expect("block train ranks are consistent")
    }

    /// Column `ib` as a plain train.
    pub fn column(&self, ib: usize) -> Result<TTVector> {
        if ib >= self.block_size() {
            return Err(Error::Bounds(format!("column {ib} of block size {}", self.block_size())));
        }
        let mut cores = self.cores.clone();
        cores[self.index] = self.block.index_axis(Axis(2), ib).to_owned();
        TTVector::new(cores)
    }

    /// All columns densified into an `N × b` matrix.
    pub fn densify(&self) -> Result<Array2<f64>> {
        let frame = self.frame();
        let dense_frame = frame.densify()?;
        Ok(dense_frame.dot(&self.block_columns()))
    }

    /// Moves the block core one mode in `direction`.
    ///
    /// The block unfolding is SVD-truncated to at most `rank` singular values
    /// above `floor`; `kick` random orthonormal directions are then appended to
    /// the retained basis with zero weight, so the represented columns do not
    /// change while the next frame gains random directions.
    pub fn shift<R: Rng>(
        &mut self,
        direction: ShiftDirection,
        rank: usize,
        kick: usize,
        floor: f64,
        rng: &mut R,
    ) -> Result<ShiftInfo> {
        let m = self.order();
        let k = self.index;
        let Some(next) = direction.step(k, m) else {
            return Err(Error::Boundary { mode: k, modes: m, direction: direction.sign() });
        };
        let (r0, n, b, r1) = self.block.dim();
        match direction {
            ShiftDirection::Right => {
                let mat = reshape2(&self.block, r0 * n, b * r1);
                let f = dense::svd(&mat.view())?;
                let kept = f.rank_above(floor, rank);
                let u = f.u.slice(s![.., ..kept]).to_owned();
                let kicked = kick.min(r0 * n - kept);
                let basis = if kicked > 0 {
                    let rand = Array2::from_shape_simple_fn((r0 * n, kicked), || {
                        StandardNormal.sample(rng)
                    });
                    let extra = dense::complete_basis(&u.view(), rand)?;
                    ndarray::concatenate(Axis(1), &[u.view(), extra.view()]).unwrap()
                } else {
                    u
                };
                let t = kept + kicked;
                let mut z = Array2::<f64>::zeros((t, b * r1));
                let sv = Array2::from_diag(&f.s.slice(s![..kept])).dot(&f.vt.slice(s![..kept, ..]));
                z.slice_mut(s![..kept, ..]).assign(&sv);
                // new block[t, j, ib, c] = Σ_q z[t, ib, q] G[q, j, c]
                let g = &self.cores[next];
                let (_, nn, rc) = g.dim();
                let prod = reshape2(&z, t * b, r1).dot(&reshape2(g, r1, nn * rc));
                let prod = reshape4(&prod, (t, b, nn, rc));
                self.block = reshape4(&prod.permuted_axes([0, 2, 1, 3]), (t, nn, b, rc));
                self.cores[k] = reshape3(&basis, (r0, n, t));
                self.cores[next] = Array3::zeros((0, 0, 0));
                self.index = next;
                Ok(ShiftInfo { kept, kicked })
            }
            ShiftDirection::Left => {
                // rows (ib, a), columns (i, c)
                let mat = reshape2(&self.block.view().permuted_axes([2, 0, 1, 3]), b * r0, n * r1);
                let f = dense::svd(&mat.view())?;
                let kept = f.rank_above(floor, rank);
                let v = f.vt.slice(s![..kept, ..]).t().to_owned();
                let kicked = kick.min(n * r1 - kept);
                let basis = if kicked > 0 {
                    let rand = Array2::from_shape_simple_fn((n * r1, kicked), || {
                        StandardNormal.sample(rng)
                    });
                    let extra = dense::complete_basis(&v.view(), rand)?;
                    ndarray::concatenate(Axis(1), &[v.view(), extra.view()]).unwrap()
                } else {
                    v
                };
                let t = kept + kicked;
                let mut z = Array2::<f64>::zeros((b * r0, t));
                let us = f.u.slice(s![.., ..kept]).dot(&Array2::from_diag(&f.s.slice(s![..kept])));
                z.slice_mut(s![.., ..kept]).assign(&us);
                // new block[a, j, ib, t] = Σ_p G[a, j, p] z[ib, p, t]
                let g = &self.cores[next];
                let (ra, nn, _) = g.dim();
                let zt = reshape2(&reshape3(&z, (b, r0, t)).permuted_axes([1, 0, 2]), r0, b * t);
                let prod = reshape2(g, ra * nn, r0).dot(&zt);
                self.block = reshape4(&prod, (ra, nn, b, t));
                self.cores[k] = reshape3(&basis.t(), (t, n, r1));
                self.cores[next] = Array3::zeros((0, 0, 0));
                self.index = next;
                Ok(ShiftInfo { kept, kicked })
            }
        }
    }

    /// QR-orthonormalizes shared core `k < index` (left) and pushes R rightwards.
    pub fn left_orthonormalize_core(&mut self, k: usize) -> Result<Array2<f64>> {
        if k >= self.index {
            return Err(Error::invalid(format!("left-orthonormalizing mode {k} at block index {}", self.index)));
        }
        let (q, r) = left_qr(&self.cores[k])?;
        self.cores[k] = q;
        Ok(r)
    }

    /// QR-orthonormalizes shared core `k > index` (right) and returns the left factor.
    pub fn right_orthonormalize_core(&mut self, k: usize) -> Result<Array2<f64>> {
        if k <= self.index || k >= self.order() {
            return Err(Error::invalid(format!("right-orthonormalizing mode {k} at block index {}", self.index)));
        }
        let (l, q) = right_qr(&self.cores[k])?;
        self.cores[k] = q;
        Ok(l)
    }

    /// Makes the frame at the block index orthonormal without changing the columns.
    pub fn orthonormalize_frame(&mut self) -> Result<()> {
        for j in 0..self.index {
            let r = self.left_orthonormalize_core(j)?;
            if j + 1 == self.index {
                let (r0, n, b, r1) = self.block.dim();
                let t = r.dot(&reshape2(&self.block, r0, n * b * r1));
                self.block = reshape4(&t, (r.nrows(), n, b, r1));
            } else {
                self.cores[j + 1] = absorb_left_core(&r, &self.cores[j + 1])?;
            }
        }
        for j in (self.index + 1..self.order()).rev() {
            let l = self.right_orthonormalize_core(j)?;
            if j - 1 == self.index {
                let (r0, n, b, r1) = self.block.dim();
                let t = reshape2(&self.block, r0 * n * b, r1).dot(&l);
                self.block = reshape4(&t, (r0, n, b, l.ncols()));
            } else {
                self.cores[j - 1] = absorb_right_core(&self.cores[j - 1], &l)?;
            }
        }
        Ok(())
    }

    /// Block train whose columns are given rank-one trains; shared cores are the
    /// concatenated factors, so the frame at `index` contains every column.
    pub fn from_rank_one_columns(columns: &[Vec<Array1<f64>>], index: usize) -> Result<Self> {
        let b = columns.len();
        if b == 0 {
            return Err(Error::invalid("no columns"));
        }
        let m = columns[0].len();
        let sizes: Vec<usize> = columns[0].iter().map(|x| x.len()).collect();
        if index >= m || columns.iter().any(|c| c.len() != m) {
            return Err(Error::shape("inconsistent rank-one columns"));
        }
        let mut cores = Vec::with_capacity(m);
        for k in 0..m {
            let n = sizes[k];
            let r0 = if k == 0 { 1 } else { b };
            let r1 = if k + 1 == m { 1 } else { b };
            let mut core = Array3::zeros((r0, n, r1));
            if k != index {
                for (c, col) in columns.iter().enumerate() {
                    let (a, z) = (if k == 0 { 0 } else { c }, if k + 1 == m { 0 } else { c });
                    core.slice_mut(s![a, .., z]).assign(&col[k]);
                }
            }
            cores.push(core);
        }
        let r0 = if index == 0 { 1 } else { b };
        let r1 = if index + 1 == m { 1 } else { b };
        let mut block = Array4::zeros((r0, sizes[index], b, r1));
        for (c, col) in columns.iter().enumerate() {
            let (a, z) = (if index == 0 { 0 } else { c }, if index + 1 == m { 0 } else { c });
            block.slice_mut(s![a, .., c, z]).assign(&col[index]);
        }
        cores[index] = Array3::zeros((0, 0, 0));
        BlockTT::new(cores, block, index)
    }

    /// Shared cores; the entry at the block index is an empty placeholder.
    pub fn shared_cores(&self) -> &[Array3<f64>] {
        &self.cores
    }
}
