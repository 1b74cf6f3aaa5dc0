//! Block-TT subspace iteration for the eigenvalue tuples with `λ_m` closest to a target.
//!
//! The m-parameter problem is equivalent to the generalized eigenproblem
//! `Δ_m x = λ_m Δ_0 x` whose eigenvectors are rank-one Kronecker products.
//! Each sweep step projects that pencil on the frame of a block tensor train,
//! solves the small pencil densely, checks Ritz pairs for convergence by
//! walking single-pair frames across all modes, and moves the block core on.

mod select;
mod sweep;
mod walk;

use std::io::Write;
use std::time::Instant;

use ndarray::{Array1, Array3};
use ndarray_linalg::c64;
use serde::{Deserialize, Serialize};

use crate::delta::{build_delta0, build_delta_i, DELTA_ROUND_TOL};
use crate::dense::RitzRule;
use crate::error::{Error, Result};
use crate::problem::{residual_tuple, EigenTuple, MEProblem};
use crate::tt::{write_vector, ShiftDirection, TTOperator, TTVector};

pub use select::{select_eigenpairs, Pick, Selection};
pub use sweep::{init_iterate, sweep_step, SweepState};
pub use walk::{check_convergence, estimate_residual, rank_one_factor, Candidate, Hop, RankOne, WalkOutcome, Walker};

/// Which projected operand is assembled by direct contraction; the other is
/// obtained by applying the local operator to unit vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExplicitOperand {
    #[default]
    Delta0,
    DeltaM,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Block size `b`.
    pub b: usize,
    /// Random directions added at every block shift.
    pub kick: usize,
    /// Rank cap `r` of the truncated block shift.
    pub max_rank: usize,
    /// Full sweeps (left-to-right then right-to-left).
    pub sweeps: usize,
    /// Tolerance on the ∞-norm residual of a tuple.
    pub eps: f64,
    /// Tolerance on projected residual estimates during the convergence walk.
    pub eps1: f64,
    /// Duplicate threshold.
    pub xi: f64,
    pub cos_threshold: f64,
    /// Found tuples kept; `None` means `4b`.
    pub keep: Option<usize>,
    /// `None` leaves the Δ-operators unrounded.
    pub delta_round_tol: Option<f64>,
    pub seed: u64,
    pub ritz_rule: RitzRule,
    /// Stop after this many consecutive sweeps without a new tuple, once one was found.
    pub no_progress_window: usize,
    pub explicit: ExplicitOperand,
    pub trqi_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            b: 5,
            kick: 1,
            max_rank: 6,
            sweeps: 20,
            eps: 1e-6,
            eps1: 1e-8,
            xi: 1e-4,
            cos_threshold: 0.99,
            keep: None,
            delta_round_tol: Some(DELTA_ROUND_TOL),
            seed: 0,
            ritz_rule: RitzRule::PositiveRealPart,
            no_progress_window: 5,
            explicit: ExplicitOperand::Delta0,
            trqi_max_iter: 10,
        }
    }
}

impl SolverConfig {
    /// Defaults with block size `b` and rank cap `b + 1`.
    pub fn with_block_size(b: usize) -> Self {
        SolverConfig { b, max_rank: b + 1, ..Default::default() }
    }

    pub fn keep_found(&self) -> usize {
        self.keep.unwrap_or(4 * self.b)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("solver config: {what}")));
        if self.b == 0 {
            return bad("b must be at least 1");
        }
        if self.max_rank < self.b {
            return bad("max_rank must be at least b");
        }
        if self.sweeps == 0 {
            return bad("need at least one sweep");
        }
        if !(self.eps > 0.0 && self.eps1 > 0.0) {
            return bad("eps and eps1 must be positive");
        }
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return bad("xi must lie in (0, 1]");
        }
        if !(self.cos_threshold > 0.0 && self.cos_threshold <= 1.0) {
            return bad("cos_threshold must lie in (0, 1]");
        }
        if self.keep_found() == 0 {
            return bad("keep must be positive");
        }
        if matches!(self.delta_round_tol, Some(t) if !(t >= 0.0)) {
            return bad("delta_round_tol must be non-negative");
        }
        Ok(())
    }
}

/// `(Δ_m, Δ_0)` in TT form.
#[derive(Debug, Clone)]
pub struct DeltaPencil {
    pub delta_m: TTOperator,
    pub delta0: TTOperator,
}

impl DeltaPencil {
    pub fn build(prob: &MEProblem, round_tol: Option<f64>) -> Result<Self> {
        Ok(DeltaPencil {
            delta_m: build_delta_i(prob, prob.m(), round_tol)?,
            delta0: build_delta0(prob, round_tol)?,
        })
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.delta0.mode_sizes()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub project_ms: f64,
    pub eig_ms: f64,
    pub select_ms: f64,
    pub update_ms: f64,
}

impl PhaseTimes {
    fn add(&mut self, other: &PhaseTimes) {
        self.project_ms += other.project_ms;
        self.eig_ms += other.eig_ms;
        self.select_ms += other.select_ms;
        self.update_ms += other.update_ms;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub sweep: usize,
    /// 1-based mode of the block core.
    pub mode: usize,
    pub direction: i8,
    pub projected_size: usize,
    pub n_candidates: usize,
    pub n_selected: usize,
    pub n_matched: usize,
    pub n_converged_new: usize,
    pub found_total: usize,
    /// Ranks of the iterate after the shift.
    pub ranks: Vec<usize>,
    pub wall_ms: f64,
    pub phases: PhaseTimes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub new_found: usize,
    pub found_total: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoundRecord {
    /// `[re, im]` per parameter.
    pub lambda: Vec<[f64; 2]>,
    pub residual: f64,
    /// Position of the tuple in the vector sidecar.
    pub vectors_ref: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub m: usize,
    pub sizes: Vec<usize>,
    pub target: f64,
    pub config: SolverConfig,
    pub delta0_ranks: Vec<usize>,
    pub delta_m_ranks: Vec<usize>,
    pub steps: Vec<StepRecord>,
    pub sweeps: Vec<SweepRecord>,
    pub stop_reason: String,
    pub totals: PhaseTimes,
    pub total_ms: f64,
    pub tuples: Vec<FoundRecord>,
    pub warnings: Vec<String>,
}

impl RunReport {
    /// The report with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> RunReport {
        let mut r = self.clone();
        r.total_ms = 0.0;
        r.totals = PhaseTimes::default();
        for s in &mut r.steps {
            s.wall_ms = 0.0;
            s.phases = PhaseTimes::default();
        }
        for s in &mut r.sweeps {
            s.wall_ms = 0.0;
        }
        r
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    /// Sorted by `|λ_m − target|`.
    pub tuples: Vec<EigenTuple>,
    pub report: RunReport,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs the sweeps on `prob` shifted so that `target` moves to zero.
pub fn solve(prob: &MEProblem, target: f64, config: &SolverConfig) -> Result<SolveOutput> {
    config.validate()?;
    let m = prob.m();
    if m < 2 {
        return Err(Error::invalid("the sweep needs at least two parameters"));
    }
    let start = Instant::now();
    let shifted = prob.apply_shift(-target);
    let pencil = DeltaPencil::build(&shifted, config.delta_round_tol)?;
    let mut state = init_iterate(&pencil, config)?;
    let mut steps = Vec::new();
    let mut sweeps = Vec::new();
    let mut idle = 0;
    let mut stop_reason = "sweep-limit".to_string();
    for sweep in 0..config.sweeps {
        let t = Instant::now();
        state.begin_sweep(sweep);
        for direction in [ShiftDirection::Right, ShiftDirection::Left] {
            state.set_direction(direction);
            for _ in 0..m - 1 {
                steps.push(sweep_step(&mut state, &pencil, &shifted, config)?);
            }
        }
        let new_found = state.new_found_this_sweep;
        sweeps.push(SweepRecord { sweep, new_found, found_total: state.found.len(), wall_ms: ms(t) });
        idle = if new_found > 0 { 0 } else { idle + 1 };
        if !state.found.is_empty() && idle >= config.no_progress_window {
            stop_reason = "no-progress".into();
            break;
        }
    }

    let mut tuples = Vec::with_capacity(state.found.len());
    for t in &state.found {
        let mut lambda = t.lambda.clone();
        lambda[m - 1] += target;
        let (_, residual) = residual_tuple(prob, &lambda, &t.vectors)?;
        tuples.push(EigenTuple { lambda, vectors: t.vectors.clone(), residual, left: t.left.clone() });
    }
    let key = |t: &EigenTuple| (t.lambda_m() - target).norm();
    tuples.sort_by(|a, b| key(a).total_cmp(&key(b)).then(a.lambda_m().re.total_cmp(&b.lambda_m().re)));

    let mut totals = PhaseTimes::default();
    for s in &steps {
        totals.add(&s.phases);
    }
    let mut warnings = Vec::new();
    if tuples.is_empty() {
        warnings.push(format!("no eigenvalue tuple reached residual {:e}", config.eps));
    }
    let report = RunReport {
        m,
        sizes: prob.sizes(),
        target,
        config: config.clone(),
        delta0_ranks: pencil.delta0.ranks(),
        delta_m_ranks: pencil.delta_m.ranks(),
        steps,
        sweeps,
        stop_reason,
        totals,
        total_ms: ms(start),
        tuples: tuples
            .iter()
            .enumerate()
            .map(|(i, t)| FoundRecord {
                lambda: t.lambda.iter().map(|l| [l.re, l.im]).collect(),
                residual: t.residual,
                vectors_ref: i,
            })
            .collect(),
        warnings,
    };
    Ok(SolveOutput { tuples, report })
}

/// Real and imaginary parts of `x_1 ⊗ ⋯ ⊗ x_m` as two trains of rank at most 2.
///
/// Each complex factor acts as the real 2×2 block `[[re, −im], [im, re]]`.
pub fn complex_rank_one_trains(factors: &[Array1<c64>]) -> Result<(TTVector, TTVector)> {
    let m = factors.len();
    if m == 0 {
        return Err(Error::invalid("no factors"));
    }
    let block = |x: &Array1<c64>| {
        let n = x.len();
        let mut g = Array3::zeros((2, n, 2));
        for (i, z) in x.iter().enumerate() {
            g[[0, i, 0]] = z.re;
            g[[0, i, 1]] = -z.im;
            g[[1, i, 0]] = z.im;
            g[[1, i, 1]] = z.re;
        }
        g
    };
    let part = |row: usize| -> Result<TTVector> {
        if m == 1 {
            let g = block(&factors[0]);
            return TTVector::new(vec![g.slice(ndarray::s![row..row + 1, .., 0..1]).to_owned()]);
        }
        let mut cores: Vec<Array3<f64>> = factors.iter().map(block).collect();
        cores[0] = cores[0].slice(ndarray::s![row..row + 1, .., ..]).to_owned();
        cores[m - 1] = cores[m - 1].slice(ndarray::s![.., .., 0..1]).to_owned();
        TTVector::new(cores)
    };
    Ok((part(0)?, part(1)?))
}

/// Writes each tuple's eigenvector as two concatenated binary train records (real, imaginary).
pub fn write_vector_sidecar<W: Write>(w: &mut W, tuples: &[EigenTuple]) -> Result<()> {
    for t in tuples {
        let (re, im) = complex_rank_one_trains(&t.vectors)?;
        write_vector(w, &re)?;
        write_vector(w, &im)?;
    }
    Ok(())
}
