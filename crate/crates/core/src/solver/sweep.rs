use std::time::Instant;

use ndarray::Array1;
use ndarray_linalg::c64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::select::select_eigenpairs;
use super::walk::{check_convergence, Candidate, Walker};
use super::{DeltaPencil, ExplicitOperand, PhaseTimes, SolverConfig, StepRecord};
use crate::dense::{frobenius, generalized_eig, select_ritz};
use crate::error::{Error, Result};
use crate::problem::{duplicate_check, left_eigenvector_tuple, EigenTuple, MEProblem};
use crate::tt::{BlockTT, OperatorEnv, ShiftDirection};

/// Relative floor for singular values kept when the block core moves on.
const SHIFT_FLOOR: f64 = 1e-13;

/// Everything carried from one sweep step to the next.
#[derive(Debug, Clone)]
pub struct SweepState {
    pub x: BlockTT,
    pub direction: ShiftDirection,
    /// Rank-one estimates for the mode the block core sits on, from the previous step.
    pub estimates: Vec<Array1<c64>>,
    /// Converged tuples of the shifted problem, each with left vectors.
    pub found: Vec<EigenTuple>,
    pub sweep: usize,
    pub new_found_this_sweep: usize,
    pub env_m: OperatorEnv,
    pub env_0: OperatorEnv,
    rng: ChaCha8Rng,
}

impl SweepState {
    /// State around a given iterate whose frame is orthonormal at its block index.
    pub fn from_iterate(x: BlockTT, pencil: &DeltaPencil, rng: ChaCha8Rng) -> Result<Self> {
        let k = x.index();
        let env_m = OperatorEnv::build(&pencil.delta_m, x.shared_cores(), k)?;
        let env_0 = OperatorEnv::build(&pencil.delta0, x.shared_cores(), k)?;
        Ok(SweepState {
            x,
            direction: ShiftDirection::Right,
            estimates: Vec::new(),
            found: Vec::new(),
            sweep: 0,
            new_found_this_sweep: 0,
            env_m,
            env_0,
            rng,
        })
    }

    pub fn begin_sweep(&mut self, sweep: usize) {
        self.sweep = sweep;
        self.new_found_this_sweep = 0;
    }

    /// Estimates are only comparable one step ahead, so a reversal drops them.
    pub fn set_direction(&mut self, direction: ShiftDirection) {
        if direction != self.direction {
            self.estimates.clear();
        }
        self.direction = direction;
    }
}

/// Random block iterate at mode 0 with a right-orthonormal frame.
pub fn init_iterate(pencil: &DeltaPencil, config: &SolverConfig) -> Result<SweepState> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let x = BlockTT::random(&pencil.mode_sizes(), config.b, config.max_rank, &mut rng)?;
    SweepState::from_iterate(x, pencil, rng)
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Adds a converged tuple if it is new and among the `keep` smallest `|λ_m|`.
pub(super) fn admit(state: &mut SweepState, tuple: &EigenTuple, prob: &MEProblem, pencil: &DeltaPencil, config: &SolverConfig) -> Result<bool> {
    if !duplicate_check(&tuple.vectors, &state.found, &pencil.delta0, config.xi)?.accepted() {
        return Ok(false);
    }
    let keep = config.keep_found();
    let worst = state
        .found
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.lambda_m().norm().total_cmp(&b.1.lambda_m().norm()).then(a.0.cmp(&b.0)))
        .map(|(i, t)| (i, t.lambda_m().norm()));
    let slot = match worst {
        _ if state.found.len() < keep => None,
        Some((i, w)) if tuple.lambda_m().norm() < w => Some(i),
        _ => return Ok(false),
    };
    let left = match left_eigenvector_tuple(prob, tuple) {
        Ok(out) => out.tuple.vectors,
        Err(_) => return Ok(false),
    };
    let mut t = tuple.clone();
    t.left = Some(left);
    match slot {
        Some(i) => state.found[i] = t,
        None => state.found.push(t),
    }
    Ok(true)
}

/// One step of the sweep at the current block index: project, solve, check,
/// select and move the block core one mode in the state's direction.
pub fn sweep_step(
    state: &mut SweepState,
    pencil: &DeltaPencil,
    prob: &MEProblem,
    config: &SolverConfig,
) -> Result<StepRecord> {
    let start = Instant::now();
    let k = state.x.index();
    let direction = state.direction;
    let next = direction.step(k, state.x.order()).ok_or(Error::Boundary {
        mode: k,
        modes: state.x.order(),
        direction: direction.sign(),
    })?;
    let mut phases = PhaseTimes::default();
    let projected_size = state.x.local_size();

    let t = Instant::now();
    let lm = state.env_m.local(&pencil.delta_m, k)?;
    let l0 = state.env_0.local(&pencil.delta0, k)?;
    let (mm, m0) = match config.explicit {
        ExplicitOperand::Delta0 => (lm.matrix_by_columns()?, l0.matrix()?),
        ExplicitOperand::DeltaM => (lm.matrix()?, l0.matrix_by_columns()?),
    };
    phases.project_ms = ms(t);

    let t = Instant::now();
    let eig = match generalized_eig(&mm.view(), &m0.view(), false) {
        Ok(e) => Some(e),
        // an exactly singular projection yields no usable Ritz pairs this step
        Err(Error::SingularPencil(_)) => None,
        Err(e) => return Err(e),
    };
    phases.eig_ms = ms(t);

    let t = Instant::now();
    let count = 2 * config.b + state.found.len();
    let picked = eig.as_ref().map(|e| select_ritz(e, count, config.ritz_rule).indices).unwrap_or_default();
    let walker = Walker { x: &state.x, env_m: &state.env_m, env_0: &state.env_0, pencil };
    let candidates: Vec<Candidate> = picked
        .par_iter()
        .map(|&i| {
            let e = eig.as_ref().expect("indices come from a solved pencil");
            let mu = e.eigenvalues[i].value.expect("selected Ritz values are finite");
            check_convergence(&walker, prob, config, direction, mu, &e.right.column(i).to_owned())
        })
        .collect::<Vec<Result<Candidate>>>()
        .into_iter()
        .filter_map(|c| c.ok())
        .collect();
    let mut converged_new = 0;
    for c in &candidates {
        if let Some(tuple) = c.walk.converged() {
            if admit(state, tuple, prob, pencil, config)? {
                converged_new += 1;
            }
        }
    }
    state.new_found_this_sweep += converged_new;
    let selection = select_eigenpairs(&candidates, &state.estimates, config.b, config.cos_threshold, &mut state.rng);
    state.estimates = selection.next_estimates.clone();
    phases.select_ms = ms(t);

    let t = Instant::now();
    state.x.set_block_columns(&selection.columns)?;
    let floor = SHIFT_FLOOR * frobenius(&selection.columns.view());
    state.x.shift(direction, config.max_rank, config.kick, floor, &mut state.rng)?;
    let core = state.x.core(k).clone();
    state.env_m.advance(&pencil.delta_m, &core, k, next);
    state.env_0.advance(&pencil.delta0, &core, k, next);
    phases.update_ms = ms(t);

    Ok(StepRecord {
        sweep: state.sweep,
        mode: k + 1,
        direction: direction.sign(),
        projected_size,
        n_candidates: candidates.len(),
        n_selected: selection.picks.len(),
        n_matched: selection.matched(),
        n_converged_new: converged_new,
        found_total: state.found.len(),
        ranks: state.x.ranks(),
        wall_ms: ms(start),
        phases,
    })
}
