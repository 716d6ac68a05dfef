//! The three baseline algorithms on the full problem and their shared
//! kernels: group prox, ball projection, objective, and trace recording.
//!
//! All solvers minimize `Phi(x) = (1/(2 lambda)) ||Ax - y||^2 + ||Lx||_{1,2}`
//! and stop on a solver-native relative residual. Reaching the iteration cap
//! is not an error; the returned `converged` flag reports it.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ProblemData;
use crate::groups::LiftingOperator;
use crate::linalg::{LinalgError, LinearSolverPlan};

mod admm;
mod pd;
mod varpro;

pub use admm::{admm_solve, admm_solve_from, AdmmSolution};
pub use pd::{pd_solve, pd_solve_from, PdSolution};
pub use varpro::{
    hadamard_value, varpro_gradient, varpro_lower_solve, varpro_solve, varpro_solve_from,
    HadamardFactors, VarproLower, VarproSolution,
};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("stepsizes must satisfy sigma * tau * ||L||^2 < 1 (got {product:.6})")]
    StepSizeGuard { product: f64 },
    #[error("stepsizes must be positive")]
    NonPositiveStepSize,
    #[error("objective became non-finite at iteration {iter}")]
    Diverged { iter: usize },
    #[error(
        "line search failed after {backtracks} backtracks at upper iteration {iter} \
         (f = {f_cur:.6e}, ||grad||^2 = {grad_sq:.6e})"
    )]
    LineSearchFailed { iter: usize, backtracks: usize, f_cur: f64, grad_sq: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Shared solver knobs. `sigma`/`tau` default per algorithm when `None`:
/// primal-dual uses `sigma = tau = 0.99 / ||L||`, ADMM uses `tau = 1`.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Threshold on the solver-native relative residual.
    pub stop_tol: f64,
    pub sigma: Option<f64>,
    pub tau: Option<f64>,
    /// Armijo line-search controls for the bilevel solver.
    pub ls_init_step: f64,
    pub ls_shrink: f64,
    pub ls_slope: f64,
    pub ls_max_backtracks: usize,
    pub plan: LinearSolverPlan,
    /// Recorded in reports; the solvers themselves are deterministic.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 100_000,
            stop_tol: 1e-9,
            sigma: None,
            tau: None,
            ls_init_step: 1.0,
            ls_shrink: 0.5,
            ls_slope: 1e-4,
            ls_max_backtracks: 60,
            plan: LinearSolverPlan::default(),
            seed: 0,
        }
    }
}

/// One iterate: objective, native residual, active dimension, elapsed
/// seconds since the solve started.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub obj: f64,
    pub res: f64,
    pub kappa: usize,
    pub t: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
}

impl SolverTrace {
    pub fn push(&mut self, iter: usize, obj: f64, res: f64, kappa: usize, start: Instant) {
        self.records
            .push(TraceRecord { iter, obj, res, kappa, t: start.elapsed().as_secs_f64() });
    }

    pub fn last_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.obj)
    }

    /// JSON lines, one record per iteration.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// `Phi(x) = (1/(2 lambda)) ||Ax - y||^2 + sum_t w_t ||x[G_t]||`.
pub fn objective(problem: &ProblemData, lift: &LiftingOperator, x: ArrayView1<f64>) -> f64 {
    problem.data_fit(x) + lift.group_norm(x)
}

/// Blockwise prox of `gamma ||.||_{1,2}`: each block shrinks radially by
/// `max(0, 1 - gamma / ||z[J_t]||)`, reaching exact zero at or below gamma.
pub fn prox_group_norm(lift: &LiftingOperator, z: ArrayView1<f64>, gamma: f64) -> Array1<f64> {
    assert!(gamma >= 0.0, "prox: gamma must be nonnegative");
    let mut out = z.to_owned();
    for t in 0..lift.num_groups() {
        let rows = lift.block(t);
        let mut norm_sq = 0.0;
        for k in rows.clone() {
            norm_sq += z[k] * z[k];
        }
        let norm = norm_sq.sqrt();
        if norm <= gamma {
            for k in rows {
                out[k] = 0.0;
            }
        } else {
            let scale = 1.0 - gamma / norm;
            for k in rows {
                out[k] *= scale;
            }
        }
    }
    out
}

/// Projection onto `Omega = {psi : ||psi[J_t]|| <= 1 for all t}`: blocks above
/// unit norm are scaled back to the sphere, the rest pass through.
pub fn project_omega(lift: &LiftingOperator, psi: ArrayView1<f64>) -> Array1<f64> {
    let mut out = psi.to_owned();
    for t in 0..lift.num_groups() {
        let rows = lift.block(t);
        let mut norm_sq = 0.0;
        for k in rows.clone() {
            norm_sq += psi[k] * psi[k];
        }
        let norm = norm_sq.sqrt();
        if norm > 1.0 {
            for k in rows {
                out[k] /= norm;
            }
        }
    }
    out
}

/// Solver selector for call sites that take the algorithm as data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Pd,
    Admm,
    Varpro,
}

impl std::str::FromStr for SolverKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pd" => Ok(SolverKind::Pd),
            "admm" => Ok(SolverKind::Admm),
            "varpro" => Ok(SolverKind::Varpro),
            other => Err(format!("unknown solver '{other}' (expected pd, admm, or varpro)")),
        }
    }
}

/// Algorithm-specific iterate carried across restarts of the same problem
/// shape; lifted components are in the row space of the current `L`.
#[derive(Debug, Clone)]
pub enum SolverState {
    Pd { x: Array1<f64>, psi: Array1<f64> },
    Admm { z: Array1<f64>, psi: Array1<f64> },
    Varpro { v: Array1<f64> },
}

/// Uniform result for the kind-dispatched entry point.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x: Array1<f64>,
    pub converged: bool,
    pub trace: SolverTrace,
    /// Final internal state, reusable as a warm start.
    pub state: SolverState,
}

/// Runs the selected algorithm, optionally from a previous state.
pub fn solve_with(
    problem: &ProblemData,
    lift: &LiftingOperator,
    kind: SolverKind,
    config: &SolverConfig,
    warm: Option<SolverState>,
) -> Result<SolveResult, SolverError> {
    match kind {
        SolverKind::Pd => {
            let (x0, psi0) = match warm {
                Some(SolverState::Pd { x, psi }) => (x, psi),
                _ => (Array1::zeros(lift.n()), Array1::zeros(lift.p())),
            };
            let sol = pd_solve_from(problem, lift, config, x0, psi0)?;
            Ok(SolveResult {
                converged: sol.converged,
                trace: sol.trace,
                state: SolverState::Pd { x: sol.x.clone(), psi: sol.psi },
                x: sol.x,
            })
        }
        SolverKind::Admm => {
            let (z0, psi0) = match warm {
                Some(SolverState::Admm { z, psi }) => (z, psi),
                _ => (Array1::zeros(lift.p()), Array1::zeros(lift.p())),
            };
            let sol = admm_solve_from(problem, lift, config, z0, psi0)?;
            Ok(SolveResult {
                converged: sol.converged,
                trace: sol.trace,
                state: SolverState::Admm { z: sol.z, psi: sol.psi },
                x: sol.x,
            })
        }
        SolverKind::Varpro => {
            let v0 = match warm {
                Some(SolverState::Varpro { v }) => v,
                _ => Array1::ones(lift.num_groups()),
            };
            let sol = varpro_solve_from(problem, lift, config, v0)?;
            Ok(SolveResult {
                converged: sol.converged,
                trace: sol.trace,
                state: SolverState::Varpro { v: sol.v },
                x: sol.x,
            })
        }
    }
}
