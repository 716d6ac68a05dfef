//! ADMM on the split `min_{x, z} (1/(2 lambda)) ||Ax - y||^2 + ||z||_{1,2}`
//! subject to `z = Lx`.

use std::time::Instant;

use ndarray::Array1;

use super::{objective, prox_group_norm, SolverConfig, SolverError, SolverTrace};
use crate::data::ProblemData;
use crate::groups::LiftingOperator;
use crate::linalg::RidgeSolver;

#[derive(Debug, Clone)]
pub struct AdmmSolution {
    pub x: Array1<f64>,
    /// Lifted split variable; its zero blocks are exact.
    pub z: Array1<f64>,
    /// Scaled dual multiplier for the constraint `z = Lx`.
    pub psi: Array1<f64>,
    pub converged: bool,
    pub trace: SolverTrace,
}

pub fn admm_solve(
    problem: &ProblemData,
    lift: &LiftingOperator,
    config: &SolverConfig,
) -> Result<AdmmSolution, SolverError> {
    admm_solve_from(
        problem,
        lift,
        config,
        Array1::zeros(lift.p()),
        Array1::zeros(lift.p()),
    )
}

/// The iteration, from given `(z, psi)`:
///
/// ```text
/// x    solves (A^T A + lambda tau L^T L) x = A^T y + lambda L^T (psi + tau z)
/// z+   = prox_{(1/tau) ||.||_{1,2}}(L x - psi / tau)
/// psi+ = psi + tau (z+ - L x)
/// ```
///
/// `L^T L` is diagonal, so the x-update matrix is a ridge system. Stops when
/// `max(||z - Lx||, tau ||L^T (z+ - z)||) / (1 + ||Lx||)` drops below the
/// configured tolerance. Default `tau = 1`.
pub fn admm_solve_from(
    problem: &ProblemData,
    lift: &LiftingOperator,
    config: &SolverConfig,
    z0: Array1<f64>,
    psi0: Array1<f64>,
) -> Result<AdmmSolution, SolverError> {
    assert_eq!(z0.len(), lift.p(), "admm: z0 has wrong length");
    assert_eq!(psi0.len(), lift.p(), "admm: psi0 has wrong length");
    let tau = config.tau.unwrap_or(1.0);
    if tau <= 0.0 {
        return Err(SolverError::NonPositiveStepSize);
    }

    let lambda = problem.lambda;
    let mut ridge =
        RidgeSolver::new(&problem.a, lift.gram_diag().view(), lambda * tau, &config.plan)?;
    let aty = problem.a.rmatvec(problem.y.view());

    let mut z = z0;
    let mut psi = psi0;
    let mut x = Array1::zeros(lift.n());
    let mut trace = SolverTrace::default();
    let mut converged = false;
    let start = Instant::now();
    let kappa = lift.n();

    for k in 1..=config.max_iters {
        let mut dual_arg = &z * tau;
        dual_arg += &psi;
        let mut rhs = lift.adjoint(dual_arg.view());
        rhs *= lambda;
        rhs += &aty;
        x = ridge.solve(&problem.a, rhs.view())?;

        let lx = lift.apply(x.view());
        let mut prox_arg = lx.clone();
        prox_arg.scaled_add(-1.0 / tau, &psi);
        let z_new = prox_group_norm(lift, prox_arg.view(), 1.0 / tau);

        let mut constraint = z_new.clone();
        constraint -= &lx;
        psi.scaled_add(tau, &constraint);

        let primal = constraint.dot(&constraint).sqrt();
        let dz = &z_new - &z;
        let dual_vec = lift.adjoint(dz.view());
        let dual = tau * dual_vec.dot(&dual_vec).sqrt();
        let res = primal.max(dual) / (1.0 + lx.dot(&lx).sqrt());
        z = z_new;

        let obj = objective(problem, lift, x.view());
        if !obj.is_finite() {
            return Err(SolverError::Diverged { iter: k });
        }
        trace.push(k, obj, res, kappa, start);
        if res <= config.stop_tol {
            converged = true;
            break;
        }
    }

    Ok(AdmmSolution { x, z, psi, converged, trace })
}
