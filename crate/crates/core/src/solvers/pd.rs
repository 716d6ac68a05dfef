//! Primal-dual splitting on the saddle form
//! `min_x max_{psi in Omega} (1/(2 lambda)) ||Ax - y||^2 + <L x, psi>`.

use std::time::Instant;

use ndarray::{Array1, ArrayView1};

use super::{objective, project_omega, SolverConfig, SolverError, SolverTrace};
use crate::data::ProblemData;
use crate::groups::LiftingOperator;
use crate::linalg::RidgeSolver;

#[derive(Debug, Clone)]
pub struct PdSolution {
    pub x: Array1<f64>,
    pub psi: Array1<f64>,
    pub converged: bool,
    pub trace: SolverTrace,
}

pub fn pd_solve(
    problem: &ProblemData,
    lift: &LiftingOperator,
    config: &SolverConfig,
) -> Result<PdSolution, SolverError> {
    pd_solve_from(
        problem,
        lift,
        config,
        Array1::zeros(lift.n()),
        Array1::zeros(lift.p()),
    )
}

/// The iteration, from a given primal-dual pair:
///
/// ```text
/// x+   solves (lambda I + sigma A^T A) x = lambda x - lambda sigma L^T psi + sigma A^T y
/// xbar = 2 x+ - x
/// psi+ = P_Omega(psi + tau L xbar)
/// ```
///
/// stopping when `||(x+, psi+) - (x, psi)|| / (1 + ||(x, psi)||)` drops below
/// the configured tolerance. Requires `sigma tau ||L||^2 < 1`.
pub fn pd_solve_from(
    problem: &ProblemData,
    lift: &LiftingOperator,
    config: &SolverConfig,
    x0: Array1<f64>,
    psi0: Array1<f64>,
) -> Result<PdSolution, SolverError> {
    assert_eq!(x0.len(), lift.n(), "pd: x0 has wrong length");
    assert_eq!(psi0.len(), lift.p(), "pd: psi0 has wrong length");
    let op_sq = lift.op_norm_sq();
    let fallback = 0.99 / op_sq.sqrt();
    let sigma = config.sigma.unwrap_or(fallback);
    let tau = config.tau.unwrap_or(fallback);
    if sigma <= 0.0 || tau <= 0.0 {
        return Err(SolverError::NonPositiveStepSize);
    }
    let product = sigma * tau * op_sq;
    if product >= 1.0 {
        return Err(SolverError::StepSizeGuard { product });
    }

    let lambda = problem.lambda;
    // x-update matrix (lambda I + sigma A^T A) is constant: one ridge setup
    // with c = lambda / sigma and the right-hand side divided by sigma.
    let ones = Array1::ones(lift.n());
    let mut ridge = RidgeSolver::new(&problem.a, ones.view(), lambda / sigma, &config.plan)?;
    let aty = problem.a.rmatvec(problem.y.view());

    let mut x = x0;
    let mut psi = psi0;
    let mut trace = SolverTrace::default();
    let mut converged = false;
    let start = Instant::now();
    let kappa = lift.n();

    for k in 1..=config.max_iters {
        let rhs = rhs_scaled(&x, &psi, lift, &aty, lambda, sigma);
        let x_new = ridge.solve(&problem.a, rhs.view())?;
        let xbar = &x_new * 2.0 - &x;
        let mut psi_arg = lift.apply(xbar.view());
        psi_arg *= tau;
        psi_arg += &psi;
        let psi_new = project_omega(lift, psi_arg.view());

        let res = pair_residual(x.view(), psi.view(), x_new.view(), psi_new.view());
        x = x_new;
        psi = psi_new;
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

    Ok(PdSolution { x, psi, converged, trace })
}

/// `(lambda/sigma) x - lambda L^T psi + A^T y`, the x-update right-hand side
/// after dividing through by sigma.
fn rhs_scaled(
    x: &Array1<f64>,
    psi: &Array1<f64>,
    lift: &LiftingOperator,
    aty: &Array1<f64>,
    lambda: f64,
    sigma: f64,
) -> Array1<f64> {
    let mut rhs = x * (lambda / sigma);
    rhs.scaled_add(-lambda, &lift.adjoint(psi.view()));
    rhs += aty;
    rhs
}

fn pair_residual(
    x: ArrayView1<f64>,
    psi: ArrayView1<f64>,
    x_new: ArrayView1<f64>,
    psi_new: ArrayView1<f64>,
) -> f64 {
    let mut num = 0.0;
    for (a, b) in x.iter().zip(x_new) {
        num += (a - b) * (a - b);
    }
    for (a, b) in psi.iter().zip(psi_new) {
        num += (a - b) * (a - b);
    }
    let norm_sq = x.dot(&x) + psi.dot(&psi);
    num.sqrt() / (1.0 + norm_sq.sqrt())
}
