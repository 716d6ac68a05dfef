//! Variable projection on the overparameterized form: the group norm is
//! written as `min_v (||v||^2 + sum_t ||x[G_t]||^2 w_t^2 / v_t^2) / 2`, the
//! inner ridge problem in `x` is solved exactly, and gradient descent runs on
//! the reduced objective
//!
//! `f(v) = ||v||^2 / 2 + (1/2) sum_t v_t^2 ||xi[J_t]||^2 + ||Ax - y||^2 / (2 lambda)`.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};

use super::{objective, SolverConfig, SolverError, SolverTrace};
use crate::data::ProblemData;
use crate::groups::LiftingOperator;
use crate::linalg::{cholesky, pcg_solve, LinearSolverPlan, PlanKind};

/// Below this magnitude a coefficient is treated as a frozen zero group: the
/// reciprocal weight is capped instead of dividing by ~0, which pins the
/// group's private coordinates to zero in the lower solve.
const V_FLOOR: f64 = 1e-10;

/// Lower-level solution triple at fixed `v`. At the solution,
/// `lambda alpha = Ax - y`, `Lx = xi (.) v^2` blockwise, and
/// `L^T xi + A^T alpha = 0`.
#[derive(Debug, Clone)]
pub struct VarproLower {
    pub x: Array1<f64>,
    pub alpha: Array1<f64>,
    pub xi: Array1<f64>,
}

/// Caches the Gram matrix and PCG warm starts across lower solves against
/// the same problem.
#[derive(Default)]
struct LowerWorkspace {
    gram: Option<Array2<f64>>,
    warm_primal: Option<Array1<f64>>,
    warm_dual: Option<Array1<f64>>,
}

/// One lower solve: `(A^T A + lambda W) x = A^T y` with the diagonal
/// `W = L^T D_v L`, `D_v` carrying `1 / v_t^2` per block. When `m < n` the
/// equivalent m x m system `(lambda I + A W^{-1} A^T) alpha = -y` is solved
/// instead and `x = -W^{-1} A^T alpha`.
pub fn varpro_lower_solve(
    problem: &ProblemData,
    lift: &LiftingOperator,
    v: ArrayView1<f64>,
    plan: &LinearSolverPlan,
) -> Result<VarproLower, SolverError> {
    let mut ws = LowerWorkspace::default();
    lower_solve(problem, lift, v, plan, &mut ws)
}

fn lower_solve(
    problem: &ProblemData,
    lift: &LiftingOperator,
    v: ArrayView1<f64>,
    plan: &LinearSolverPlan,
    ws: &mut LowerWorkspace,
) -> Result<VarproLower, SolverError> {
    assert_eq!(v.len(), lift.num_groups(), "lower solve: v has wrong length");
    let (m, n) = (problem.m(), lift.n());
    let lambda = problem.lambda;
    let v_eff = v.mapv(|t| t.abs().max(V_FLOOR));

    let mut w_diag = Array1::zeros(n);
    for k in 0..lift.p() {
        let t = lift.row_group(k);
        let wt = lift.weight(t);
        w_diag[lift.row_col(k)] += (wt * wt) / (v_eff[t] * v_eff[t]);
    }

    let (x, alpha) = if n <= m {
        let aty = problem.a.rmatvec(problem.y.view());
        let x = match plan.resolve(m, n) {
            PlanKind::DirectCholesky | PlanKind::Auto => {
                let gram = ws.gram.get_or_insert_with(|| problem.a.gram_nn());
                let mut sys = gram.clone();
                for i in 0..n {
                    sys[(i, i)] += lambda * w_diag[i];
                }
                cholesky(&sys).map_err(SolverError::Linalg)?.solve(aty.view())
            }
            PlanKind::Pcg => {
                let precond = &problem.a.col_sq_norms() + &(&w_diag * lambda);
                let a = &problem.a;
                let apply = |p: ArrayView1<f64>| -> Array1<f64> {
                    let mut out = a.rmatvec(a.matvec(p).view());
                    out += &(&(&w_diag * lambda) * &p);
                    out
                };
                let x = pcg_solve(
                    apply,
                    precond.view(),
                    aty.view(),
                    ws.warm_primal.as_ref().map(|w| w.view()),
                    plan.tolerance,
                    plan.pcg_iter_cap(n),
                )
                .map_err(SolverError::Linalg)?;
                ws.warm_primal = Some(x.clone());
                x
            }
        };
        let alpha = problem.residual(x.view()) / lambda;
        (x, alpha)
    } else {
        let dinv = w_diag.mapv(|d| 1.0 / d);
        let neg_y = -problem.y.clone();
        let alpha = match plan.resolve(m, n) {
            PlanKind::DirectCholesky | PlanKind::Auto => {
                let mut sys = problem.a.scaled_gram_mm(dinv.view());
                for i in 0..m {
                    sys[(i, i)] += lambda;
                }
                cholesky(&sys).map_err(SolverError::Linalg)?.solve(neg_y.view())
            }
            PlanKind::Pcg => {
                let precond = problem.a.row_sq_weighted(dinv.view()) + lambda;
                let a = &problem.a;
                let apply = |p: ArrayView1<f64>| -> Array1<f64> {
                    let t = &dinv * &a.rmatvec(p);
                    let mut out = a.matvec(t.view());
                    out.scaled_add(lambda, &p.to_owned());
                    out
                };
                let alpha = pcg_solve(
                    apply,
                    precond.view(),
                    neg_y.view(),
                    ws.warm_dual.as_ref().map(|w| w.view()),
                    plan.tolerance,
                    plan.pcg_iter_cap(m),
                )
                .map_err(SolverError::Linalg)?;
                ws.warm_dual = Some(alpha.clone());
                alpha
            }
        };
        let x = -(&dinv * &problem.a.rmatvec(alpha.view()));
        (x, alpha)
    };

    let mut xi = lift.apply(x.view());
    for k in 0..lift.p() {
        let ve = v_eff[lift.row_group(k)];
        xi[k] /= ve * ve;
    }
    Ok(VarproLower { x, alpha, xi })
}

/// `grad f(v) = v - v (.) (||xi[J_t]||^2)_t` at a lower-level solution.
pub fn varpro_gradient(
    lift: &LiftingOperator,
    v: ArrayView1<f64>,
    xi: ArrayView1<f64>,
) -> Array1<f64> {
    let norms = lift.block_norms(xi);
    Array1::from_shape_fn(v.len(), |t| v[t] * (1.0 - norms[t] * norms[t]))
}

/// Reduced objective at `v` given its lower solve.
fn upper_value(
    problem: &ProblemData,
    lift: &LiftingOperator,
    v: ArrayView1<f64>,
    lower: &VarproLower,
) -> f64 {
    let norms = lift.block_norms(lower.xi.view());
    let mut f = 0.5 * v.dot(&v);
    for (t, &nrm) in norms.iter().enumerate() {
        let ve = v[t].abs().max(V_FLOOR);
        f += 0.5 * ve * ve * nrm * nrm;
    }
    f + problem.data_fit(lower.x.view())
}

#[derive(Debug, Clone)]
pub struct VarproSolution {
    pub x: Array1<f64>,
    pub v: Array1<f64>,
    pub xi: Array1<f64>,
    pub alpha: Array1<f64>,
    pub converged: bool,
    pub trace: SolverTrace,
}

pub fn varpro_solve(
    problem: &ProblemData,
    lift: &LiftingOperator,
    config: &SolverConfig,
) -> Result<VarproSolution, SolverError> {
    varpro_solve_from(problem, lift, config, Array1::ones(lift.num_groups()))
}

/// Gradient descent on `f(v)` with Armijo backtracking; each trial point
/// costs one lower solve. Stops when `||grad f|| / (1 + ||v||)` drops below
/// the configured tolerance; the final lower-level `x` is returned.
pub fn varpro_solve_from(
    problem: &ProblemData,
    lift: &LiftingOperator,
    config: &SolverConfig,
    v0: Array1<f64>,
) -> Result<VarproSolution, SolverError> {
    assert_eq!(v0.len(), lift.num_groups(), "varpro: v0 has wrong length");
    let mut ws = LowerWorkspace::default();
    let mut v = v0;
    let mut lower = lower_solve(problem, lift, v.view(), &config.plan, &mut ws)?;
    let mut f_cur = upper_value(problem, lift, v.view(), &lower);
    if !f_cur.is_finite() {
        return Err(SolverError::Diverged { iter: 0 });
    }
    let mut grad = varpro_gradient(lift, v.view(), lower.xi.view());
    let mut res = grad.dot(&grad).sqrt() / (1.0 + v.dot(&v).sqrt());
    let mut converged = res <= config.stop_tol;

    let mut trace = SolverTrace::default();
    let start = Instant::now();
    let kappa = lift.n();
    let mut k = 0;
    while !converged && k < config.max_iters {
        k += 1;
        let grad_sq = grad.dot(&grad);
        let mut step = config.ls_init_step;
        let mut backtracks = 0;
        let accepted = loop {
            let v_trial = &v - &(&grad * step);
            let lower_trial = lower_solve(problem, lift, v_trial.view(), &config.plan, &mut ws)?;
            let f_trial = upper_value(problem, lift, v_trial.view(), &lower_trial);
            if f_trial.is_finite() && f_trial <= f_cur - config.ls_slope * step * grad_sq {
                break (v_trial, lower_trial, f_trial);
            }
            backtracks += 1;
            if backtracks > config.ls_max_backtracks {
                return Err(SolverError::LineSearchFailed {
                    iter: k,
                    backtracks: backtracks - 1,
                    f_cur,
                    grad_sq,
                });
            }
            step *= config.ls_shrink;
        };
        v = accepted.0;
        lower = accepted.1;
        f_cur = accepted.2;
        grad = varpro_gradient(lift, v.view(), lower.xi.view());
        res = grad.dot(&grad).sqrt() / (1.0 + v.dot(&v).sqrt());

        let obj = objective(problem, lift, lower.x.view());
        if !obj.is_finite() {
            return Err(SolverError::Diverged { iter: k });
        }
        trace.push(k, obj, res, kappa, start);
        if res <= config.stop_tol {
            converged = true;
        }
    }

    Ok(VarproSolution {
        x: lower.x,
        v,
        xi: lower.xi,
        alpha: lower.alpha,
        converged,
        trace,
    })
}

/// The overparameterized factors of the group norm at `x`:
/// `u[J_t] = (Lx)[J_t] / sqrt(||(Lx)[J_t]||)`, `v_t = sqrt(||(Lx)[J_t]||)`.
#[derive(Debug, Clone)]
pub struct HadamardFactors {
    pub u: Array1<f64>,
    pub v: Array1<f64>,
    /// `(||u||^2 + ||v||^2) / 2`, which equals the group norm of `x`.
    pub value: f64,
}

pub fn hadamard_value(lift: &LiftingOperator, x: ArrayView1<f64>) -> HadamardFactors {
    let lx = lift.apply(x);
    let norms = lift.block_norms(lx.view());
    let mut u = lx;
    let mut v = Array1::zeros(lift.num_groups());
    for t in 0..lift.num_groups() {
        let nrm = norms[t];
        if nrm == 0.0 {
            for k in lift.block(t) {
                u[k] = 0.0;
            }
        } else {
            let root = nrm.sqrt();
            v[t] = root;
            for k in lift.block(t) {
                u[k] /= root;
            }
        }
    }
    let value = 0.5 * (u.dot(&u) + v.dot(&v));
    HadamardFactors { u, v, value }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::GroupCovering;
    use crate::linalg::DesignMatrix;
    use crate::solvers::admm_solve;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(
        m: usize,
        n: usize,
        groups: Vec<Vec<usize>>,
        lambda: f64,
        seed: u64,
    ) -> (ProblemData, LiftingOperator) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((m, n), |_| rng.gen_range(-1.0..1.0));
        let y = Array1::from_shape_fn(m, |_| rng.gen_range(-1.0..1.0));
        let p = ProblemData::new(DesignMatrix::from_dense(a), y, lambda).unwrap();
        let cov = GroupCovering::with_unit_weights(n, groups).unwrap();
        (p, LiftingOperator::from_covering(&cov))
    }

    fn sliding_pairs(n: usize) -> Vec<Vec<usize>> {
        (0..n - 1).map(|i| vec![i, i + 1]).collect()
    }

    fn check_lower_identities(
        problem: &ProblemData,
        lift: &LiftingOperator,
        v: &Array1<f64>,
        lower: &VarproLower,
    ) {
        let scale = 1.0 + problem.y.dot(&problem.y).sqrt();
        // lambda alpha = Ax - y
        let r = problem.residual(lower.x.view());
        let d1 = &lower.alpha * problem.lambda - &r;
        assert!(d1.dot(&d1).sqrt() / scale < 1e-8, "residual identity");
        // Lx = xi (.) v^2 blockwise
        let lx = lift.apply(lower.x.view());
        let mut d2 = 0.0;
        for k in 0..lift.p() {
            let ve = v[lift.row_group(k)].abs().max(1e-10);
            let diff = lx[k] - lower.xi[k] * ve * ve;
            d2 += diff * diff;
        }
        assert!(d2.sqrt() / scale < 1e-8, "lifting identity");
        // L^T xi + A^T alpha = 0
        let d3 = &lift.adjoint(lower.xi.view()) + &problem.a.rmatvec(lower.alpha.view());
        assert!(d3.dot(&d3).sqrt() / scale < 1e-8, "adjoint identity");
    }

    #[test]
    fn lower_solve_identities_wide() {
        let (p, lift) = random_instance(10, 30, sliding_pairs(30), 0.5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = Array1::from_shape_fn(lift.num_groups(), |_| rng.gen_range(0.2..2.0));
        let plan = LinearSolverPlan::default();
        let lower = varpro_lower_solve(&p, &lift, v.view(), &plan).unwrap();
        check_lower_identities(&p, &lift, &v, &lower);
        // The iterative path must produce the same triple.
        let plan = LinearSolverPlan { kind: PlanKind::Pcg, tolerance: 1e-12, max_iters: None };
        let pcg = varpro_lower_solve(&p, &lift, v.view(), &plan).unwrap();
        check_lower_identities(&p, &lift, &v, &pcg);
        let dx = &pcg.x - &lower.x;
        assert!(dx.dot(&dx).sqrt() < 1e-7);
    }

    #[test]
    fn lower_solve_identities_tall() {
        let (p, lift) = random_instance(30, 10, sliding_pairs(10), 0.5, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = Array1::from_shape_fn(lift.num_groups(), |_| rng.gen_range(0.2..2.0));
        let plan = LinearSolverPlan::default();
        let lower = varpro_lower_solve(&p, &lift, v.view(), &plan).unwrap();
        check_lower_identities(&p, &lift, &v, &lower);
    }

    #[test]
    fn huge_coefficients_reach_the_ridge_limit() {
        // W ~ 1e-12, so x approaches the plain least-squares solution.
        let p = ProblemData::new(
            DesignMatrix::from_dense(Array2::eye(2)),
            array![3.0, 5.0],
            1.0,
        )
        .unwrap();
        let cov = GroupCovering::with_unit_weights(2, vec![vec![0, 1]]).unwrap();
        let lift = LiftingOperator::from_covering(&cov);
        let v = array![1e6];
        let lower =
            varpro_lower_solve(&p, &lift, v.view(), &LinearSolverPlan::default()).unwrap();
        assert_abs_diff_eq!(lower.x[0], 3.0, epsilon = 1e-5);
        assert_abs_diff_eq!(lower.x[1], 5.0, epsilon = 1e-5);
    }

    #[test]
    fn zero_observations_give_zero_triple() {
        let p = ProblemData::new(
            DesignMatrix::from_dense(Array2::eye(3)),
            Array1::zeros(3),
            0.7,
        )
        .unwrap();
        let cov = GroupCovering::with_unit_weights(3, vec![vec![0, 1], vec![1, 2]]).unwrap();
        let lift = LiftingOperator::from_covering(&cov);
        let v = array![0.5, 2.0];
        let lower =
            varpro_lower_solve(&p, &lift, v.view(), &LinearSolverPlan::default()).unwrap();
        assert_eq!(lower.x, Array1::<f64>::zeros(3));
        assert_eq!(lower.alpha, Array1::<f64>::zeros(3));
        assert_eq!(lower.xi, Array1::<f64>::zeros(4));
    }

    #[test]
    fn gradient_closed_forms() {
        let cov = GroupCovering::with_unit_weights(2, vec![vec![0], vec![1]]).unwrap();
        let lift = LiftingOperator::from_covering(&cov);
        let v = array![0.3, -1.2];
        // xi = 0: gradient is v itself.
        let g = varpro_gradient(&lift, v.view(), Array1::zeros(2).view());
        assert_eq!(g, v);
        // Unit block norms: stationary.
        let g = varpro_gradient(&lift, v.view(), array![1.0, -1.0].view());
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (p, lift) = random_instance(8, 12, sliding_pairs(12), 0.4, 9);
        let plan = LinearSolverPlan::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let v = Array1::from_shape_fn(lift.num_groups(), |_| rng.gen_range(0.3..1.5));
            let lower = varpro_lower_solve(&p, &lift, v.view(), &plan).unwrap();
            let g = varpro_gradient(&lift, v.view(), lower.xi.view());
            let scale = v.dot(&v).sqrt();
            let h = 1e-6 * scale;
            for t in 0..lift.num_groups() {
                let mut vp = v.clone();
                vp[t] += h;
                let mut vm = v.clone();
                vm[t] -= h;
                let fp = {
                    let l = varpro_lower_solve(&p, &lift, vp.view(), &plan).unwrap();
                    upper_value(&p, &lift, vp.view(), &l)
                };
                let fm = {
                    let l = varpro_lower_solve(&p, &lift, vm.view(), &plan).unwrap();
                    upper_value(&p, &lift, vm.view(), &l)
                };
                let fd = (fp - fm) / (2.0 * h);
                let denom = g[t].abs().max(1e-3);
                assert!(
                    ((g[t] - fd) / denom).abs() < 1e-5,
                    "group {t}: analytic {} vs fd {}",
                    g[t],
                    fd
                );
            }
        }
    }

    #[test]
    fn scalar_soft_threshold_optimum() {
        let p = ProblemData::new(DesignMatrix::from_dense(array![[1.0]]), array![2.0], 1.0)
            .unwrap();
        let cov = GroupCovering::with_unit_weights(1, vec![vec![0]]).unwrap();
        let lift = LiftingOperator::from_covering(&cov);
        let cfg = SolverConfig { stop_tol: 1e-12, ..Default::default() };
        // Start away from the stationary point to exercise the line search.
        let sol = varpro_solve_from(&p, &lift, &cfg, array![2.0]).unwrap();
        assert!(sol.converged);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-7);
        let obj = objective(&p, &lift, sol.x.view());
        assert_abs_diff_eq!(obj, 1.5, epsilon = 1e-9);
    }

    #[test]
    fn zero_observations_drive_v_to_zero() {
        let p = ProblemData::new(
            DesignMatrix::from_dense(Array2::eye(2)),
            Array1::zeros(2),
            1.0,
        )
        .unwrap();
        let cov = GroupCovering::with_unit_weights(2, vec![vec![0], vec![1]]).unwrap();
        let lift = LiftingOperator::from_covering(&cov);
        let sol = varpro_solve(&p, &lift, &SolverConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.x, Array1::<f64>::zeros(2));
        assert!(sol.v.iter().all(|&t| t.abs() < 1e-6));
    }

    #[test]
    fn agrees_with_admm_on_overlapping_instance() {
        let (p, lift) = random_instance(15, 40, sliding_pairs(40), 1.2, 13);
        let cfg = SolverConfig { stop_tol: 1e-8, ..Default::default() };
        let vp = varpro_solve(&p, &lift, &cfg).unwrap();
        let ad = admm_solve(&p, &lift, &cfg).unwrap();
        assert!(vp.converged && ad.converged);
        let ov = objective(&p, &lift, vp.x.view());
        let oa = objective(&p, &lift, ad.x.view());
        assert!(((ov - oa) / oa.abs()).abs() < 1e-5, "varpro {ov} vs admm {oa}");
    }

    #[test]
    fn hadamard_factorization_values() {
        let cov = GroupCovering::with_unit_weights(2, vec![vec![0, 1]]).unwrap();
        let lift = LiftingOperator::from_covering(&cov);
        // x = 0: everything zero.
        let h = hadamard_value(&lift, Array1::zeros(2).view());
        assert_eq!(h.value, 0.0);
        assert_eq!(h.u, Array1::<f64>::zeros(2));
        assert_eq!(h.v, Array1::<f64>::zeros(1));
        // ||Lx|| = 4: v = 2 and ||u||^2 / 2 = 2, so the value is 4.
        let h = hadamard_value(&lift, array![4.0, 0.0].view());
        assert_abs_diff_eq!(h.v[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(h.u.dot(&h.u), 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(h.value, 4.0, epsilon = 1e-15);
    }

    #[test]
    fn hadamard_value_equals_group_norm() {
        let cov = GroupCovering::new(
            4,
            vec![vec![0, 1, 2], vec![2, 3]],
            vec![1.0, 2.0],
        )
        .unwrap();
        let lift = LiftingOperator::from_covering(&cov);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let x = Array1::from_shape_fn(4, |_| rng.gen_range(-3.0..3.0));
            let h = hadamard_value(&lift, x.view());
            assert_abs_diff_eq!(h.value, lift.group_norm(x.view()), epsilon = 1e-12);
        }
    }
}
