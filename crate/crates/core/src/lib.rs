//! Overlapping group LASSO toolkit: lifting-operator calculus, zero-group
//! certificates, three full-problem solvers, and an adaptive outer loop that
//! shrinks the working problem to the estimated support between solves.
//!
//! The problem throughout is
//!
//! ```text
//! min_x  Phi(x) = (1/(2 lambda)) ||Ax - y||^2 + sum_t w_t ||x[G_t]||
//! ```
//!
//! over a covering `{G_t}` of the coordinates that may overlap. The lifting
//! operator `L` turns the regularizer into a plain blockwise norm `||Lx||_{1,2}`
//! with orthogonal columns, which every solver here exploits.

pub mod adadrops;
pub mod certificates;
pub mod data;
pub mod groups;
pub mod linalg;
pub mod solvers;

pub use adadrops::{
    adadrops_run, build_restricted, support_update, AdaDropsConfig, AdaDropsError,
    AdaDropsResult, RestrictedProblem, RoundRecord, SupportCertificate,
};
pub use certificates::{
    correlation_init, detect_zero_groups_lasso, detect_zero_groups_ogn, kkt_residual,
    lasso_certificate, min_norm_dual, ogn_certificate, CertificateError, DetectionMode,
    OgnCertificate,
};
pub use data::{
    gen_gaussian, gen_multitask, gen_sliding, gen_tree_groups, lambda_max_grouped,
    lambda_max_l1, multitask_to_group, parse_libsvm, read_groups, tune_lambda, write_groups,
    write_libsvm, DataError, ProblemData, SyntheticSpec,
};
pub use groups::{GroupCovering, GroupError, LiftingOperator, SupportState};
pub use linalg::{DesignMatrix, LinalgError, LinearSolverPlan, PlanKind};
pub use solvers::{
    admm_solve, hadamard_value, objective, pd_solve, project_omega, prox_group_norm,
    solve_with, varpro_gradient, varpro_lower_solve, varpro_solve, SolveResult, SolverConfig,
    SolverError, SolverKind, SolverState, SolverTrace, TraceRecord,
};
