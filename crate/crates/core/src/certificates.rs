//! Zero-group certificates and related diagnostics.
//!
//! The gradient-based certificate `beta = -(1/lambda) A^T (Ax - y)` certifies
//! `x*[G_t] = 0` whenever `||beta[G_t]|| < w_t`; it is conservative under
//! overlap. The dual certificate built from the minimal-norm solution of
//! `Lhat^T u = beta` (active blocks overwritten with the unit group
//! directions) certifies zeros via `||u[J_t]|| < 1` and is never weaker:
//! `||u[J_t]|| <= ||beta[G_t]|| / w_t` for every inactive group.

use ndarray::{Array1, ArrayView1};
use thiserror::Error;

use crate::data::ProblemData;
use crate::groups::{GroupCovering, LiftingOperator, SupportState};
use crate::solvers::prox_group_norm;

#[derive(Debug, Error)]
pub enum CertificateError {
    #[error("group {group} is marked active but x[G_t] has zero norm")]
    InconsistentSupport { group: usize },
    #[error("measure requires a nonoverlapping partition (p = {p}, n = {n})")]
    OverlappingUnsupported { p: usize, n: usize },
}

/// Threshold comparisons: a norm exactly at the threshold counts as
/// violating (kept), never as certified zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionMode {
    /// Certified-zero groups, strict inequality.
    Strict,
    /// Candidate (kept) groups, at-or-above threshold.
    Violating,
    /// Certified-zero with a relative guard band: `norm < threshold * (1 -
    /// margin)`. At an active group of an inexact solution the norm sits at
    /// the threshold up to solve error, so plain `Strict` flips a coin there;
    /// the band keeps boundary groups out of the certified set.
    Guarded { margin: f64 },
}

/// `beta = -(1/lambda) A^T (Ax - y)`.
pub fn lasso_certificate(problem: &ProblemData, x: ArrayView1<f64>) -> Array1<f64> {
    let r = problem.residual(x);
    problem.a.rmatvec(r.view()) * (-1.0 / problem.lambda)
}

/// Minimal-norm solution of `Lhat^T u = beta` over the range of `Lhat`:
/// `u = Lhat (Lhat^T Lhat)^{-1} beta`, computed matrix-free through the
/// diagonal effective Gram matrix.
pub fn min_norm_dual(
    lift: &LiftingOperator,
    state: &SupportState,
    beta: ArrayView1<f64>,
) -> Array1<f64> {
    let d = lift.effective_gram_diag(state);
    let scaled = &beta.to_owned() / &d;
    lift.effective_apply(state, scaled.view())
}

/// The dual certificate at `x`: minimal-norm dual on inactive blocks, exact
/// unit group directions on active blocks.
#[derive(Debug, Clone)]
pub struct OgnCertificate {
    /// The lifted dual vector, length `p`.
    pub u: Array1<f64>,
    /// `||u[J_t]||` per group; exactly 1 on active groups by construction.
    pub block_norms: Array1<f64>,
}

pub fn ogn_certificate(
    lift: &LiftingOperator,
    state: &SupportState,
    beta: ArrayView1<f64>,
    x: ArrayView1<f64>,
) -> Result<OgnCertificate, CertificateError> {
    let mut u = min_norm_dual(lift, state, beta);
    for &t in state.active_groups() {
        let rows = lift.block(t);
        let mut norm_sq = 0.0;
        for k in rows.clone() {
            let v = x[lift.row_col(k)];
            norm_sq += v * v;
        }
        if norm_sq == 0.0 {
            return Err(CertificateError::InconsistentSupport { group: t });
        }
        let norm = norm_sq.sqrt();
        for k in rows {
            u[k] = x[lift.row_col(k)] / norm;
        }
    }
    let mut block_norms = lift.block_norms(u.view());
    for &t in state.active_groups() {
        block_norms[t] = 1.0;
    }
    Ok(OgnCertificate { u, block_norms })
}

/// Groups classified by `||beta[G_t]||` against `w_t`.
pub fn detect_zero_groups_lasso(
    beta: ArrayView1<f64>,
    lift: &LiftingOperator,
    mode: DetectionMode,
) -> Vec<usize> {
    let norms = lift.group_vec_norms(beta);
    classify(norms.view(), lift.weights(), mode)
}

/// Groups classified by `||u[J_t]||` against 1.
pub fn detect_zero_groups_ogn(cert: &OgnCertificate, mode: DetectionMode) -> Vec<usize> {
    let ones = vec![1.0; cert.block_norms.len()];
    classify(cert.block_norms.view(), &ones, mode)
}

fn classify(norms: ArrayView1<f64>, thresholds: &[f64], mode: DetectionMode) -> Vec<usize> {
    let mut out = Vec::new();
    for (t, (&nrm, &th)) in norms.iter().zip(thresholds).enumerate() {
        let keep = match mode {
            DetectionMode::Strict => nrm < th,
            DetectionMode::Violating => nrm >= th,
            DetectionMode::Guarded { margin } => nrm < th * (1.0 - margin),
        };
        if keep {
            out.push(t);
        }
    }
    out
}

/// The `k` groups most correlated with the observations:
/// `score_t = ||A[G_t]^T y|| / (||A[G_t]||_F ||y||)`, zero when the
/// denominator vanishes; ties broken toward the smaller group index.
/// Returned sorted ascending.
pub fn correlation_init(problem: &ProblemData, cov: &GroupCovering, k: usize) -> Vec<usize> {
    assert!(
        k >= 1 && k <= cov.num_groups(),
        "correlation init: k must be in 1..=N"
    );
    let corr = problem.a.rmatvec(problem.y.view());
    let col_sq = problem.a.col_sq_norms();
    let y_norm = problem.y.dot(&problem.y).sqrt();
    let mut scored: Vec<(usize, f64)> = (0..cov.num_groups())
        .map(|t| {
            let mut num = 0.0;
            let mut den = 0.0;
            for &i in cov.group(t) {
                num += corr[i] * corr[i];
                den += col_sq[i];
            }
            let den = den.sqrt() * y_norm;
            let score = if den > 0.0 { num.sqrt() / den } else { 0.0 };
            (t, score)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut picked: Vec<usize> = scored.into_iter().take(k).map(|(t, _)| t).collect();
    picked.sort_unstable();
    picked
}

/// Relative fixed-point residual of the prox optimality condition,
///
/// `eta = ||Lx - prox(Lx - (1/lambda) L^{-T} A^T (Ax-y))|| /
///        (1 + ||Lx||_{1,2} + ||Ax-y||)`,
///
/// defined only when the covering is a partition (then `p = n` and `L` is
/// invertible with `L^{-T} = L D^{-1}`, `D = L^T L`).
pub fn kkt_residual(
    problem: &ProblemData,
    lift: &LiftingOperator,
    x: ArrayView1<f64>,
) -> Result<f64, CertificateError> {
    if lift.p() != lift.n() {
        return Err(CertificateError::OverlappingUnsupported { p: lift.p(), n: lift.n() });
    }
    let z = lift.apply(x);
    let r = problem.residual(x);
    let g = problem.a.rmatvec(r.view());
    let scaled = &g / &(lift.gram_diag() * problem.lambda);
    let arg = &z - &lift.apply(scaled.view());
    let prox = prox_group_norm(lift, arg.view(), 1.0);
    let num = (&z - &prox).dot(&(&z - &prox)).sqrt();
    let scale = 1.0 + lift.block_norms(z.view()).sum() + r.dot(&r).sqrt();
    Ok(num / scale)
}
