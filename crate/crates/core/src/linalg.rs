//! Dense/sparse kernels shared by the solvers: design-matrix products,
//! Cholesky factorization, preconditioned conjugate gradient, and the
//! Sherman-Morrison-Woodbury reduction for ridge-type systems
//! `(A^T A + c D) x = r` with diagonal `D`.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite: pivot {pivot:.3e} at index {index}")]
    NotSpd { index: usize, pivot: f64 },
    #[error("pcg did not converge within {iters} iterations (relative residual {rel_residual:.3e})")]
    PcgNoConvergence { iters: usize, rel_residual: f64 },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
}

/// Compressed sparse column storage.
#[derive(Debug, Clone)]
pub struct CscMatrix {
    m: usize,
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(m: usize, n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut per_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            assert!(i < m && j < n, "triplet out of range");
            per_col[j].push((i, v));
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for col in per_col.iter_mut() {
            col.sort_unstable_by_key(|&(i, _)| i);
            let mut last: Option<usize> = None;
            for &(i, v) in col.iter() {
                if last == Some(i) {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(i);
                    values.push(v);
                    last = Some(i);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self { m, n, col_ptr, row_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }
}

/// The measurement operator `A`, dense or sparse.
#[derive(Debug, Clone)]
pub enum DesignMatrix {
    Dense(Array2<f64>),
    Sparse(CscMatrix),
}

impl DesignMatrix {
    pub fn from_dense(a: Array2<f64>) -> Self {
        DesignMatrix::Dense(a)
    }

    /// Chooses storage from triplets: sparse below the density threshold.
    pub fn from_triplets(
        m: usize,
        n: usize,
        triplets: &[(usize, usize, f64)],
        sparse_density_threshold: f64,
    ) -> Self {
        let density = triplets.len() as f64 / (m.max(1) * n.max(1)) as f64;
        if density < sparse_density_threshold {
            DesignMatrix::Sparse(CscMatrix::from_triplets(m, n, triplets))
        } else {
            let mut a = Array2::zeros((m, n));
            for &(i, j, v) in triplets {
                a[(i, j)] += v;
            }
            DesignMatrix::Dense(a)
        }
    }

    pub fn m(&self) -> usize {
        match self {
            DesignMatrix::Dense(a) => a.nrows(),
            DesignMatrix::Sparse(a) => a.m,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            DesignMatrix::Dense(a) => a.ncols(),
            DesignMatrix::Sparse(a) => a.n,
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, DesignMatrix::Sparse(_))
    }

    /// `A x`.
    pub fn matvec(&self, x: ArrayView1<f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.n(), "matvec: x has wrong length");
        match self {
            DesignMatrix::Dense(a) => a.dot(&x),
            DesignMatrix::Sparse(a) => {
                let mut y = Array1::zeros(a.m);
                for j in 0..a.n {
                    let xj = x[j];
                    if xj == 0.0 {
                        continue;
                    }
                    let (rows, vals) = a.col(j);
                    for (&i, &v) in rows.iter().zip(vals) {
                        y[i] += v * xj;
                    }
                }
                y
            }
        }
    }

    /// `A^T v`.
    pub fn rmatvec(&self, v: ArrayView1<f64>) -> Array1<f64> {
        assert_eq!(v.len(), self.m(), "rmatvec: v has wrong length");
        match self {
            DesignMatrix::Dense(a) => a.t().dot(&v),
            DesignMatrix::Sparse(a) => {
                let mut y = Array1::zeros(a.n);
                for j in 0..a.n {
                    let (rows, vals) = a.col(j);
                    let mut s = 0.0;
                    for (&i, &w) in rows.iter().zip(vals) {
                        s += w * v[i];
                    }
                    y[j] = s;
                }
                y
            }
        }
    }

    /// Squared Euclidean norms of the columns.
    pub fn col_sq_norms(&self) -> Array1<f64> {
        match self {
            DesignMatrix::Dense(a) => a.map_axis(Axis(0), |c| c.dot(&c)),
            DesignMatrix::Sparse(a) => {
                let mut out = Array1::zeros(a.n);
                for j in 0..a.n {
                    let (_, vals) = a.col(j);
                    out[j] = vals.iter().map(|v| v * v).sum();
                }
                out
            }
        }
    }

    /// `diag(A diag(dinv) A^T)`, the row-wise weighted squared sums. Jacobi
    /// preconditioner for the m x m reduced systems.
    pub fn row_sq_weighted(&self, dinv: ArrayView1<f64>) -> Array1<f64> {
        assert_eq!(dinv.len(), self.n(), "row_sq_weighted: dinv has wrong length");
        let mut out = Array1::zeros(self.m());
        match self {
            DesignMatrix::Dense(a) => {
                for (j, col) in a.columns().into_iter().enumerate() {
                    let w = dinv[j];
                    for (i, &v) in col.iter().enumerate() {
                        out[i] += v * v * w;
                    }
                }
            }
            DesignMatrix::Sparse(a) => {
                for j in 0..a.n {
                    let (rows, vals) = a.col(j);
                    let w = dinv[j];
                    for (&i, &v) in rows.iter().zip(vals) {
                        out[i] += v * v * w;
                    }
                }
            }
        }
        out
    }

    /// Owned copy of the columns `cols`, in the given order. Products against
    /// the copy agree with masked products against the full matrix.
    pub fn select_columns(&self, cols: &[usize]) -> DesignMatrix {
        match self {
            DesignMatrix::Dense(a) => {
                let mut sub = Array2::zeros((a.nrows(), cols.len()));
                for (jj, &j) in cols.iter().enumerate() {
                    sub.column_mut(jj).assign(&a.column(j));
                }
                DesignMatrix::Dense(sub)
            }
            DesignMatrix::Sparse(a) => {
                let mut col_ptr = Vec::with_capacity(cols.len() + 1);
                let mut row_idx = Vec::new();
                let mut values = Vec::new();
                col_ptr.push(0);
                for &j in cols {
                    let (rows, vals) = a.col(j);
                    row_idx.extend_from_slice(rows);
                    values.extend_from_slice(vals);
                    col_ptr.push(row_idx.len());
                }
                DesignMatrix::Sparse(CscMatrix {
                    m: a.m,
                    n: cols.len(),
                    col_ptr,
                    row_idx,
                    values,
                })
            }
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            DesignMatrix::Dense(a) => a.clone(),
            DesignMatrix::Sparse(a) => {
                let mut out = Array2::zeros((a.m, a.n));
                for j in 0..a.n {
                    let (rows, vals) = a.col(j);
                    for (&i, &v) in rows.iter().zip(vals) {
                        out[(i, j)] += v;
                    }
                }
                out
            }
        }
    }

    /// Dense `A^T A` (n x n).
    pub fn gram_nn(&self) -> Array2<f64> {
        match self {
            DesignMatrix::Dense(a) => a.t().dot(a),
            DesignMatrix::Sparse(a) => {
                let mut g = Array2::zeros((a.n, a.n));
                let mut scratch = vec![0.0; a.m];
                for j in 0..a.n {
                    let (rows_j, vals_j) = a.col(j);
                    for (&i, &v) in rows_j.iter().zip(vals_j) {
                        scratch[i] = v;
                    }
                    for l in j..a.n {
                        let (rows_l, vals_l) = a.col(l);
                        let mut s = 0.0;
                        for (&i, &v) in rows_l.iter().zip(vals_l) {
                            s += v * scratch[i];
                        }
                        g[(j, l)] = s;
                        g[(l, j)] = s;
                    }
                    for &i in rows_j {
                        scratch[i] = 0.0;
                    }
                }
                g
            }
        }
    }

    /// Dense `A diag(dinv) A^T` (m x m).
    pub fn scaled_gram_mm(&self, dinv: ArrayView1<f64>) -> Array2<f64> {
        assert_eq!(dinv.len(), self.n(), "scaled gram: dinv has wrong length");
        match self {
            DesignMatrix::Dense(a) => {
                let scaled = a * &dinv.insert_axis(Axis(0));
                scaled.dot(&a.t())
            }
            DesignMatrix::Sparse(a) => {
                let mut g = Array2::zeros((a.m, a.m));
                for j in 0..a.n {
                    let (rows, vals) = a.col(j);
                    let w = dinv[j];
                    for (&i1, &v1) in rows.iter().zip(vals) {
                        for (&i2, &v2) in rows.iter().zip(vals) {
                            g[(i1, i2)] += w * v1 * v2;
                        }
                    }
                }
                g
            }
        }
    }
}

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: Array2<f64>,
}

/// Factors an SPD matrix; only the lower triangle of `m` is read.
pub fn cholesky(m: &Array2<f64>) -> Result<CholeskyFactor, LinalgError> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "cholesky: matrix not square");
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= 0.0 {
            return Err(LinalgError::NotSpd { index: j, pivot: d });
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            // Rows are contiguous, so both accumulation slices stream.
            let (ri, rj) = (l.row(i), l.row(j));
            for k in 0..j {
                s -= ri[k] * rj[k];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(CholeskyFactor { l })
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `L L^T x = b`.
    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "cholesky solve: b has wrong length");
        let mut x = b.to_owned();
        for i in 0..n {
            let mut s = x[i];
            let row = self.l.row(i);
            for k in 0..i {
                s -= row[k] * x[k];
            }
            x[i] = s / row[i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }
}

/// Convenience one-shot SPD solve.
pub fn cholesky_solve(m: &Array2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>, LinalgError> {
    Ok(cholesky(m)?.solve(b))
}

/// Preconditioned conjugate gradient for an SPD operator.
///
/// Stops when `||b - M x|| <= tol * ||b||`; errs after `max_iters` carrying
/// the last relative residual. Deterministic given inputs.
pub fn pcg_solve<F>(
    apply: F,
    precond_diag: ArrayView1<f64>,
    b: ArrayView1<f64>,
    x0: Option<ArrayView1<f64>>,
    tol: f64,
    max_iters: usize,
) -> Result<Array1<f64>, LinalgError>
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    let n = b.len();
    assert_eq!(precond_diag.len(), n, "pcg: preconditioner has wrong length");
    let b_norm = b.dot(&b).sqrt();
    if b_norm == 0.0 {
        return Ok(Array1::zeros(n));
    }
    let mut x = match x0 {
        Some(v) => v.to_owned(),
        None => Array1::zeros(n),
    };
    let mut r = &b.to_owned() - &apply(x.view());
    let mut z = &r / &precond_diag;
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut rel = r.dot(&r).sqrt() / b_norm;
    if rel <= tol {
        return Ok(x);
    }
    for _ in 0..max_iters {
        let ap = apply(p.view());
        let denom = p.dot(&ap);
        if denom <= 0.0 {
            return Err(LinalgError::NotSpd { index: 0, pivot: denom });
        }
        let alpha = rz / denom;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        rel = r.dot(&r).sqrt() / b_norm;
        if rel <= tol {
            return Ok(x);
        }
        z = &r / &precond_diag;
        let rz_next = r.dot(&z);
        let beta = rz_next / rz;
        rz = rz_next;
        p = &z + &(&p * beta);
    }
    Err(LinalgError::PcgNoConvergence { iters: max_iters, rel_residual: rel })
}

/// How ridge-type systems `(A^T A + c D) x = r` are solved.
#[derive(Debug, Clone)]
pub struct LinearSolverPlan {
    pub kind: PlanKind,
    /// Relative residual bound for the iterative kind.
    pub tolerance: f64,
    /// Iteration cap for the iterative kind; `None` picks `20 * dim + 200`.
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanKind {
    /// Pick direct or iterative from the cost of forming the Gram matrix.
    Auto,
    DirectCholesky,
    Pcg,
}

impl Default for LinearSolverPlan {
    fn default() -> Self {
        Self { kind: PlanKind::Auto, tolerance: 1e-10, max_iters: None }
    }
}

/// Forming the Gram matrix costs about `max(m,n) * min(m,n)^2` flops; beyond
/// this budget the auto plan goes iterative.
const DIRECT_FORM_FLOP_BUDGET: f64 = 2.5e9;

impl LinearSolverPlan {
    /// Resolves `Auto` against problem dimensions.
    pub fn resolve(&self, m: usize, n: usize) -> PlanKind {
        match self.kind {
            PlanKind::Auto => {
                let (lo, hi) = if m < n { (m as f64, n as f64) } else { (n as f64, m as f64) };
                if hi * lo * lo <= DIRECT_FORM_FLOP_BUDGET {
                    PlanKind::DirectCholesky
                } else {
                    PlanKind::Pcg
                }
            }
            k => k,
        }
    }

    pub fn pcg_iter_cap(&self, dim: usize) -> usize {
        self.max_iters.unwrap_or(20 * dim + 200)
    }
}

/// Applies `(c D + A^T A)^{-1}` to `r` through the m x m system
/// `c I_m + A D^{-1} A^T`:
///
/// `x = (1/c) [ D^{-1} r - D^{-1} A^T (c I + A D^{-1} A^T)^{-1} A D^{-1} r ]`.
pub fn smw_apply(
    a: &DesignMatrix,
    dinv: ArrayView1<f64>,
    c: f64,
    r: ArrayView1<f64>,
    plan: &LinearSolverPlan,
) -> Result<Array1<f64>, LinalgError> {
    assert!(c > 0.0, "smw: scale must be positive");
    assert_eq!(dinv.len(), a.n(), "smw: dinv has wrong length");
    assert_eq!(r.len(), a.n(), "smw: r has wrong length");
    let dinv_r = &dinv.to_owned() * &r;
    let adr = a.matvec(dinv_r.view());
    let m = a.m();
    let inner = match plan.resolve(m, a.n()) {
        PlanKind::DirectCholesky | PlanKind::Auto => {
            let mut k = a.scaled_gram_mm(dinv);
            for i in 0..m {
                k[(i, i)] += c;
            }
            cholesky(&k)?.solve(adr.view())
        }
        PlanKind::Pcg => {
            let diag = a.row_sq_weighted(dinv) + c;
            let apply = |v: ArrayView1<f64>| -> Array1<f64> {
                let t = &dinv.to_owned() * &a.rmatvec(v);
                let mut out = a.matvec(t.view());
                out.scaled_add(c, &v.to_owned());
                out
            };
            pcg_solve(apply, diag.view(), adr.view(), None, plan.tolerance, plan.pcg_iter_cap(m))?
        }
    };
    let back = &dinv.to_owned() * &a.rmatvec(inner.view());
    Ok((&dinv_r - &back) / c)
}

/// Reusable solver for `(A^T A + c D) x = r` with fixed `A`, `c`, `D`.
///
/// Direct modes cache one factorization; the iterative mode warm-starts each
/// solve from the previous solution.
pub struct RidgeSolver {
    c: f64,
    d: Array1<f64>,
    mode: RidgeMode,
}

enum RidgeMode {
    /// Factor of the n x n matrix `A^T A + c D`.
    DirectPrimal(CholeskyFactor),
    /// Factor of the m x m matrix `c I + A D^{-1} A^T`.
    DirectWoodbury { factor: CholeskyFactor, dinv: Array1<f64> },
    Iterative { precond: Array1<f64>, tol: f64, max_iters: usize, warm: Option<Array1<f64>> },
}

impl RidgeSolver {
    pub fn new(
        a: &DesignMatrix,
        d: ArrayView1<f64>,
        c: f64,
        plan: &LinearSolverPlan,
    ) -> Result<Self, LinalgError> {
        assert!(c > 0.0, "ridge: scale must be positive");
        assert_eq!(d.len(), a.n(), "ridge: d has wrong length");
        let (m, n) = (a.m(), a.n());
        let mode = match plan.resolve(m, n) {
            PlanKind::DirectCholesky | PlanKind::Auto => {
                if n <= m {
                    let mut g = a.gram_nn();
                    for i in 0..n {
                        g[(i, i)] += c * d[i];
                    }
                    RidgeMode::DirectPrimal(cholesky(&g)?)
                } else {
                    let dinv = d.mapv(|v| 1.0 / v);
                    let mut k = a.scaled_gram_mm(dinv.view());
                    for i in 0..m {
                        k[(i, i)] += c;
                    }
                    RidgeMode::DirectWoodbury { factor: cholesky(&k)?, dinv }
                }
            }
            PlanKind::Pcg => {
                let precond = &a.col_sq_norms() + &(&d.to_owned() * c);
                RidgeMode::Iterative {
                    precond,
                    tol: plan.tolerance,
                    max_iters: plan.pcg_iter_cap(n),
                    warm: None,
                }
            }
        };
        Ok(Self { c, d: d.to_owned(), mode })
    }

    pub fn solve(&mut self, a: &DesignMatrix, r: ArrayView1<f64>) -> Result<Array1<f64>, LinalgError> {
        assert_eq!(r.len(), a.n(), "ridge solve: r has wrong length");
        match &mut self.mode {
            RidgeMode::DirectPrimal(f) => Ok(f.solve(r)),
            RidgeMode::DirectWoodbury { factor, dinv } => {
                let dinv_r = &*dinv * &r;
                let inner = factor.solve(a.matvec(dinv_r.view()).view());
                let back = &*dinv * &a.rmatvec(inner.view());
                Ok((&dinv_r - &back) / self.c)
            }
            RidgeMode::Iterative { precond, tol, max_iters, warm } => {
                let c = self.c;
                let d = &self.d;
                let apply = |v: ArrayView1<f64>| -> Array1<f64> {
                    let mut out = a.rmatvec(a.matvec(v).view());
                    out += &(&(d * c) * &v);
                    out
                };
                let x = pcg_solve(
                    apply,
                    precond.view(),
                    r,
                    warm.as_ref().map(|w| w.view()),
                    *tol,
                    *max_iters,
                )?;
                *warm = Some(x.clone());
                Ok(x)
            }
        }
    }
}
