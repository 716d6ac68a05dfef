//! Problem ingestion and generation: LIBSVM-format I/O, group-structure file
//! I/O, sliding-window and tree-structured synthetic instances, the
//! multi-task reduction, and regularization-strength utilities.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::groups::{GroupCovering, GroupError, LiftingOperator};
use crate::linalg::DesignMatrix;

/// LIBSVM-loaded matrices denser than this stay dense.
pub const SPARSE_DENSITY_THRESHOLD: f64 = 0.10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("lambda tuning failed: {0}")]
    Tuning(String),
}

/// A least-squares instance `(1/(2 lambda)) ||Ax - y||^2` plus a group norm.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub a: DesignMatrix,
    pub y: Array1<f64>,
    pub lambda: f64,
}

impl ProblemData {
    pub fn new(a: DesignMatrix, y: Array1<f64>, lambda: f64) -> Result<Self, DataError> {
        if y.len() != a.m() {
            return Err(DataError::InvalidSpec(format!(
                "y has length {} but A has {} rows",
                y.len(),
                a.m()
            )));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(DataError::InvalidSpec(format!("lambda = {lambda} must be positive")));
        }
        Ok(Self { a, y, lambda })
    }

    pub fn m(&self) -> usize {
        self.a.m()
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    /// `Ax - y`.
    pub fn residual(&self, x: ArrayView1<f64>) -> Array1<f64> {
        &self.a.matvec(x) - &self.y
    }

    /// `(1/(2 lambda)) ||Ax - y||^2`.
    pub fn data_fit(&self, x: ArrayView1<f64>) -> f64 {
        let r = self.residual(x);
        r.dot(&r) / (2.0 * self.lambda)
    }
}

/// Parses LIBSVM text: each line `label idx:val ...` with 1-based feature
/// indices. `n_override` fixes the column count; otherwise the largest index
/// seen decides it. Indices may appear out of order within a line.
pub fn parse_libsvm(
    path: impl AsRef<Path>,
    n_override: Option<usize>,
) -> Result<(DesignMatrix, Array1<f64>), DataError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut labels = Vec::new();
    let mut triplets = Vec::new();
    let mut max_index = 0usize;
    let mut row = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut tokens = line.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue; // blank line
        };
        let lineno = lineno + 1;
        let label: f64 = label_tok.parse().map_err(|_| DataError::Parse {
            line: lineno,
            message: format!("bad label `{label_tok}`"),
        })?;
        for tok in tokens {
            let (idx_str, val_str) = tok.split_once(':').ok_or_else(|| DataError::Parse {
                line: lineno,
                message: format!("expected idx:val, got `{tok}`"),
            })?;
            let idx: usize = idx_str.parse().map_err(|_| DataError::Parse {
                line: lineno,
                message: format!("bad feature index `{idx_str}`"),
            })?;
            if idx == 0 {
                return Err(DataError::Parse {
                    line: lineno,
                    message: "feature indices are 1-based".into(),
                });
            }
            let val: f64 = val_str.parse().map_err(|_| DataError::Parse {
                line: lineno,
                message: format!("bad feature value `{val_str}`"),
            })?;
            max_index = max_index.max(idx);
            triplets.push((row, idx - 1, val));
        }
        labels.push(label);
        row += 1;
    }
    let n = match n_override {
        Some(n) => {
            if max_index > n {
                return Err(DataError::InvalidSpec(format!(
                    "feature index {max_index} exceeds declared dimension {n}"
                )));
            }
            n
        }
        None => max_index,
    };
    let a = DesignMatrix::from_triplets(row, n, &triplets, SPARSE_DENSITY_THRESHOLD);
    Ok((a, Array1::from_vec(labels)))
}

/// Writes LIBSVM text that `parse_libsvm` reproduces exactly (indices
/// 1-based, zero entries omitted, shortest round-trip float formatting).
pub fn write_libsvm(
    path: impl AsRef<Path>,
    a: &DesignMatrix,
    y: ArrayView1<f64>,
) -> Result<(), DataError> {
    assert_eq!(y.len(), a.m(), "write_libsvm: y has wrong length");
    let dense = a.to_dense();
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for i in 0..a.m() {
        write!(out, "{}", y[i])?;
        for (j, &v) in dense.row(i).iter().enumerate() {
            if v != 0.0 {
                write!(out, " {}:{}", j + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the group-structure format: first line `n N`, then one line per
/// group `w k i_1 ... i_k` with 1-based sorted coordinate indices.
pub fn read_groups(path: impl AsRef<Path>) -> Result<GroupCovering, DataError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Parse {
        line: 1,
        message: "empty group file".into(),
    })?;
    let header = header?;
    let mut head = header.split_whitespace();
    let parse_head = |tok: Option<&str>, what: &str| -> Result<usize, DataError> {
        tok.and_then(|t| t.parse().ok()).ok_or(DataError::Parse {
            line: 1,
            message: format!("header must be `n N`; bad {what}"),
        })
    };
    let n = parse_head(head.next(), "n")?;
    let num_groups = parse_head(head.next(), "N")?;
    let mut groups = Vec::with_capacity(num_groups);
    let mut weights = Vec::with_capacity(num_groups);
    for (lineno, line) in lines {
        let line = line?;
        let lineno = lineno + 1;
        let mut toks = line.split_whitespace();
        let Some(w_tok) = toks.next() else {
            continue;
        };
        let w: f64 = w_tok.parse().map_err(|_| DataError::Parse {
            line: lineno,
            message: format!("bad weight `{w_tok}`"),
        })?;
        let k: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or(DataError::Parse { line: lineno, message: "missing group size".into() })?;
        let mut members = Vec::with_capacity(k);
        for _ in 0..k {
            let idx: usize = toks
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or(DataError::Parse { line: lineno, message: "missing group member".into() })?;
            if idx == 0 {
                return Err(DataError::Parse {
                    line: lineno,
                    message: "group members are 1-based".into(),
                });
            }
            members.push(idx - 1);
        }
        if toks.next().is_some() {
            return Err(DataError::Parse {
                line: lineno,
                message: "trailing tokens after group members".into(),
            });
        }
        groups.push(members);
        weights.push(w);
    }
    if groups.len() != num_groups {
        return Err(DataError::InvalidSpec(format!(
            "header declares {num_groups} groups, file has {}",
            groups.len()
        )));
    }
    Ok(GroupCovering::new(n, groups, weights)?)
}

/// Writes the group-structure format read by `read_groups`.
pub fn write_groups(path: impl AsRef<Path>, cov: &GroupCovering) -> Result<(), DataError> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{} {}", cov.n(), cov.num_groups())?;
    for t in 0..cov.num_groups() {
        write!(out, "{} {}", cov.weight(t), cov.group(t).len())?;
        for &i in cov.group(t) {
            write!(out, " {}", i + 1)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Layout and sampling parameters of a sliding-window instance.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub num_groups: usize,
    pub group_size: usize,
    pub overlap: usize,
    /// Group weight; defaults to `sqrt(group_size)`.
    pub weight: Option<f64>,
    /// Row count; defaults to `round(n / 2)`.
    pub num_rows: Option<usize>,
    /// `lambda = lambda_max / lambda_ratio`.
    pub lambda_ratio: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_groups == 0 {
            return Err(DataError::InvalidSpec("need at least one group".into()));
        }
        if self.group_size == 0 || self.overlap >= self.group_size {
            return Err(DataError::InvalidSpec(format!(
                "need 0 <= overlap < group size, got os={} gs={}",
                self.overlap, self.group_size
            )));
        }
        if !(self.lambda_ratio.is_finite() && self.lambda_ratio > 0.0) {
            return Err(DataError::InvalidSpec("lambda ratio must be positive".into()));
        }
        Ok(())
    }

    /// `n = N*gs - (N-1)*os`.
    pub fn coord_dim(&self) -> usize {
        self.num_groups * self.group_size - (self.num_groups - 1) * self.overlap
    }

    pub fn row_dim(&self) -> usize {
        self.num_rows
            .unwrap_or_else(|| ((self.coord_dim() as f64) / 2.0).round() as usize)
    }

    /// The covering alone (no data): windows of `gs` consecutive coordinates
    /// stepping by `gs - os`.
    pub fn covering(&self) -> Result<GroupCovering, DataError> {
        self.validate()?;
        let step = self.group_size - self.overlap;
        let groups = (0..self.num_groups)
            .map(|t| (t * step..t * step + self.group_size).collect())
            .collect();
        let w = self.weight.unwrap_or((self.group_size as f64).sqrt());
        Ok(GroupCovering::new(self.coord_dim(), groups, vec![w; self.num_groups])?)
    }
}

/// Draws a sliding-window instance. Randomness comes from a ChaCha8 generator
/// seeded with `spec.seed`: stream 0 fills A, stream 1 fills y, so the two
/// draws are independent and individually reproducible.
pub fn gen_sliding(spec: &SyntheticSpec) -> Result<(ProblemData, GroupCovering), DataError> {
    let cov = spec.covering()?;
    let problem = gen_gaussian(&cov, Some(spec.row_dim()), spec.lambda_ratio, spec.seed)?;
    Ok((problem, cov))
}

/// Standard-normal data over an arbitrary covering: A is m x n (ChaCha8
/// stream 0), y has length m (stream 1), and lambda = lambda_max /
/// lambda_ratio. Row count defaults to round(n / 2).
pub fn gen_gaussian(
    cov: &GroupCovering,
    num_rows: Option<usize>,
    lambda_ratio: f64,
    seed: u64,
) -> Result<ProblemData, DataError> {
    if !(lambda_ratio.is_finite() && lambda_ratio > 0.0) {
        return Err(DataError::InvalidSpec("lambda ratio must be positive".into()));
    }
    let n = cov.n();
    let m = num_rows.unwrap_or_else(|| ((n as f64) / 2.0).round() as usize);
    if m == 0 {
        return Err(DataError::InvalidSpec("row dimension is zero".into()));
    }
    let mut rng_a = ChaCha8Rng::seed_from_u64(seed);
    rng_a.set_stream(0);
    let a = Array2::from_shape_fn((m, n), |_| rng_a.sample::<f64, _>(StandardNormal));
    let mut rng_y = ChaCha8Rng::seed_from_u64(seed);
    rng_y.set_stream(1);
    let y = Array1::from_shape_fn(m, |_| rng_y.sample::<f64, _>(StandardNormal));
    let a = DesignMatrix::from_dense(a);
    let lam_max = lambda_max_grouped(&a, y.view(), cov);
    if lam_max <= 0.0 {
        return Err(DataError::InvalidSpec("lambda_max is zero for drawn data".into()));
    }
    ProblemData::new(a, y, lam_max / lambda_ratio)
}

/// Groups over a complete `fanout`-ary tree of `depth` levels, nodes indexed
/// breadth-first: one group per internal node holding the node and its
/// children, plus a singleton group per leaf. Unit weights.
pub fn gen_tree_groups(depth: usize, fanout: usize) -> Result<GroupCovering, DataError> {
    if depth == 0 || fanout == 0 {
        return Err(DataError::InvalidSpec("depth and fanout must be at least 1".into()));
    }
    let mut n = 0usize;
    let mut level = 1usize;
    for _ in 0..depth {
        n += level;
        level *= fanout;
    }
    let mut groups = Vec::new();
    for v in 0..n {
        let first_child = fanout * v + 1;
        if first_child < n {
            let mut g = vec![v];
            g.extend(first_child..(first_child + fanout).min(n));
            groups.push(g);
        } else {
            groups.push(vec![v]);
        }
    }
    Ok(GroupCovering::with_unit_weights(n, groups)?)
}

/// Rewrites multi-task least squares `||AX - Y||_F^2 + sum_j ||X_{j,:}||`
/// as a group problem over `vec(X)` (columns stacked): the design is
/// block-diagonal with `q` copies of `A`, and row `j` of `X` becomes group
/// `{j, j+n, ..., j+(q-1)n}` with unit weight.
pub fn multitask_to_group(
    a: &DesignMatrix,
    ys: &Array2<f64>,
    lambda: f64,
) -> Result<(ProblemData, GroupCovering), DataError> {
    let (m, n) = (a.m(), a.n());
    let q = ys.ncols();
    if ys.nrows() != m {
        return Err(DataError::InvalidSpec(format!(
            "Y has {} rows but A has {m}",
            ys.nrows()
        )));
    }
    if q == 0 || n == 0 {
        return Err(DataError::InvalidSpec("empty multi-task problem".into()));
    }
    let dense = a.to_dense();
    let mut triplets = Vec::new();
    for c in 0..q {
        for i in 0..m {
            for j in 0..n {
                let v = dense[(i, j)];
                if v != 0.0 {
                    triplets.push((c * m + i, c * n + j, v));
                }
            }
        }
    }
    let stacked = DesignMatrix::from_triplets(m * q, n * q, &triplets, SPARSE_DENSITY_THRESHOLD);
    let mut y = Array1::zeros(m * q);
    for c in 0..q {
        for i in 0..m {
            y[c * m + i] = ys[(i, c)];
        }
    }
    let groups = (0..n).map(|j| (0..q).map(|c| j + c * n).collect()).collect();
    let cov = GroupCovering::with_unit_weights(n * q, groups)?;
    Ok((ProblemData::new(stacked, y, lambda)?, cov))
}

/// Standard-normal multi-task instance: A is m x n (ChaCha8 stream 0), Y is
/// m x q (stream 1), stacked into the group form with lambda = lambda_max /
/// lambda_ratio. Row count defaults to round(n / 2).
pub fn gen_multitask(
    n: usize,
    q: usize,
    num_rows: Option<usize>,
    lambda_ratio: f64,
    seed: u64,
) -> Result<(ProblemData, GroupCovering), DataError> {
    if n == 0 || q == 0 {
        return Err(DataError::InvalidSpec("need n >= 1 and q >= 1".into()));
    }
    if !(lambda_ratio.is_finite() && lambda_ratio > 0.0) {
        return Err(DataError::InvalidSpec("lambda ratio must be positive".into()));
    }
    let m = num_rows.unwrap_or_else(|| ((n as f64) / 2.0).round() as usize);
    if m == 0 {
        return Err(DataError::InvalidSpec("row dimension is zero".into()));
    }
    let mut rng_a = ChaCha8Rng::seed_from_u64(seed);
    rng_a.set_stream(0);
    let a = Array2::from_shape_fn((m, n), |_| rng_a.sample::<f64, _>(StandardNormal));
    let mut rng_y = ChaCha8Rng::seed_from_u64(seed);
    rng_y.set_stream(1);
    let ys = Array2::from_shape_fn((m, q), |_| rng_y.sample::<f64, _>(StandardNormal));
    let (problem, cov) = multitask_to_group(&DesignMatrix::from_dense(a), &ys, 1.0)?;
    let lam_max = lambda_max_grouped(&problem.a, problem.y.view(), &cov);
    if lam_max <= 0.0 {
        return Err(DataError::InvalidSpec("lambda_max is zero for drawn data".into()));
    }
    let problem = ProblemData::new(problem.a, problem.y, lam_max / lambda_ratio)?;
    Ok((problem, cov))
}

/// `max_t ||(A^T y)[G_t]|| / w_t`: the smallest lambda with all-zero solution.
pub fn lambda_max_grouped(a: &DesignMatrix, y: ArrayView1<f64>, cov: &GroupCovering) -> f64 {
    let c = a.rmatvec(y);
    let lift = LiftingOperator::from_covering(cov);
    lift.group_vec_norms(c.view())
        .iter()
        .zip(cov.weights())
        .map(|(nrm, w)| nrm / w)
        .fold(0.0, f64::max)
}

/// `||A^T y||_inf`: the plain-lasso threshold.
pub fn lambda_max_l1(a: &DesignMatrix, y: ArrayView1<f64>) -> f64 {
    a.rmatvec(y).iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Geometric bisection for a regularization strength whose solution carries
/// between `lo_groups` and `hi_groups` nonzero groups (counted on the exact
/// zero blocks of an ADMM solve). Returns the lambda and the achieved count.
///
/// The count is treated as nonincreasing in lambda; the band should be wide
/// enough (a few groups) to absorb local nonmonotonicity.
pub fn tune_lambda(
    a: &DesignMatrix,
    y: ArrayView1<f64>,
    cov: &GroupCovering,
    lo_groups: usize,
    hi_groups: usize,
    inner: &crate::solvers::SolverConfig,
) -> Result<(f64, usize), DataError> {
    assert!(
        1 <= lo_groups && lo_groups <= hi_groups && hi_groups <= cov.num_groups(),
        "tune_lambda: band must satisfy 1 <= lo <= hi <= N"
    );
    let lift = LiftingOperator::from_covering(cov);
    let lam_max = lambda_max_grouped(a, y, cov);
    if !(lam_max.is_finite() && lam_max > 0.0) {
        return Err(DataError::Tuning(format!(
            "grouped lambda_max is {lam_max}; observations carry no signal"
        )));
    }

    let count_at = |lambda: f64| -> Result<usize, DataError> {
        let problem = ProblemData::new(a.clone(), y.to_owned(), lambda)?;
        let sol = crate::solvers::admm_solve(&problem, &lift, inner)
            .map_err(|e| DataError::Tuning(format!("inner solve at lambda {lambda}: {e}")))?;
        let norms = lift.block_norms(sol.z.view());
        Ok(norms.iter().filter(|&&nrm| nrm > 0.0).count())
    };

    // Bracket: lam_max has zero groups; shrink until the count overshoots.
    let mut big = lam_max;
    let mut small = lam_max;
    let mut small_count = 0;
    for _ in 0..60 {
        small /= 4.0;
        small_count = count_at(small)?;
        if (lo_groups..=hi_groups).contains(&small_count) {
            return Ok((small, small_count));
        }
        if small_count > hi_groups {
            break;
        }
        big = small;
    }
    if small_count <= hi_groups {
        return Err(DataError::Tuning(format!(
            "could not bracket the band [{lo_groups}, {hi_groups}]: \
             count stalled at {small_count}"
        )));
    }

    for _ in 0..60 {
        let mid = (small * big).sqrt();
        let c = count_at(mid)?;
        if (lo_groups..=hi_groups).contains(&c) {
            return Ok((mid, c));
        }
        if c > hi_groups {
            small = mid;
        } else {
            big = mid;
        }
        if big / small < 1.0 + 1e-12 {
            break;
        }
    }
    Err(DataError::Tuning(format!(
        "no lambda in [{small:.6e}, {big:.6e}] hit the band [{lo_groups}, {hi_groups}]"
    )))
}
