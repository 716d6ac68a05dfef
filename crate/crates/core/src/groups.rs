//! Group coverings, the lifting operator, and support geometry.
//!
//! A covering is a family of (possibly overlapping) groups `G_1..G_N` over
//! coordinates `0..n` whose union is all of `0..n`, with a positive weight per
//! group. The lifting operator `L: R^n -> R^p`, `p = sum |G_t|`, stacks the
//! weighted group restrictions: block `t` of `Lx` equals `w_t * x[G_t]`.
//! Every row of `L` has exactly one nonzero, so columns of `L` are orthogonal
//! and `L^T L` is diagonal with `(L^T L)_ii = sum of w_t^2 over groups
//! containing i`.

use ndarray::{Array1, ArrayView1};
use thiserror::Error;

/// Validation and lookup failures for coverings and support states.
#[derive(Debug, Error)]
pub enum GroupError {
    #[error("covering has no groups")]
    NoGroups,
    #[error("group {group} is empty")]
    EmptyGroup { group: usize },
    #[error("group {group} contains index {index} outside 0..{n}")]
    IndexOutOfRange { group: usize, index: usize, n: usize },
    #[error("group {group} contains index {index} more than once")]
    DuplicateIndex { group: usize, index: usize },
    #[error("coordinate {index} is not covered by any group")]
    CoverageGap { index: usize },
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("weight of group {group} is {weight}, must be positive and finite")]
    BadWeight { group: usize, weight: f64 },
    #[error("active-group index {group} out of range 0..{num_groups}")]
    UnknownGroup { group: usize, num_groups: usize },
}

/// A weighted covering of `0..n` by groups of coordinate indices.
///
/// Group members are stored sorted. Duplicate groups (same index set under
/// different `t`) are accepted and kept distinct.
#[derive(Debug, Clone)]
pub struct GroupCovering {
    n: usize,
    groups: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl GroupCovering {
    /// Builds a covering, sorting each group's members.
    ///
    /// Fails if a group is empty, repeats an index, or leaves some coordinate
    /// of `0..n` uncovered, or if a weight is not strictly positive.
    pub fn new(
        n: usize,
        groups: Vec<Vec<usize>>,
        weights: Vec<f64>,
    ) -> Result<Self, GroupError> {
        if groups.is_empty() {
            return Err(GroupError::NoGroups);
        }
        if weights.len() != groups.len() {
            return Err(GroupError::WeightCount {
                expected: groups.len(),
                got: weights.len(),
            });
        }
        let mut groups = groups;
        let mut covered = vec![false; n];
        for (t, g) in groups.iter_mut().enumerate() {
            if g.is_empty() {
                return Err(GroupError::EmptyGroup { group: t });
            }
            g.sort_unstable();
            for pair in g.windows(2) {
                if pair[0] == pair[1] {
                    return Err(GroupError::DuplicateIndex {
                        group: t,
                        index: pair[0],
                    });
                }
            }
            for &i in g.iter() {
                if i >= n {
                    return Err(GroupError::IndexOutOfRange { group: t, index: i, n });
                }
                covered[i] = true;
            }
        }
        if let Some(i) = covered.iter().position(|&c| !c) {
            return Err(GroupError::CoverageGap { index: i });
        }
        for (t, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(GroupError::BadWeight { group: t, weight: w });
            }
        }
        Ok(Self { n, groups, weights })
    }

    /// Covering with unit weight on every group.
    pub fn with_unit_weights(n: usize, groups: Vec<Vec<usize>>) -> Result<Self, GroupError> {
        let weights = vec![1.0; groups.len()];
        Self::new(n, groups, weights)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, t: usize) -> &[usize] {
        &self.groups[t]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn weight(&self, t: usize) -> f64 {
        self.weights[t]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// True when the groups partition `0..n`, i.e. no coordinate is shared.
    pub fn is_partition(&self) -> bool {
        self.groups.iter().map(|g| g.len()).sum::<usize>() == self.n
    }
}

/// The lifting operator of a covering, stored row-wise.
///
/// Row `k` lives in block `J_t = offsets[t]..offsets[t+1]` with `t =
/// row_group(k)`, carries weight `w_t`, and reads coordinate `row_col(k)`,
/// which is a member of `G_t`.
#[derive(Debug, Clone)]
pub struct LiftingOperator {
    n: usize,
    offsets: Vec<usize>,
    row_col: Vec<usize>,
    row_group: Vec<usize>,
    row_weight: Vec<f64>,
    weights: Vec<f64>,
    gram_diag: Array1<f64>,
}

impl LiftingOperator {
    pub fn from_covering(cov: &GroupCovering) -> Self {
        let n = cov.n();
        let p: usize = cov.groups().iter().map(|g| g.len()).sum();
        let mut offsets = Vec::with_capacity(cov.num_groups() + 1);
        let mut row_col = Vec::with_capacity(p);
        let mut row_group = Vec::with_capacity(p);
        let mut row_weight = Vec::with_capacity(p);
        let mut gram_diag = Array1::zeros(n);
        offsets.push(0);
        for (t, g) in cov.groups().iter().enumerate() {
            let w = cov.weight(t);
            for &i in g {
                row_col.push(i);
                row_group.push(t);
                row_weight.push(w);
                gram_diag[i] += w * w;
            }
            offsets.push(row_col.len());
        }
        Self {
            n,
            offsets,
            row_col,
            row_group,
            row_weight,
            weights: cov.weights().to_vec(),
            gram_diag,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Lifted dimension `p`.
    pub fn p(&self) -> usize {
        self.row_col.len()
    }

    pub fn num_groups(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Row range of block `J_t`.
    pub fn block(&self, t: usize) -> std::ops::Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }

    pub fn row_col(&self, k: usize) -> usize {
        self.row_col[k]
    }

    pub fn row_group(&self, k: usize) -> usize {
        self.row_group[k]
    }

    pub fn weight(&self, t: usize) -> f64 {
        self.weights[t]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Diagonal of `L^T L`.
    pub fn gram_diag(&self) -> &Array1<f64> {
        &self.gram_diag
    }

    /// `||L||^2 = max_i (L^T L)_ii`, exact because columns are orthogonal.
    pub fn op_norm_sq(&self) -> f64 {
        self.gram_diag.iter().cloned().fold(0.0, f64::max)
    }

    /// `Lx`.
    pub fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.n, "lift: x has wrong length");
        let mut z = Array1::zeros(self.p());
        for k in 0..self.p() {
            z[k] = self.row_weight[k] * x[self.row_col[k]];
        }
        z
    }

    /// `L^T u`.
    pub fn adjoint(&self, u: ArrayView1<f64>) -> Array1<f64> {
        assert_eq!(u.len(), self.p(), "adjoint lift: u has wrong length");
        let mut x = Array1::zeros(self.n);
        for k in 0..self.p() {
            x[self.row_col[k]] += self.row_weight[k] * u[k];
        }
        x
    }

    /// Per-block Euclidean norms of a lifted vector.
    pub fn block_norms(&self, z: ArrayView1<f64>) -> Array1<f64> {
        assert_eq!(z.len(), self.p(), "block norms: z has wrong length");
        let mut out = Array1::zeros(self.num_groups());
        for t in 0..self.num_groups() {
            let mut s = 0.0;
            for k in self.block(t) {
                s += z[k] * z[k];
            }
            out[t] = s.sqrt();
        }
        out
    }

    /// Unweighted per-group norms `||x[G_t]||`.
    pub fn group_vec_norms(&self, x: ArrayView1<f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.n, "group norms: x has wrong length");
        let mut out = Array1::zeros(self.num_groups());
        for k in 0..self.p() {
            let v = x[self.row_col[k]];
            out[self.row_group[k]] += v * v;
        }
        out.mapv_inplace(f64::sqrt);
        out
    }

    /// The group-norm regularizer `sum_t w_t ||x[G_t]|| = ||Lx||_{1,2}`.
    pub fn group_norm(&self, x: ArrayView1<f64>) -> f64 {
        self.group_vec_norms(x)
            .iter()
            .zip(&self.weights)
            .map(|(nrm, w)| w * nrm)
            .sum()
    }

    /// Groups whose restriction of `x` has norm strictly above `tol`.
    pub fn active_groups(&self, x: ArrayView1<f64>, tol: f64) -> Vec<usize> {
        self.group_vec_norms(x)
            .iter()
            .enumerate()
            .filter(|(_, &nrm)| nrm > tol)
            .map(|(t, _)| t)
            .collect()
    }
}

/// Support geometry induced by an active-group set `I`.
///
/// * `coord_support` marks `E_x = [n] \ union of inactive groups`: the
///   coordinates not pinned to zero by any inactive group.
/// * `active_rows` marks `E_z = union of J_t over active t`: rows of blocks
///   belonging to active groups.
/// * `visible_rows` marks `E_L = { k : row_col(k) in E_x }`: rows that can see
///   a free coordinate. `E_L` is always contained in `E_z`.
///
/// The three masks realize the orthogonal projectors onto the corresponding
/// coordinate subspaces.
#[derive(Debug, Clone)]
pub struct SupportState {
    active: Vec<bool>,
    active_groups: Vec<usize>,
    coord_support: Vec<bool>,
    active_rows: Vec<bool>,
    visible_rows: Vec<bool>,
}

impl SupportState {
    pub fn compute(lift: &LiftingOperator, active_set: &[usize]) -> Result<Self, GroupError> {
        let num_groups = lift.num_groups();
        let mut active = vec![false; num_groups];
        for &t in active_set {
            if t >= num_groups {
                return Err(GroupError::UnknownGroup { group: t, num_groups });
            }
            active[t] = true;
        }
        let active_groups: Vec<usize> =
            (0..num_groups).filter(|&t| active[t]).collect();
        let mut coord_support = vec![true; lift.n()];
        let mut active_rows = vec![false; lift.p()];
        for k in 0..lift.p() {
            if active[lift.row_group(k)] {
                active_rows[k] = true;
            } else {
                coord_support[lift.row_col(k)] = false;
            }
        }
        let visible_rows = (0..lift.p())
            .map(|k| coord_support[lift.row_col(k)])
            .collect();
        Ok(Self {
            active,
            active_groups,
            coord_support,
            active_rows,
            visible_rows,
        })
    }

    /// Support state of `x`: active set `{t : ||x[G_t]|| > tol}`.
    pub fn of_point(
        lift: &LiftingOperator,
        x: ArrayView1<f64>,
        tol: f64,
    ) -> Result<Self, GroupError> {
        Self::compute(lift, &lift.active_groups(x, tol))
    }

    pub fn is_active(&self, t: usize) -> bool {
        self.active[t]
    }

    pub fn active_groups(&self) -> &[usize] {
        &self.active_groups
    }

    pub fn num_active(&self) -> usize {
        self.active_groups.len()
    }

    pub fn coord_support_mask(&self) -> &[bool] {
        &self.coord_support
    }

    pub fn active_rows_mask(&self) -> &[bool] {
        &self.active_rows
    }

    pub fn visible_rows_mask(&self) -> &[bool] {
        &self.visible_rows
    }

    /// Sorted members of `E_x`.
    pub fn coord_support(&self) -> Vec<usize> {
        mask_indices(&self.coord_support)
    }

    /// Sorted members of `E_z`.
    pub fn active_rows(&self) -> Vec<usize> {
        mask_indices(&self.active_rows)
    }

    /// Sorted members of `E_L`.
    pub fn visible_rows(&self) -> Vec<usize> {
        mask_indices(&self.visible_rows)
    }

    /// `|E_x|`, the reduced coordinate dimension.
    pub fn coord_dim(&self) -> usize {
        self.coord_support.iter().filter(|&&b| b).count()
    }

    /// Projection of `x` onto coordinates in `E_x` (zero elsewhere).
    pub fn project_coords(&self, x: ArrayView1<f64>) -> Array1<f64> {
        masked(x, &self.coord_support, true)
    }

    /// Projection of `x` onto the complement of `E_x`.
    pub fn project_coords_comp(&self, x: ArrayView1<f64>) -> Array1<f64> {
        masked(x, &self.coord_support, false)
    }

    /// Projection of a lifted vector onto rows in `E_z`.
    pub fn project_active_rows(&self, z: ArrayView1<f64>) -> Array1<f64> {
        masked(z, &self.active_rows, true)
    }

    /// Projection of a lifted vector onto the complement of `E_z`.
    pub fn project_active_rows_comp(&self, z: ArrayView1<f64>) -> Array1<f64> {
        masked(z, &self.active_rows, false)
    }

    /// Projection of a lifted vector onto rows in `E_L`.
    pub fn project_visible_rows(&self, z: ArrayView1<f64>) -> Array1<f64> {
        masked(z, &self.visible_rows, true)
    }

    /// Projection of a lifted vector onto the complement of `E_L`.
    pub fn project_visible_rows_comp(&self, z: ArrayView1<f64>) -> Array1<f64> {
        masked(z, &self.visible_rows, false)
    }
}

fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| i)
        .collect()
}

fn masked(v: ArrayView1<f64>, mask: &[bool], keep: bool) -> Array1<f64> {
    assert_eq!(v.len(), mask.len(), "mask projection: wrong length");
    Array1::from_iter(
        v.iter()
            .zip(mask)
            .map(|(&x, &b)| if b == keep { x } else { 0.0 }),
    )
}

impl LiftingOperator {
    /// The effective lifting operator applied to `x`:
    /// `Lhat x = Lx - P_{E_z} L P_{E_x^c} x`.
    ///
    /// Rows in active blocks only read coordinates inside `E_x`; rows of
    /// inactive blocks are left as in `L`.
    pub fn effective_apply(&self, s: &SupportState, x: ArrayView1<f64>) -> Array1<f64> {
        let mut z = self.apply(x);
        for k in 0..self.p() {
            if s.active_rows[k] && !s.coord_support[self.row_col[k]] {
                z[k] = 0.0;
            }
        }
        z
    }

    /// Adjoint of the effective lifting operator:
    /// `Lhat^T u = L^T u - P_{E_x^c} L^T P_{E_z} u`.
    pub fn effective_adjoint(&self, s: &SupportState, u: ArrayView1<f64>) -> Array1<f64> {
        assert_eq!(u.len(), self.p(), "effective adjoint: u has wrong length");
        let mut x = Array1::zeros(self.n);
        for k in 0..self.p() {
            if s.active_rows[k] && !s.coord_support[self.row_col[k]] {
                continue;
            }
            x[self.row_col[k]] += self.row_weight[k] * u[k];
        }
        x
    }

    /// Diagonal of `Lhat^T Lhat`, which is diagonal and strictly positive:
    /// entry `i` sums `w_t^2` over all groups containing `i` when `i` is in
    /// `E_x`, and over inactive groups containing `i` otherwise.
    pub fn effective_gram_diag(&self, s: &SupportState) -> Array1<f64> {
        let mut d = Array1::zeros(self.n);
        for k in 0..self.p() {
            let i = self.row_col[k];
            if s.coord_support[i] || !s.active[self.row_group[k]] {
                d[i] += self.row_weight[k] * self.row_weight[k];
            }
        }
        d
    }
}
