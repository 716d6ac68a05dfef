//! Shared randomized-instance builders for the integration suites.

use ndarray::{Array1, Array2};
use oglasso::{lambda_max_grouped, DesignMatrix, GroupCovering, ProblemData};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A random covering of [n] with mixed overlaps: `max_groups` random windows
/// plus, when needed, one final group catching every uncovered coordinate.
pub fn random_covering(rng: &mut ChaCha8Rng, max_n: usize, max_groups: usize) -> GroupCovering {
    let n = rng.gen_range(1..=max_n);
    let num = rng.gen_range(1..=max_groups);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut scratch: Vec<usize> = (0..n).collect();
    for _ in 0..num {
        let size = rng.gen_range(1..=n.min(6));
        for i in 0..size {
            let j = rng.gen_range(i..n);
            scratch.swap(i, j);
        }
        let mut g = scratch[..size].to_vec();
        g.sort_unstable();
        groups.push(g);
    }
    let mut covered = vec![false; n];
    for g in &groups {
        for &i in g {
            covered[i] = true;
        }
    }
    let missing: Vec<usize> = (0..n).filter(|&i| !covered[i]).collect();
    if !missing.is_empty() {
        groups.push(missing);
    }
    let weights = (0..groups.len()).map(|_| rng.gen_range(0.2..3.0)).collect();
    GroupCovering::new(n, groups, weights).expect("construction yields a valid covering")
}

/// A random partition of [n] into consecutive blocks (nonoverlapping case).
pub fn random_partition(rng: &mut ChaCha8Rng, max_n: usize) -> GroupCovering {
    let n = rng.gen_range(2..=max_n);
    let mut groups = Vec::new();
    let mut start = 0;
    while start < n {
        let size = rng.gen_range(1..=(n - start).min(4));
        groups.push((start..start + size).collect());
        start += size;
    }
    let weights = (0..groups.len()).map(|_| rng.gen_range(0.5..2.0)).collect();
    GroupCovering::new(n, groups, weights).expect("blocks partition [n]")
}

/// Standard-normal instance over `cov` with `lambda = frac * lambda_max`.
pub fn random_problem(
    rng: &mut ChaCha8Rng,
    m: usize,
    cov: &GroupCovering,
    lambda_frac: f64,
) -> ProblemData {
    let n = cov.n();
    let a = Array2::from_shape_fn((m, n), |_| rng.sample::<f64, _>(StandardNormal));
    let y = Array1::from_shape_fn(m, |_| rng.sample::<f64, _>(StandardNormal));
    let a = DesignMatrix::from_dense(a);
    let lam_max = lambda_max_grouped(&a, y.view(), cov);
    ProblemData::new(a, y, lambda_frac * lam_max).expect("drawn data has positive lambda_max")
}

pub fn random_vector(rng: &mut ChaCha8Rng, len: usize) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.sample::<f64, _>(StandardNormal))
}

/// A random active-group set of the given size bound (possibly empty).
pub fn random_active_set(rng: &mut ChaCha8Rng, num_groups: usize) -> Vec<usize> {
    (0..num_groups).filter(|_| rng.gen_bool(0.5)).collect()
}

/// A point supported exactly on `E_x` of the given active set: every free
/// coordinate is drawn away from zero so the support is generic.
pub fn point_on_support(
    rng: &mut ChaCha8Rng,
    mask: &[bool],
) -> Array1<f64> {
    Array1::from_shape_fn(mask.len(), |i| {
        if mask[i] {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.5..2.0)
        } else {
            0.0
        }
    })
}
