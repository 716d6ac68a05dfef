//! Randomized invariants of the lifting calculus, proximal kernels, data
//! plumbing, and the support-growth rules.

mod common;

use common::{
    point_on_support, random_active_set, random_covering, random_partition, random_problem,
    random_vector,
};
use ndarray::{Array1, Array2};
use oglasso::{
    adadrops_run, hadamard_value, lasso_certificate, multitask_to_group, objective,
    parse_libsvm, project_omega, prox_group_norm, support_update, write_libsvm, AdaDropsConfig,
    DesignMatrix, GroupCovering, LiftingOperator, SolverConfig, SolverKind,
    SupportCertificate, SupportState,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn block_covering() -> GroupCovering {
    // Blocks of sizes 2, 3, 1, 4 over n = 10.
    GroupCovering::new(
        10,
        vec![vec![0, 1], vec![2, 3, 4], vec![5], vec![6, 7, 8, 9]],
        vec![1.0, 0.7, 2.0, 1.4],
    )
    .unwrap()
}

proptest! {
    // z - prox(z) is gamma times a subgradient of the blockwise norm at the
    // prox point: zero blocks only when ||z_b|| <= gamma, otherwise the
    // residual has norm gamma and the block direction is preserved.
    #[test]
    fn prox_satisfies_the_subgradient_optimality_condition(
        z in prop::collection::vec(-5.0..5.0f64, 10),
        gamma in 0.01..3.0f64,
    ) {
        let cov = block_covering();
        let lift = LiftingOperator::from_covering(&cov);
        let z = Array1::from_vec(z);
        let out = prox_group_norm(&lift, z.view(), gamma);
        for t in 0..lift.num_groups() {
            let rows = lift.block(t);
            let zb = z.slice(ndarray::s![rows.clone()]);
            let pb = out.slice(ndarray::s![rows]);
            let zn = zb.dot(&zb).sqrt();
            let pn = pb.dot(&pb).sqrt();
            if pn == 0.0 {
                prop_assert!(zn <= gamma + 1e-12);
            } else {
                let resid = &zb - &pb;
                let rn = resid.dot(&resid).sqrt();
                prop_assert!((rn - gamma).abs() <= 1e-10);
                // Same direction: z_b = (1 + gamma/||p_b||) p_b.
                let scale = zn / pn;
                for (zi, pi) in zb.iter().zip(pb.iter()) {
                    prop_assert!((zi - scale * pi).abs() <= 1e-10 * (1.0 + zi.abs()));
                }
            }
        }
    }

    // Blockwise projection onto the unit-ball product: inside points are
    // fixed, outside blocks land exactly on the sphere along the same ray.
    #[test]
    fn omega_projection_is_a_projection(
        u in prop::collection::vec(-4.0..4.0f64, 10),
    ) {
        let cov = block_covering();
        let lift = LiftingOperator::from_covering(&cov);
        let u = Array1::from_vec(u);
        let proj = project_omega(&lift, u.view());
        let again = project_omega(&lift, proj.view());
        for t in 0..lift.num_groups() {
            let rows = lift.block(t);
            let ub = u.slice(ndarray::s![rows.clone()]);
            let pb = proj.slice(ndarray::s![rows]);
            let un = ub.dot(&ub).sqrt();
            let pn = pb.dot(&pb).sqrt();
            prop_assert!(pn <= 1.0 + 1e-12);
            if un <= 1.0 {
                prop_assert_eq!(ub, pb);
            } else {
                prop_assert!((pn - 1.0).abs() <= 1e-12);
                for (ui, pi) in ub.iter().zip(pb.iter()) {
                    prop_assert!((ui - un * pi).abs() <= 1e-12 * (1.0 + ui.abs()));
                }
            }
        }
        // Idempotent up to one rounding of the recomputed block norm.
        for (a, b) in proj.iter().zip(again.iter()) {
            prop_assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
        }
    }

    // <Lx, u> = <x, L^T u> and L^T L x = diag(L^T L) .* x on random coverings.
    #[test]
    fn lift_adjoint_pairing_and_diagonal_gram(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cov = random_covering(&mut rng, 20, 8);
        let lift = LiftingOperator::from_covering(&cov);
        let x = random_vector(&mut rng, lift.n());
        let u = random_vector(&mut rng, lift.p());
        let lx = lift.apply(x.view());
        let ltu = lift.adjoint(u.view());
        let lhs = lx.dot(&u);
        let rhs = x.dot(&ltu);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        let gram_x = lift.adjoint(lx.view());
        let expect = lift.gram_diag() * &x;
        for (a, b) in gram_x.iter().zip(expect.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    // The balanced factorization of Lx: u .* v recomposes Lx blockwise and
    // the combined value equals the group norm.
    #[test]
    fn hadamard_factorization_recomposes_the_lift(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cov = random_covering(&mut rng, 16, 6);
        let lift = LiftingOperator::from_covering(&cov);
        let x = random_vector(&mut rng, lift.n());
        let h = hadamard_value(&lift, x.view());
        let lx = lift.apply(x.view());
        for t in 0..lift.num_groups() {
            for k in lift.block(t) {
                let recomposed = h.v[t] * h.u[k];
                prop_assert!((recomposed - lx[k]).abs() <= 1e-12 * (1.0 + lx[k].abs()));
            }
        }
        let gn = lift.group_norm(x.view());
        prop_assert!((h.value - gn).abs() <= 1e-12 * (1.0 + gn));
    }

    // Text round trip is exact: shortest float formatting parses back to the
    // identical bits.
    #[test]
    fn libsvm_write_then_parse_is_identity(
        dims in (1usize..=5, 1usize..=5),
        seed in any::<u64>(),
    ) {
        let (m, n) = dims;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((m, n), |_| {
            if rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(-10.0..10.0) }
        });
        let y = Array1::from_shape_fn(m, |_| rng.gen_range(-3.0..3.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.libsvm");
        let dm = DesignMatrix::from_dense(a.clone());
        write_libsvm(&path, &dm, y.view()).unwrap();
        let (parsed, y2) = parse_libsvm(&path, Some(n)).unwrap();
        prop_assert_eq!(parsed.to_dense(), a);
        prop_assert_eq!(y2, y);
    }

    // The Frobenius multi-task objective evaluated on X equals the stacked
    // group objective evaluated on vec(X).
    #[test]
    fn multitask_stacking_preserves_the_objective(
        dims in (1usize..=4, 1usize..=4, 1usize..=3),
        seed in any::<u64>(),
    ) {
        let (m, n, q) = dims;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((m, n), |_| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let ys = Array2::from_shape_fn((m, q), |_| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let xs = Array2::from_shape_fn((n, q), |_| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let lambda = 0.7;
        let (problem, cov) = multitask_to_group(&DesignMatrix::from_dense(a.clone()), &ys, lambda).unwrap();
        let lift = LiftingOperator::from_covering(&cov);
        // vec(X): columns stacked.
        let mut x = Array1::zeros(n * q);
        for c in 0..q {
            for j in 0..n {
                x[c * n + j] = xs[(j, c)];
            }
        }
        let resid = a.dot(&xs) - &ys;
        let frob: f64 = resid.iter().map(|v| v * v).sum();
        let row_norms: f64 = (0..n)
            .map(|j| xs.row(j).dot(&xs.row(j)).sqrt())
            .sum();
        let direct = frob / (2.0 * lambda) + row_norms;
        let stacked = objective(&problem, &lift, x.view());
        prop_assert!((direct - stacked).abs() <= 1e-12 * (1.0 + direct.abs()));
    }
}

#[test]
fn support_geometry_invariants_hold_on_random_coverings() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..200 {
        let cov = random_covering(&mut rng, 24, 8);
        let lift = LiftingOperator::from_covering(&cov);
        let active = random_active_set(&mut rng, cov.num_groups());
        let state = SupportState::compute(&lift, &active).unwrap();
        // Visible rows never leave the active rows.
        for (vis, act) in state.visible_rows_mask().iter().zip(state.active_rows_mask()) {
            assert!(!vis || *act);
        }
        // A free coordinate belongs to active groups only.
        for (t, g) in cov.groups().iter().enumerate() {
            if !state.is_active(t) {
                for &i in g {
                    assert!(!state.coord_support_mask()[i]);
                }
            }
        }
        // Lifting a vector supported on E_x stays inside the visible rows.
        let x = point_on_support(&mut rng, state.coord_support_mask());
        let lx = lift.apply(x.view());
        for (k, &val) in lx.iter().enumerate() {
            if val != 0.0 {
                assert!(state.visible_rows_mask()[k]);
            }
        }
        // Coordinate projections are idempotent and complementary.
        let z = random_vector(&mut rng, lift.n());
        let pz = state.project_coords(z.view());
        let ppz = state.project_coords(pz.view());
        assert_eq!(pz, ppz);
        let sum = &pz + &state.project_coords_comp(z.view());
        assert_eq!(sum, z);
    }
}

#[test]
fn dual_candidates_are_a_subset_of_gradient_candidates() {
    // The lifted dual block norm is at most the weighted gradient block norm
    // on inactive groups, so its violation set can only be smaller.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let cov = random_covering(&mut rng, 20, 7);
        let lift = LiftingOperator::from_covering(&cov);
        let m = 1 + cov.n() / 2;
        let problem = random_problem(&mut rng, m, &cov, 0.4);
        let active = random_active_set(&mut rng, cov.num_groups());
        let state = SupportState::compute(&lift, &active).unwrap();
        let x = point_on_support(&mut rng, state.coord_support_mask());
        let cap = cov.num_groups();
        let by_ogn = support_update(&problem, &lift, &state, &x, SupportCertificate::Ogn, cap);
        let by_lasso = support_update(&problem, &lift, &state, &x, SupportCertificate::Lasso, cap);
        for t in &by_ogn {
            assert!(by_lasso.contains(t), "dual kept group {t} that the gradient dropped");
        }
    }
}

#[test]
fn adaptive_rounds_grow_monotonically() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..10 {
        let cov = random_covering(&mut rng, 20, 6);
        let m = 2 + cov.n() / 2;
        let problem = random_problem(&mut rng, m, &cov, 0.45);
        let cfg = AdaDropsConfig {
            init_size: 2,
            growth_cap: 2,
            inner: SolverConfig { stop_tol: 1e-9, ..Default::default() },
            ..Default::default()
        };
        let res = adadrops_run(&problem, &cov, SolverKind::Admm, &cfg).unwrap();
        let kappas: Vec<usize> = res.rounds.iter().map(|r| r.kappa).collect();
        for w in kappas.windows(2) {
            assert!(w[0] <= w[1], "trial {trial}: working dimension shrank: {kappas:?}");
        }
        assert!(*kappas.last().unwrap() <= cov.n());
        // Every round except the last adds groups.
        for r in &res.rounds[..res.rounds.len() - 1] {
            assert!(!r.added_groups.is_empty());
        }
        assert!(res.rounds.last().unwrap().added_groups.is_empty());
    }
}

#[test]
fn gradient_certificate_margins_match_direct_norms() {
    // beta's group norms against the weights are exactly what the update
    // rule thresholds; spot-check the margin arithmetic on a partition where
    // both certificates must agree.
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for _ in 0..50 {
        let cov = random_partition(&mut rng, 16);
        let lift = LiftingOperator::from_covering(&cov);
        let m = 1 + cov.n() / 2;
        let problem = random_problem(&mut rng, m, &cov, 0.5);
        let active = random_active_set(&mut rng, cov.num_groups());
        let state = SupportState::compute(&lift, &active).unwrap();
        let x = point_on_support(&mut rng, state.coord_support_mask());
        let cap = cov.num_groups();
        let by_ogn = support_update(&problem, &lift, &state, &x, SupportCertificate::Ogn, cap);
        let by_lasso = support_update(&problem, &lift, &state, &x, SupportCertificate::Lasso, cap);
        assert_eq!(by_ogn, by_lasso);
        // Direct recomputation of the gradient rule.
        let beta = lasso_certificate(&problem, x.view());
        let norms = lift.group_vec_norms(beta.view());
        let expect: Vec<usize> = (0..cov.num_groups())
            .filter(|&t| !state.is_active(t) && norms[t] / cov.weight(t) >= 1.0)
            .collect();
        assert_eq!(by_lasso, expect);
    }
}
