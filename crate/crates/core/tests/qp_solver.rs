mod common;

use common::{augmented_lagrangian, projected_gradient_box, random_box_qp};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srlmpc::qp::{kkt_residuals, solve, Multipliers, QpProblem, QpStatus, SolverSettings};

/// Box multipliers implied by the gradient at a box-constrained point.
fn box_multipliers(problem: &QpProblem, z: &DVector<f64>) -> Multipliers {
    let grad = &problem.hessian * z + &problem.linear;
    let mut m = Multipliers::zeros(problem);
    for i in 0..z.len() {
        if (z[i] - problem.upper[i]).abs() < 1e-9 && grad[i] < 0.0 {
            m.upper[i] = -grad[i];
        } else if (z[i] - problem.lower[i]).abs() < 1e-9 && grad[i] > 0.0 {
            m.lower[i] = grad[i];
        }
    }
    m
}

#[test]
fn matches_projected_gradient_oracle_on_random_box_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let problem = random_box_qp(&mut rng, 10);
        let reference = projected_gradient_box(
            &problem.hessian,
            &problem.linear,
            &problem.lower,
            &problem.upper,
        );
        let oracle_res =
            kkt_residuals(&problem, &reference, &box_multipliers(&problem, &reference));
        assert!(oracle_res.max() <= 1e-6, "oracle residuals {oracle_res:?}");

        let sol = solve(&problem, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.residuals.max() <= 1e-8);
        assert!((sol.objective - problem.objective(&reference)).abs() <= 1e-6);
    }
}

#[test]
fn matches_augmented_lagrangian_oracle_with_general_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = 6;
        let base = random_box_qp(&mut rng, n);
        // rows chosen so that the box centre is strictly feasible
        let centre = (&base.lower + &base.upper) * 0.5;
        let a = DMatrix::from_fn(3, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = &a * &centre + DVector::from_fn(3, |_, _| rng.gen_range(0.05..1.0));
        let e = DMatrix::from_fn(1, n, |_, _| rng.gen_range(-1.0..1.0));
        let f = &e * &centre;
        let problem = base.with_inequalities(a, b).with_equalities(e, f);

        let reference = augmented_lagrangian(&problem);
        let sol = solve(&problem, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.residuals.max() <= 1e-8);
        assert!(
            (sol.objective - problem.objective(&reference)).abs() <= 1e-6,
            "{} vs {}",
            sol.objective,
            problem.objective(&reference)
        );
    }
}

#[test]
fn optimal_points_survive_local_probes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let problem = random_box_qp(&mut rng, 8);
        let sol = solve(&problem, &SolverSettings::default()).unwrap();
        for _ in 0..20 {
            let d = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0)).normalize();
            for sign in [1.0, -1.0] {
                let mut probe = &sol.z + &d * (sign * 1e-3);
                for i in 0..8 {
                    probe[i] = probe[i].clamp(problem.lower[i], problem.upper[i]);
                }
                assert!(problem.objective(&probe) >= sol.objective - 1e-6);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn argmin_is_scale_invariant(seed in 0u64..10_000, scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problem = random_box_qp(&mut rng, 6);
        let scaled = QpProblem {
            hessian: &problem.hessian * scale,
            linear: &problem.linear * scale,
            ..problem.clone()
        };
        let a = solve(&problem, &SolverSettings::default()).unwrap();
        let b = solve(&scaled, &SolverSettings::default()).unwrap();
        prop_assert_eq!(a.status, QpStatus::Optimal);
        prop_assert_eq!(b.status, QpStatus::Optimal);
        prop_assert!((&a.z - &b.z).amax() <= 1e-6);
    }

    #[test]
    fn returned_points_are_feasible(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problem = random_box_qp(&mut rng, 5);
        let sol = solve(&problem, &SolverSettings::default()).unwrap();
        for i in 0..5 {
            prop_assert!(sol.z[i] >= problem.lower[i] - 1e-8);
            prop_assert!(sol.z[i] <= problem.upper[i] + 1e-8);
        }
    }
}
