//! Property-based invariants: simplex geometry, z-score structure, EMA
//! closure, and solver sanity under random inputs.

use harmony_core::advantage::{
    advantage_to_r, compute_advantages, update_group_stats, GroupStatsStore, RewardSample,
};
use harmony_core::gradient::GradientVector;
use harmony_core::harmonizer::normalize_gradients;
use harmony_core::simplex_qp::{build_gram, project_to_simplex, solve_min_norm, SimplexWeights};
use proptest::prelude::*;

fn finite_vec(len: usize, bound: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-bound..bound, len)
}

proptest! {
    #[test]
    fn projection_lands_on_the_simplex(v in finite_vec(6, 10.0)) {
        let w = project_to_simplex(&v).unwrap();
        let sum: f64 = w.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(w.as_slice().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn projection_is_idempotent(v in finite_vec(5, 10.0)) {
        let w = project_to_simplex(&v).unwrap();
        let again = project_to_simplex(w.as_slice()).unwrap();
        for (a, b) in w.as_slice().iter().zip(again.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_the_nearest_simplex_point(
        v in finite_vec(4, 5.0),
        other_raw in finite_vec(4, 5.0),
    ) {
        let w = project_to_simplex(&v).unwrap();
        let other = project_to_simplex(&other_raw).unwrap();
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        prop_assert!(dist(&v, w.as_slice()) <= dist(&v, other.as_slice()) + 1e-9);
    }

    #[test]
    fn convex_combinations_stay_on_the_simplex(
        a_raw in finite_vec(4, 3.0),
        b_raw in finite_vec(4, 3.0),
        rho in 0.0f64..0.999,
    ) {
        let a = project_to_simplex(&a_raw).unwrap();
        let b = project_to_simplex(&b_raw).unwrap();
        let mut state = a.clone();
        // chain several EMA updates; closure must survive iteration
        for _ in 0..50 {
            state = state.convex_combination(&b, rho).unwrap();
            let sum: f64 = state.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(state.as_slice().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn advantage_to_r_is_monotone(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let r_lo = advantage_to_r(lo, 5.0).unwrap().r;
        let r_hi = advantage_to_r(hi, 5.0).unwrap().r;
        prop_assert!(r_lo <= r_hi);
        prop_assert!((advantage_to_r(0.0, 5.0).unwrap().r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn z_scores_ignore_positive_affine_reward_maps(
        rewards in proptest::collection::vec(-1.0f64..1.0, 4..10),
        scale in 0.1f64..5.0,
        shift in -3.0f64..3.0,
    ) {
        // degenerate spreads are exercised elsewhere
        let spread = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - rewards.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);

        let batch: Vec<RewardSample> = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| RewardSample::new(i as u64, 0, vec![r]).unwrap())
            .collect();
        let mapped: Vec<RewardSample> = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| RewardSample::new(i as u64, 0, vec![scale * r + shift]).unwrap())
            .collect();

        let mut store_a = GroupStatsStore::new(1);
        update_group_stats(&mut store_a, &batch).unwrap();
        let adv_a = compute_advantages(&store_a, &batch, 1e-8).unwrap();

        let mut store_b = GroupStatsStore::new(1);
        update_group_stats(&mut store_b, &mapped).unwrap();
        let adv_b = compute_advantages(&store_b, &mapped, 1e-8).unwrap();

        for i in 0..rewards.len() {
            prop_assert!((adv_a.entry(i, 0) - adv_b.entry(i, 0)).abs() < 1e-6);
        }
    }

    #[test]
    fn group_columns_standardize_to_zero_mean_unit_std(
        rewards in proptest::collection::vec(-2.0f64..2.0, 3..12),
    ) {
        let spread = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - rewards.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-2);
        let batch: Vec<RewardSample> = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| RewardSample::new(i as u64, 7, vec![r]).unwrap())
            .collect();
        let mut store = GroupStatsStore::new(1);
        update_group_stats(&mut store, &batch).unwrap();
        let adv = compute_advantages(&store, &batch, 1e-8).unwrap();
        let n = rewards.len() as f64;
        let mean: f64 = (0..rewards.len()).map(|i| adv.entry(i, 0)).sum::<f64>() / n;
        let var: f64 = (0..rewards.len())
            .map(|i| (adv.entry(i, 0) - mean).powi(2))
            .sum::<f64>()
            / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn advantage_columns_are_independent(
        col_a in proptest::collection::vec(-1.0f64..1.0, 5),
        col_b in proptest::collection::vec(-1.0f64..1.0, 5),
        col_b2 in proptest::collection::vec(-1.0f64..1.0, 5),
    ) {
        let make_batch = |b: &[f64]| -> Vec<RewardSample> {
            col_a
                .iter()
                .zip(b)
                .enumerate()
                .map(|(i, (&ra, &rb))| RewardSample::new(i as u64, 0, vec![ra, rb]).unwrap())
                .collect()
        };
        let advantages_of = |batch: &[RewardSample]| {
            let mut store = GroupStatsStore::new(2);
            update_group_stats(&mut store, batch).unwrap();
            compute_advantages(&store, batch, 1e-8).unwrap()
        };
        let adv_1 = advantages_of(&make_batch(&col_b));
        let adv_2 = advantages_of(&make_batch(&col_b2));
        // perturbing reward 2 never touches column 1
        for i in 0..5 {
            prop_assert_eq!(adv_1.entry(i, 0), adv_2.entry(i, 0));
        }
    }

    #[test]
    fn solver_never_beats_itself_and_stays_feasible(
        flat in proptest::collection::vec(-1.0f64..1.0, 12),
    ) {
        // three vectors in R^4
        let vectors: Vec<GradientVector> = flat
            .chunks(4)
            .map(|c| GradientVector::from_vec(c.to_vec()))
            .collect();
        prop_assume!(vectors.iter().all(|v| v.norm() > 1e-6));
        let unit = normalize_gradients(&vectors, 1e-12).unwrap();
        let gram = build_gram(&unit.unit).unwrap();
        let sol = solve_min_norm(&gram, 250, 1e-10).unwrap();
        let sum: f64 = sol.alpha.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(sol.objective >= -1e-12);
        // no vertex does better than the solution
        for k in 0..3 {
            prop_assert!(sol.objective <= gram.entry(k, k) + 1e-9);
        }
        // uniform weights never beat the solution either
        prop_assert!(sol.objective <= gram.quad_form(SimplexWeights::uniform(3).as_slice()) + 1e-9);
    }

    #[test]
    fn normalization_yields_unit_vectors(flat in proptest::collection::vec(-5.0f64..5.0, 8)) {
        let v = GradientVector::from_vec(flat);
        prop_assume!(v.norm() > 1e-6);
        let out = normalize_gradients(&[v], 1e-12).unwrap();
        prop_assert!(!out.zero_flagged[0]);
        prop_assert!((out.unit[0].norm() - 1.0).abs() < 1e-12);
    }
}
