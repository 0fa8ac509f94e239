mod common;

use common::oracle::{check_buffer_case, check_kmeans_model, random_buffer_case, random_points};
use proptest::prelude::*;
use saferl::bench::relative_cumulative_failures;
use saferl::clustering::{fit, fit_weighted, KMeansParams};
use saferl::cmdp::{ActionValue, FeatureVec};
use saferl::policy::{gae, lagrangian_update, LagrangianState};
use saferl::safety_buffer::{ActionMatcher, KPolicy, SafetyBuffer};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn query_agrees_with_oracle(seed in any::<u64>()) {
        let case = random_buffer_case(seed);
        prop_assert!(check_buffer_case(&case).is_ok(), "{:?}", check_buffer_case(&case));
    }

    #[test]
    fn kmeans_invariants(seed in any::<u64>(), fit_seed in any::<u64>()) {
        let (points, k) = random_points(seed);
        let model = fit(&points, k, 50, 1e-4, fit_seed).unwrap();
        prop_assert!(check_kmeans_model(&points, &model).is_ok(), "{:?}", check_kmeans_model(&points, &model));
        prop_assert_eq!(model.centroids.len(), k);
        let again = fit(&points, k, 50, 1e-4, fit_seed).unwrap();
        prop_assert_eq!(model, again);
    }

    #[test]
    fn kmeans_with_k_equal_n_is_exact(
        points in prop::collection::hash_set((-50i32..50, -50i32..50), 1..40)
    ) {
        let points: Vec<Vec<f64>> = points.into_iter().map(|(a, b)| vec![a as f64, b as f64]).collect();
        let model = fit(&points, points.len(), 50, 1e-4, 1).unwrap();
        prop_assert_eq!(model.objective, 0.0);
    }

    #[test]
    fn weighted_fit_equals_expanded_fit_objective(seed in any::<u64>()) {
        let (points, k) = random_points(seed);
        let weights = vec![1.0; points.len()];
        let a = fit_weighted(&points, &weights, k, KMeansParams::default(), 9).unwrap();
        let b = fit(&points, k, 50, 1e-4, 9).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn max_reward_contract(rewards in prop::collection::vec(-5.0f64..5.0, 1..40)) {
        let mut buffer = SafetyBuffer::new(KPolicy::Exponent(0.5), ActionMatcher::DiscreteExact);
        for (i, r) in rewards.iter().enumerate() {
            buffer.insert(FeatureVec::new(vec![0.0]), ActionValue::Discrete(i % 4), *r).unwrap();
        }
        buffer.rebuild(0).unwrap();
        let out = buffer.query(&ActionValue::Discrete(9), &[0.0]).unwrap();
        prop_assert!(out.substituted);
        let src = buffer.get(out.source.unwrap()).unwrap();
        prop_assert!(rewards.iter().all(|r| *r <= src.reward));
    }

    #[test]
    fn persistence_without_capacity(n in 1usize..50) {
        let mut buffer = SafetyBuffer::new(KPolicy::Exponent(0.5), ActionMatcher::DiscreteExact);
        let mut prev = 0;
        for i in 0..n {
            buffer.insert(FeatureVec::new(vec![i as f64]), ActionValue::Discrete(0), 0.0).unwrap();
            buffer.rebuild(i as u64).unwrap();
            prop_assert!(buffer.len() > prev);
            prev = buffer.len();
        }
    }

    #[test]
    fn gae_lambda_zero_closed_form(
        r in prop::collection::vec(-1.0f64..1.0, 10),
        v in prop::collection::vec(-1.0f64..1.0, 10),
        gamma in 0.5f64..1.0,
    ) {
        let dones: Vec<bool> = (0..10).map(|t| t == 9).collect();
        let (a, _) = gae(&r, &v, &dones, &[false; 10], &[0.0; 10], gamma, 0.0);
        for t in 0..10 {
            let next = if t == 9 { 0.0 } else { v[t + 1] };
            prop_assert_eq!(a[t], r[t] + gamma * next - v[t]);
        }
    }

    #[test]
    fn multiplier_stays_non_negative(costs in prop::collection::vec(0.0f64..3.0, 1..100)) {
        let mut lag = LagrangianState::default();
        for c in costs {
            lag = lagrangian_update(lag, c);
            prop_assert!(lag.multiplier >= 0.0);
        }
    }

    #[test]
    fn relative_failures_peak_at_one(values in prop::collection::vec(0.0f64..1000.0, 1..6)) {
        let rel = relative_cumulative_failures(&values).unwrap();
        prop_assert!(rel.iter().all(|r| (0.0..=1.0).contains(r)));
        if values.iter().any(|v| *v > 0.0) {
            prop_assert_eq!(rel.iter().copied().fold(0.0, f64::max), 1.0);
        }
    }
}
