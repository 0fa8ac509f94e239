use crate::cmdp::{is_failure, CostSignal};

/// Adaptive penalty on failures, updated by projected dual ascent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangianState {
    pub multiplier: f64,
    pub lr: f64,
    /// Tolerated failures per episode.
    pub cost_limit: f64,
}

impl Default for LagrangianState {
    fn default() -> Self {
        LagrangianState {
            multiplier: 0.0,
            lr: 0.05,
            cost_limit: 0.025,
        }
    }
}

impl LagrangianState {
    /// Reward seen by the learner: failure steps lose `multiplier`.
    pub fn penalized_reward(&self, reward: f64, cost: CostSignal) -> f64 {
        if is_failure(cost) {
            reward - self.multiplier
        } else {
            reward
        }
    }
}

/// `multiplier <- max(0, multiplier + lr * (episode_cost - cost_limit))`.
pub fn lagrangian_update(lag: LagrangianState, episode_cost: f64) -> LagrangianState {
    LagrangianState {
        multiplier: (lag.multiplier + lag.lr * (episode_cost - lag.cost_limit)).max(0.0),
        ..lag
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn update_examples() {
        let lag = LagrangianState {
            multiplier: 0.4,
            lr: 0.1,
            cost_limit: 0.3,
        };
        assert_eq!(lagrangian_update(lag, 0.3).multiplier, 0.4);

        let zero = LagrangianState { multiplier: 0.0, ..lag };
        assert_eq!(lagrangian_update(zero, 0.1).multiplier, 0.0);

        let l = LagrangianState { multiplier: 0.5, ..lag };
        assert!((lagrangian_update(l, 0.8).multiplier - 0.55).abs() < 1e-15);
    }

    #[test]
    fn penalty_applies_to_failures_only() {
        let lag = LagrangianState {
            multiplier: 2.0,
            ..Default::default()
        };
        assert_eq!(lag.penalized_reward(1.0, CostSignal::FAILURE), -1.0);
        assert_eq!(lag.penalized_reward(1.0, CostSignal::new(0.7)), 1.0);
    }

    proptest! {
        #[test]
        fn multiplier_never_negative(costs in prop::collection::vec(0.0f64..2.0, 1..50), lr in 0.001f64..1.0) {
            let mut lag = LagrangianState { lr, ..Default::default() };
            for c in costs {
                lag = lagrangian_update(lag, c);
                prop_assert!(lag.multiplier >= 0.0);
            }
        }
    }
}
