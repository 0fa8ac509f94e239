//! Constrained-MDP vocabulary: actions, continuous costs, safety features and
//! the danger / recovery / failure predicates.

use std::fmt;
use std::ops::Deref;

use crate::error::{Error, Result};

/// Costs within this distance of 1 count as a failure.
pub const FAILURE_EPS: f64 = 1e-9;

/// An action emitted by a policy or stored in the safety buffer.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionValue {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl ActionValue {
    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionValue::Discrete(_))
    }

    /// Flat numeric view; discrete indices become a single component.
    pub fn components(&self) -> Vec<f64> {
        match self {
            ActionValue::Discrete(i) => vec![*i as f64],
            ActionValue::Continuous(v) => v.clone(),
        }
    }
}

impl fmt::Display for ActionValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionValue::Discrete(i) => write!(f, "{i}"),
            ActionValue::Continuous(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
                write!(f, "{}", parts.join(" "))
            }
        }
    }
}

/// The action space an environment declares.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete { n: usize },
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    /// Number of discrete actions, or the dimension of a continuous action.
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete { n } => *n,
            ActionSpace::Continuous { low, .. } => low.len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete { .. })
    }

    /// Checks the action kind and range; continuous actions are clamped into
    /// the declared bounds.
    pub fn admit(&self, action: &ActionValue) -> Result<ActionValue> {
        match (self, action) {
            (ActionSpace::Discrete { n }, ActionValue::Discrete(i)) => {
                if i < n {
                    Ok(action.clone())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "discrete action {i} out of range for {n} actions"
                    )))
                }
            }
            (ActionSpace::Continuous { low, high }, ActionValue::Continuous(v)) => {
                if v.len() != low.len() {
                    return Err(Error::InvalidArgument(format!(
                        "continuous action has dimension {}, expected {}",
                        v.len(),
                        low.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numerical("non-finite action component".into()));
                }
                Ok(ActionValue::Continuous(
                    v.iter()
                        .zip(low.iter().zip(high))
                        .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
                        .collect(),
                ))
            }
            _ => Err(Error::Usage("action kind does not match the action space".into())),
        }
    }
}

/// Continuous safety cost in `[0, 1]`: 0 is safe, 1 is failure.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct CostSignal(f64);

impl CostSignal {
    pub const SAFE: CostSignal = CostSignal(0.0);
    pub const FAILURE: CostSignal = CostSignal(1.0);

    /// Clamps into `[0, 1]`. NaN is treated as failure.
    pub fn new(value: f64) -> Self {
        if value.is_nan() {
            CostSignal(1.0)
        } else {
            CostSignal(value.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Cost level at which the agent is considered in danger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DangerThreshold(f64);

impl DangerThreshold {
    pub fn new(c_hat: f64) -> Result<Self> {
        if c_hat > 0.0 && c_hat < 1.0 {
            Ok(DangerThreshold(c_hat))
        } else {
            Err(Error::InvalidArgument(format!(
                "danger threshold must lie in (0, 1), got {c_hat}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for DangerThreshold {
    fn default() -> Self {
        DangerThreshold(0.5)
    }
}

/// Safety feature vector extracted from a state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVec(pub Vec<f64>);

impl FeatureVec {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVec(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVec {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for FeatureVec {
    fn from(v: Vec<f64>) -> Self {
        FeatureVec(v)
    }
}

/// One environment step as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub obs: Vec<f64>,
    /// The action actually applied (continuous actions after clamping).
    pub action: ActionValue,
    pub reward: f64,
    pub cost: CostSignal,
    pub feature: FeatureVec,
    /// True terminal (goal or failure). Horizon truncation sets `truncated`.
    pub done: bool,
    pub truncated: bool,
    pub failed: bool,
}

impl TransitionRecord {
    pub fn episode_over(&self) -> bool {
        self.done || self.truncated
    }
}

pub fn is_danger(cost: CostSignal, threshold: DangerThreshold) -> bool {
    cost.value() >= threshold.value()
}

pub fn is_recovery(cost_t: CostSignal, cost_next: CostSignal, threshold: DangerThreshold) -> bool {
    cost_t.value() >= threshold.value() && cost_next.value() < threshold.value()
}

pub fn is_failure(cost: CostSignal) -> bool {
    cost.value() >= 1.0 - FAILURE_EPS
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> CostSignal {
        CostSignal::new(v)
    }

    #[test]
    fn danger_predicate() {
        let t = DangerThreshold::default();
        assert_eq!(t.value(), 0.5);
        assert!(is_danger(c(0.6), t));
        assert!(!is_danger(c(0.0), t));
        assert!(is_danger(c(0.5), t));
    }

    #[test]
    fn recovery_predicate() {
        let t = DangerThreshold::default();
        assert!(is_recovery(c(0.7), c(0.2), t));
        assert!(!is_recovery(c(0.7), c(0.6), t));
        assert!(!is_recovery(c(0.3), c(0.2), t));
    }

    #[test]
    fn failure_predicate() {
        assert!(is_failure(c(1.0)));
        assert!(!is_failure(c(0.99)));
        assert!(!is_failure(c(0.0)));
        assert!(is_failure(c(1.0 - 1e-10)));
    }

    #[test]
    fn failure_implies_danger_for_any_threshold() {
        for i in 1..100 {
            let t = DangerThreshold::new(i as f64 / 100.0).unwrap();
            assert!(is_danger(CostSignal::FAILURE, t));
        }
    }

    #[test]
    fn recovery_sweep_is_consistent_with_danger() {
        let t = DangerThreshold::default();
        for a in 0..=10 {
            for b in 0..=10 {
                let (ca, cb) = (c(a as f64 / 10.0), c(b as f64 / 10.0));
                if is_recovery(ca, cb, t) {
                    assert!(is_danger(ca, t) && !is_danger(cb, t));
                }
                assert_eq!(is_recovery(ca, cb, t), is_danger(ca, t) && !is_danger(cb, t));
            }
        }
    }

    #[test]
    fn threshold_rejects_out_of_range() {
        assert!(DangerThreshold::new(0.0).is_err());
        assert!(DangerThreshold::new(1.0).is_err());
        assert!(DangerThreshold::new(0.25).is_ok());
    }

    #[test]
    fn cost_is_clamped() {
        assert_eq!(c(1.7).value(), 1.0);
        assert_eq!(c(-0.2).value(), 0.0);
        assert_eq!(c(f64::NAN).value(), 1.0);
    }

    #[test]
    fn action_space_admission() {
        let d = ActionSpace::Discrete { n: 5 };
        assert!(d.admit(&ActionValue::Discrete(4)).is_ok());
        assert!(d.admit(&ActionValue::Discrete(5)).is_err());
        assert!(matches!(
            d.admit(&ActionValue::Continuous(vec![0.0])),
            Err(Error::Usage(_))
        ));
        let cspace = ActionSpace::Continuous {
            low: vec![-1.0, -1.0],
            high: vec![1.0, 1.0],
        };
        assert_eq!(
            cspace.admit(&ActionValue::Continuous(vec![2.0, -0.5])).unwrap(),
            ActionValue::Continuous(vec![1.0, -0.5])
        );
    }
}
