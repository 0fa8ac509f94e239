//! Small hand-scripted environments shared by the integration tests.
#![allow(dead_code)]

pub mod oracle;

use saferl::cmdp::{is_failure, ActionSpace, ActionValue, CostSignal, FeatureVec, TransitionRecord};
use saferl::envs::{EnvSpec, Environment, ResetOutput};
use saferl::trainer::GreedyPolicy;
use saferl::Result;

/// Replays a fixed cost sequence regardless of the actions taken: reset
/// reports `costs[0]`, step `t` reports `costs[t + 1]`. The episode ends on
/// failure or when the script runs out.
pub struct ScriptedEnv {
    spec: EnvSpec,
    costs: Vec<f64>,
    t: usize,
}

impl ScriptedEnv {
    pub fn new(costs: &[f64]) -> Self {
        ScriptedEnv {
            spec: EnvSpec {
                obs_dim: 2,
                action_space: ActionSpace::Discrete { n: 3 },
                feature_dim: 2,
                horizon: costs.len() - 1,
                danger_radius: 2.0,
                contact_radius: 0.5,
            },
            costs: costs.to_vec(),
            t: 0,
        }
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.t as f64 / 10.0, self.costs[self.t]]
    }

    fn feature(&self) -> FeatureVec {
        FeatureVec::new(vec![1.0, if self.costs[self.t] >= 0.5 { 1.0 } else { 0.0 }])
    }
}

impl Environment for ScriptedEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Result<ResetOutput> {
        self.t = 0;
        Ok(ResetOutput {
            obs: self.obs(),
            cost: CostSignal::new(self.costs[0]),
            feature: self.feature(),
        })
    }

    fn step(&mut self, action: &ActionValue) -> Result<TransitionRecord> {
        let action = self.spec.action_space.admit(action)?;
        self.t += 1;
        let cost = CostSignal::new(self.costs[self.t]);
        let failed = is_failure(cost);
        let last = self.t + 1 == self.costs.len();
        Ok(TransitionRecord {
            obs: self.obs(),
            action,
            reward: 1.0,
            cost,
            feature: self.feature(),
            done: failed,
            truncated: last && !failed,
            failed,
        })
    }
}

/// A corridor with a hazard at `hazard`. Action 0 moves right, 1 moves left,
/// 2 stays. The agent starts at 0; distance 1 from the hazard costs 0.7,
/// reaching it fails.
pub struct TrapEnv {
    spec: EnvSpec,
    hazard: i32,
    pos: i32,
    t: usize,
}

impl TrapEnv {
    pub fn new(hazard: i32, horizon: usize) -> Self {
        TrapEnv {
            spec: EnvSpec {
                obs_dim: 1,
                action_space: ActionSpace::Discrete { n: 3 },
                feature_dim: 1,
                horizon,
                danger_radius: 2.0,
                contact_radius: 0.5,
            },
            hazard,
            pos: 0,
            t: 0,
        }
    }

    fn cost(&self) -> CostSignal {
        match self.hazard - self.pos {
            d if d <= 0 => CostSignal::FAILURE,
            1 => CostSignal::new(0.7),
            _ => CostSignal::SAFE,
        }
    }

    fn feature(&self) -> FeatureVec {
        FeatureVec::new(vec![(self.hazard - self.pos) as f64])
    }
}

impl Environment for TrapEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Result<ResetOutput> {
        self.pos = 0;
        self.t = 0;
        Ok(ResetOutput {
            obs: vec![self.pos as f64],
            cost: self.cost(),
            feature: self.feature(),
        })
    }

    fn step(&mut self, action: &ActionValue) -> Result<TransitionRecord> {
        let action = self.spec.action_space.admit(action)?;
        self.pos += match action {
            ActionValue::Discrete(0) => 1,
            ActionValue::Discrete(1) => -1,
            _ => 0,
        };
        self.t += 1;
        let cost = self.cost();
        let failed = is_failure(cost);
        Ok(TransitionRecord {
            obs: vec![self.pos as f64],
            action,
            reward: if failed { 0.0 } else { 0.1 },
            cost,
            feature: self.feature(),
            done: failed,
            truncated: !failed && self.t >= self.spec.horizon,
            failed,
        })
    }
}

/// Always proposes the same action.
pub struct FixedPolicy(pub ActionValue);

impl GreedyPolicy for FixedPolicy {
    fn greedy_action(&self, _obs: &[f64]) -> Result<ActionValue> {
        Ok(self.0.clone())
    }
}
