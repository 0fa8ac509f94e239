use crate::cmdp::ActionValue;
use crate::error::{Error, Result};

/// On-policy trajectories collected during one epoch, episodes stored back
/// to back.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<ActionValue>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub values: Vec<f64>,
    /// True terminal: no bootstrapping past this step.
    pub dones: Vec<bool>,
    /// Episode cut short (horizon); bootstrap from `bootstrap_values`.
    pub truncated: Vec<bool>,
    /// `V(s_{t+1})` where the episode was truncated at `t`, else unused.
    pub bootstrap_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        obs: Vec<f64>,
        action: ActionValue,
        log_prob: f64,
        reward: f64,
        cost: f64,
        value: f64,
        done: bool,
        truncated: bool,
        bootstrap_value: f64,
    ) {
        self.obs.push(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.costs.push(cost);
        self.values.push(value);
        self.dones.push(done);
        self.truncated.push(truncated);
        self.bootstrap_values.push(bootstrap_value);
    }

    pub fn extend(&mut self, other: RolloutBatch) {
        self.obs.extend(other.obs);
        self.actions.extend(other.actions);
        self.log_probs.extend(other.log_probs);
        self.rewards.extend(other.rewards);
        self.costs.extend(other.costs);
        self.values.extend(other.values);
        self.dones.extend(other.dones);
        self.truncated.extend(other.truncated);
        self.bootstrap_values.extend(other.bootstrap_values);
        self.advantages.extend(other.advantages);
        self.returns.extend(other.returns);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.obs.len(),
            self.actions.len(),
            self.log_probs.len(),
            self.costs.len(),
            self.values.len(),
            self.dones.len(),
            self.truncated.len(),
            self.bootstrap_values.len(),
        ];
        if lens.iter().any(|l| *l != n) {
            return Err(Error::InvalidArgument("rollout arrays differ in length".into()));
        }
        if self.advantages.len() != self.returns.len() || (!self.advantages.is_empty() && self.advantages.len() != n) {
            return Err(Error::InvalidArgument("advantage arrays do not cover the batch".into()));
        }
        Ok(())
    }

    /// Shifts and scales advantages to zero mean and unit standard deviation.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len();
        if n == 0 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n as f64;
        let var = self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt() + 1e-8;
        for a in &mut self.advantages {
            *a = (*a - mean) / std;
        }
    }
}
