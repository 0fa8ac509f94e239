use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::cmdp::{ActionSpace, ActionValue};
use crate::error::{Error, Result};
use crate::policy::mlp::Mlp;
use crate::rng::{self, Rng};

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
const LOG_STD_INIT: f64 = -std::f64::consts::LN_2; // ln 0.5
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyHead {
    Categorical { actions: usize },
    Gaussian { dim: usize },
}

impl PolicyHead {
    pub fn for_space(space: &ActionSpace) -> Self {
        match space {
            ActionSpace::Discrete { n } => PolicyHead::Categorical { actions: *n },
            ActionSpace::Continuous { low, .. } => PolicyHead::Gaussian { dim: low.len() },
        }
    }

    pub fn width(self) -> usize {
        match self {
            PolicyHead::Categorical { actions } => actions,
            PolicyHead::Gaussian { dim } => dim,
        }
    }
}

/// Actor and critic networks plus the state-independent log-std of the
/// Gaussian head (empty for categorical policies).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub obs_dim: usize,
    pub head: PolicyHead,
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: Array1<f64>,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

impl MlpParams {
    pub fn new(obs_dim: usize, head: PolicyHead, hidden: &[usize], seed: u64) -> Self {
        let mut rng = rng::rng_from(seed, &[0x696e_6974]);
        let hidden_gain = std::f64::consts::SQRT_2;
        let mut actor_gains = vec![hidden_gain; hidden.len()];
        actor_gains.push(0.01);
        let mut critic_gains = vec![hidden_gain; hidden.len()];
        critic_gains.push(1.0);
        let actor = Mlp::orthogonal(&layer_sizes(obs_dim, hidden, head.width()), &actor_gains, &mut rng);
        let critic = Mlp::orthogonal(&layer_sizes(obs_dim, hidden, 1), &critic_gains, &mut rng);
        MlpParams {
            obs_dim,
            head,
            actor,
            critic,
            log_std: Self::initial_log_std(head),
        }
    }

    pub fn zeros(obs_dim: usize, head: PolicyHead, hidden: &[usize]) -> Self {
        MlpParams {
            obs_dim,
            head,
            actor: Mlp::zeros(&layer_sizes(obs_dim, hidden, head.width())),
            critic: Mlp::zeros(&layer_sizes(obs_dim, hidden, 1)),
            log_std: match head {
                PolicyHead::Categorical { .. } => Array1::zeros(0),
                PolicyHead::Gaussian { dim } => Array1::zeros(dim),
            },
        }
    }

    fn initial_log_std(head: PolicyHead) -> Array1<f64> {
        match head {
            PolicyHead::Categorical { .. } => Array1::zeros(0),
            PolicyHead::Gaussian { dim } => Array1::from_elem(dim, LOG_STD_INIT),
        }
    }

    /// Same shape, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let hidden: Vec<usize> = self.actor.layers[1..].iter().map(|l| l.weight.nrows()).collect();
        Self::zeros(self.obs_dim, self.head, &hidden)
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.actor.layers[1..].iter().map(|l| l.weight.nrows()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.actor.num_params() + self.critic.num_params() + self.log_std.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.actor.write_flat(&mut out);
        self.critic.write_flat(&mut out);
        out.extend(self.log_std.iter());
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let rest = self.actor.read_flat(flat);
        let rest = self.critic.read_flat(rest);
        self.log_std.iter_mut().zip(rest).for_each(|(d, s)| *d = *s);
    }

    pub fn all_finite(&self) -> bool {
        self.actor.all_finite() && self.critic.all_finite() && self.log_std.iter().all(|v| v.is_finite())
    }

    /// Head outputs (logits or means) and values for a batch of observations.
    pub fn forward_batch(&self, obs: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
        let head = self.actor.forward(obs);
        let values = self.critic.forward(obs).column(0).to_owned();
        (head, values)
    }

    pub fn distribution(&self, head_row: &[f64]) -> ActionDist {
        match self.head {
            PolicyHead::Categorical { .. } => ActionDist::Categorical {
                probs: softmax(head_row),
            },
            PolicyHead::Gaussian { .. } => ActionDist::Gaussian {
                mean: head_row.to_vec(),
                std: self.log_std.iter().map(|l| l.exp()).collect(),
            },
        }
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub(crate) fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean.iter().zip(log_std))
        .map(|(a, (m, ls))| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionDist {
    Categorical { probs: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl ActionDist {
    pub fn sample(&self, rng: &mut Rng) -> ActionValue {
        match self {
            ActionDist::Categorical { probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return ActionValue::Discrete(i);
                    }
                }
                ActionValue::Discrete(probs.len() - 1)
            }
            ActionDist::Gaussian { mean, std } => ActionValue::Continuous(
                mean.iter()
                    .zip(std)
                    .map(|(m, s)| {
                        let e: f64 = StandardNormal.sample(rng);
                        m + s * e
                    })
                    .collect(),
            ),
        }
    }

    /// Argmax for categorical policies (lowest index on ties), the mean for
    /// Gaussian ones.
    pub fn greedy(&self) -> ActionValue {
        match self {
            ActionDist::Categorical { probs } => {
                let mut best = 0;
                for (i, p) in probs.iter().enumerate() {
                    if *p > probs[best] {
                        best = i;
                    }
                }
                ActionValue::Discrete(best)
            }
            ActionDist::Gaussian { mean, .. } => ActionValue::Continuous(mean.clone()),
        }
    }

    pub fn log_prob(&self, action: &ActionValue) -> Result<f64> {
        match (self, action) {
            (ActionDist::Categorical { probs }, ActionValue::Discrete(i)) => probs
                .get(*i)
                .map(|p| p.ln())
                .ok_or_else(|| Error::InvalidArgument(format!("action {i} outside the categorical head"))),
            (ActionDist::Gaussian { mean, std }, ActionValue::Continuous(a)) if a.len() == mean.len() => {
                let log_std: Vec<f64> = std.iter().map(|s| s.ln()).collect();
                Ok(gaussian_log_prob(a, mean, &log_std))
            }
            _ => Err(Error::Usage("action does not fit the policy head".into())),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            ActionDist::Categorical { probs } => -probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>(),
            ActionDist::Gaussian { std, .. } => std.iter().map(|s| s.ln() + 0.5 + HALF_LN_2PI).sum(),
        }
    }
}

/// Action distribution and value estimate for one observation.
pub fn policy_forward(params: &MlpParams, obs: &[f64]) -> Result<(ActionDist, f64)> {
    if obs.len() != params.obs_dim {
        return Err(Error::InvalidArgument(format!(
            "observation has dimension {}, network expects {}",
            obs.len(),
            params.obs_dim
        )));
    }
    let x = ArrayView2::from_shape((1, obs.len()), obs).expect("contiguous row");
    let (head, values) = params.forward_batch(x);
    let head_row = head.row(0).to_vec();
    let value = values[0];
    if !value.is_finite() || head_row.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite network output (value {value}, head {head_row:?})"
        )));
    }
    Ok((params.distribution(&head_row), value))
}
