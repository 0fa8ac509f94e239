//! Clipped-surrogate PPO loss with hand-written gradients and an Adam step.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;

use crate::cmdp::ActionValue;
use crate::error::{Error, Result};
use crate::policy::network::{log_softmax, MlpParams, PolicyHead};
use crate::policy::rollout::RolloutBatch;
use crate::rng::Rng;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub clip: f64,
    pub lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub update_epochs: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            lr: 3e-4,
            gamma: 0.99,
            lambda: 0.95,
            update_epochs: 10,
            minibatch_size: 64,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: Some(0.5),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip ratio must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("gamma and lambda must lie in (0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.update_epochs == 0 || self.minibatch_size == 0 {
            return bad("update epochs and minibatch size must be positive");
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("loss coefficients must be non-negative");
        }
        if matches!(self.max_grad_norm, Some(g) if !(g > 0.0)) {
            return bad("max gradient norm must be positive");
        }
        Ok(())
    }
}

/// Samples used for one gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub obs: Array2<f64>,
    pub actions: Vec<ActionValue>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Minibatch {
    pub fn from_batch(batch: &RolloutBatch, indices: &[usize]) -> Result<Self> {
        if batch.advantages.len() != batch.len() {
            return Err(Error::InvalidArgument("advantages not computed for batch".into()));
        }
        let dim = batch.obs.first().map_or(0, Vec::len);
        let mut obs = Array2::zeros((indices.len(), dim));
        for (row, &i) in indices.iter().enumerate() {
            let o = &batch.obs[i];
            if o.len() != dim {
                return Err(Error::InvalidArgument("ragged observations in batch".into()));
            }
            obs.row_mut(row).iter_mut().zip(o).for_each(|(d, s)| *d = *s);
        }
        Ok(Minibatch {
            obs,
            actions: indices.iter().map(|&i| batch.actions[i].clone()).collect(),
            old_log_probs: indices.iter().map(|&i| batch.log_probs[i]).collect(),
            advantages: indices.iter().map(|&i| batch.advantages[i]).collect(),
            returns: indices.iter().map(|&i| batch.returns[i]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    /// `policy + value_coef * value - entropy_coef * entropy`.
    pub total: f64,
    /// Negated mean clipped surrogate.
    pub policy: f64,
    /// Mean squared value error.
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

pub fn ppo_loss(params: &MlpParams, mb: &Minibatch, config: &PpoConfig) -> Result<LossBreakdown> {
    evaluate(params, mb, config, false).map(|(l, _)| l)
}

/// Loss and its gradient with respect to every parameter.
pub fn ppo_loss_and_grad(params: &MlpParams, mb: &Minibatch, config: &PpoConfig) -> Result<(LossBreakdown, MlpParams)> {
    evaluate(params, mb, config, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

fn evaluate(params: &MlpParams, mb: &Minibatch, config: &PpoConfig, want_grad: bool) -> Result<(LossBreakdown, Option<MlpParams>)> {
    let n = mb.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    if mb.obs.ncols() != params.obs_dim {
        return Err(Error::InvalidArgument(format!(
            "observation has dimension {}, network expects {}",
            mb.obs.ncols(),
            params.obs_dim
        )));
    }
    let nf = n as f64;
    let x: ArrayView2<f64> = mb.obs.view();
    let actor_acts = params.actor.forward_cached(x);
    let critic_acts = params.critic.forward_cached(x);
    let head = actor_acts.last().expect("output");
    let values = critic_acts.last().expect("output");

    let width = params.head.width();
    let mut d_head = Array2::<f64>::zeros((n, width));
    let mut d_values = Array2::<f64>::zeros((n, 1));
    let mut d_log_std = vec![0.0; params.log_std.len()];
    let mut out = LossBreakdown::default();
    let (lo, hi) = (1.0 - config.clip, 1.0 + config.clip);

    for i in 0..n {
        let z = head.row(i);
        let z = z.as_slice().expect("standard layout");
        // log-prob, entropy, and their gradients w.r.t. the head outputs
        let (logp, ent, dlogp, dent): (f64, f64, Vec<f64>, Vec<f64>) = match (params.head, &mb.actions[i]) {
            (PolicyHead::Categorical { actions }, ActionValue::Discrete(a)) if *a < actions => {
                let logp_all = log_softmax(z);
                let p: Vec<f64> = logp_all.iter().map(|l| l.exp()).collect();
                let h = -p.iter().zip(&logp_all).map(|(p, l)| p * l).sum::<f64>();
                let dlogp = (0..actions).map(|j| f64::from(u8::from(j == *a)) - p[j]).collect();
                let dent = (0..actions).map(|j| -p[j] * (logp_all[j] + h)).collect();
                (logp_all[*a], h, dlogp, dent)
            }
            (PolicyHead::Gaussian { dim }, ActionValue::Continuous(a)) if a.len() == dim => {
                let mut logp = 0.0;
                let mut dlogp = vec![0.0; dim];
                for d in 0..dim {
                    let ls = params.log_std[d];
                    let s = ls.exp();
                    let u = (a[d] - z[d]) / s;
                    logp += -0.5 * u * u - ls - HALF_LN_2PI;
                    dlogp[d] = u / s;
                }
                let h = params.log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum();
                (logp, h, dlogp, vec![0.0; dim])
            }
            _ => return Err(Error::Usage("action does not fit the policy head".into())),
        };

        let adv = mb.advantages[i];
        let log_ratio = logp - mb.old_log_probs[i];
        let ratio = log_ratio.exp();
        let surr1 = ratio * adv;
        let surr2 = ratio.clamp(lo, hi) * adv;
        out.policy -= surr1.min(surr2) / nf;
        out.entropy += ent / nf;
        out.approx_kl += ((ratio - 1.0) - log_ratio) / nf;
        if ratio < lo || ratio > hi {
            out.clip_fraction += 1.0 / nf;
        }
        let v_err = values[[i, 0]] - mb.returns[i];
        out.value += v_err * v_err / nf;

        if want_grad {
            let g_logp = if surr1 <= surr2 { -ratio * adv / nf } else { 0.0 };
            for j in 0..width {
                d_head[[i, j]] = g_logp * dlogp[j] - config.entropy_coef * dent[j] / nf;
            }
            if let (PolicyHead::Gaussian { .. }, ActionValue::Continuous(a)) = (params.head, &mb.actions[i]) {
                for (d, g) in d_log_std.iter_mut().enumerate() {
                    let u = (a[d] - z[d]) / params.log_std[d].exp();
                    *g += g_logp * (u * u - 1.0) - config.entropy_coef / nf;
                }
            }
            d_values[[i, 0]] = 2.0 * config.value_coef * v_err / nf;
        }
    }
    out.total = out.policy + config.value_coef * out.value - config.entropy_coef * out.entropy;
    if !out.total.is_finite() {
        return Err(Error::Numerical(format!("non-finite PPO loss {out:?}")));
    }
    if !want_grad {
        return Ok((out, None));
    }
    let grads = MlpParams {
        obs_dim: params.obs_dim,
        head: params.head,
        actor: params.actor.backward(&actor_acts, d_head),
        critic: params.critic.backward(&critic_acts, d_values),
        log_std: d_log_std.into(),
    };
    Ok((out, Some(grads)))
}

/// Adam over the flattened parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descends along `grad` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Averages over all minibatch steps of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Runs `update_epochs` passes of shuffled minibatch Adam steps over the
/// batch. Advantages are used as stored; normalize them beforehand.
pub fn ppo_update(
    params: &mut MlpParams,
    adam: &mut Adam,
    batch: &RolloutBatch,
    config: &PpoConfig,
    rng: &mut Rng,
) -> Result<UpdateStats> {
    config.validate()?;
    batch.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty rollout batch".into()));
    }
    if batch.advantages.iter().any(|a| !a.is_finite()) {
        return Err(Error::Numerical("non-finite advantages".into()));
    }
    let mut stats = UpdateStats::default();
    let mut flat = params.to_flat();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    for _ in 0..config.update_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_size) {
            let mb = Minibatch::from_batch(batch, chunk)?;
            let (loss, grads) = ppo_loss_and_grad(params, &mb, config)?;
            let mut g = grads.to_flat();
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite gradient".into()));
            }
            if let Some(cap) = config.max_grad_norm {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > cap {
                    g.iter_mut().for_each(|v| *v *= cap / norm);
                }
            }
            adam.step(&mut flat, &g, config.lr);
            params.set_flat(&flat);
            stats.policy_loss += loss.policy;
            stats.value_loss += loss.value;
            stats.entropy += loss.entropy;
            stats.approx_kl += loss.approx_kl;
            stats.clip_fraction += loss.clip_fraction;
            stats.minibatches += 1;
        }
    }
    let m = stats.minibatches as f64;
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.approx_kl /= m;
    stats.clip_fraction /= m;
    if !params.all_finite() {
        return Err(Error::Numerical("parameters became non-finite".into()));
    }
    Ok(stats)
}
