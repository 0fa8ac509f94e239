//! Training loop: rollouts with danger-triggered action filtering, recovery
//! capture, per-episode cluster rebuilds, and the PPO update.

mod config;

use std::sync::Arc;

use rayon::prelude::*;

pub use config::{Algo, TrainConfig};

use crate::cmdp::{is_danger, is_failure, is_recovery, ActionSpace, ActionValue, DangerThreshold, FeatureVec};
use crate::envs::{make_env, EnvOptions, Environment, Layout};
use crate::error::{Error, Result};
use crate::policy::{
    compute_gae, lagrangian_update, policy_forward, ppo_update, Adam, LagrangianState, MlpParams, PolicyHead,
    RolloutBatch, UpdateStats,
};
use crate::rng::{self, derive};
use crate::safety_buffer::{ActionMatcher, SafetyBuffer};

const STREAM_ENV: u64 = 1;
const STREAM_ACTION: u64 = 2;
const STREAM_UPDATE: u64 = 3;
const STREAM_REBUILD: u64 = 4;
const STREAM_INIT: u64 = 5;
const STREAM_EVAL: u64 = 6;

/// Builds one environment instance per rollout worker.
pub type EnvFactory = Arc<dyn Fn() -> Result<Box<dyn Environment>> + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_reward: f64,
    /// Failed episodes divided by episodes this epoch.
    pub failure_rate: f64,
    pub episodes: usize,
    pub steps: usize,
    pub failures: u64,
    pub cum_failures: u64,
    pub buffer_size: usize,
    /// Danger steps where the buffer replaced the policy's action.
    pub filtered_actions: usize,
    /// Danger steps where the buffer was consulted.
    pub filter_queries: usize,
    pub rebuilds: usize,
    pub lagrange_multiplier: f64,
    pub entropy: f64,
    pub approx_kl: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,mean_reward,failure_rate,episodes,steps,failures,cum_failures,buffer_size,filtered_actions,filter_queries,rebuilds,lagrange_multiplier,entropy,approx_kl";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.mean_reward,
            self.failure_rate,
            self.episodes,
            self.steps,
            self.failures,
            self.cum_failures,
            self.buffer_size,
            self.filtered_actions,
            self.filter_queries,
            self.rebuilds,
            self.lagrange_multiplier,
            self.entropy,
            self.approx_kl
        )
    }
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = format!("{}\n", EpochMetrics::CSV_HEADER);
    for m in metrics {
        s.push_str(&m.csv_row());
        s.push('\n');
    }
    s
}

/// One consultation of the safety buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub epoch: usize,
    pub episode: usize,
    pub step: usize,
    /// Cost of the state that triggered the query.
    pub cost: f64,
    pub proposed: ActionValue,
    pub executed: ActionValue,
    pub substituted: bool,
    pub candidates: usize,
}

impl AuditEntry {
    pub const CSV_HEADER: &'static str = "epoch,episode,step,cost,proposed,executed,substituted,candidates";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.episode,
            self.step,
            self.cost,
            self.proposed,
            self.executed,
            u8::from(self.substituted),
            self.candidates
        )
    }
}

/// One recovery transition committed to the buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct InsertEntry {
    pub epoch: usize,
    pub episode: usize,
    pub step: usize,
    pub cost: f64,
    pub next_cost: f64,
    pub action: ActionValue,
    pub insert_order: u64,
}

struct PendingInsert {
    step: usize,
    cost: f64,
    next_cost: f64,
    feature: FeatureVec,
    action: ActionValue,
    reward: f64,
}

struct EpisodeOutcome {
    batch: RolloutBatch,
    failed_steps: Vec<bool>,
    reward: f64,
    failed: bool,
    audit: Vec<AuditEntry>,
    pending: Vec<PendingInsert>,
}

/// Read-only state shared by the episodes of one wave.
struct RolloutContext<'a> {
    params: &'a MlpParams,
    space: &'a ActionSpace,
    buffer: Option<&'a SafetyBuffer>,
    filtering: bool,
    threshold: DangerThreshold,
    seed: u64,
    epoch: usize,
}

fn run_episode(ctx: &RolloutContext<'_>, env: &mut dyn Environment, episode: usize) -> Result<EpisodeOutcome> {
    let labels = [ctx.epoch as u64, episode as u64];
    let mut rng = rng::rng_from(ctx.seed, &[STREAM_ACTION, labels[0], labels[1]]);
    let reset = env.reset(derive(ctx.seed, &[STREAM_ENV, labels[0], labels[1]]))?;
    let (mut obs, mut cost, mut feature) = (reset.obs, reset.cost, reset.feature);
    let mut out = EpisodeOutcome {
        batch: RolloutBatch::default(),
        failed_steps: Vec::new(),
        reward: 0.0,
        failed: false,
        audit: Vec::new(),
        pending: Vec::new(),
    };
    for step in 0.. {
        let (dist, value) = policy_forward(ctx.params, &obs)?;
        let raw = dist.sample(&mut rng);
        let proposed = ctx.space.admit(&raw)?;
        let mut stored = raw;
        let mut executed = proposed.clone();
        if let (true, Some(buffer)) = (ctx.filtering, ctx.buffer) {
            if is_danger(cost, ctx.threshold) {
                let q = buffer.query(&proposed, &feature)?;
                if q.substituted {
                    executed = q.action;
                    stored = executed.clone();
                }
                out.audit.push(AuditEntry {
                    epoch: ctx.epoch,
                    episode,
                    step,
                    cost: cost.value(),
                    proposed,
                    executed: executed.clone(),
                    substituted: q.substituted,
                    candidates: q.candidates,
                });
            }
        }
        let log_prob = dist.log_prob(&stored)?;
        let tr = env.step(&executed)?;
        if ctx.buffer.is_some() && is_recovery(cost, tr.cost, ctx.threshold) {
            out.pending.push(PendingInsert {
                step,
                cost: cost.value(),
                next_cost: tr.cost.value(),
                feature: feature.clone(),
                action: tr.action.clone(),
                reward: tr.reward,
            });
        }
        let bootstrap = if tr.truncated && !tr.done {
            policy_forward(ctx.params, &tr.obs)?.1
        } else {
            0.0
        };
        let failed = tr.failed || is_failure(tr.cost);
        out.reward += tr.reward;
        out.failed |= failed;
        out.failed_steps.push(failed);
        out.batch.push(
            obs,
            stored,
            log_prob,
            tr.reward,
            tr.cost.value(),
            value,
            tr.done,
            tr.truncated,
            bootstrap,
        );
        if tr.episode_over() {
            break;
        }
        obs = tr.obs;
        cost = tr.cost;
        feature = tr.feature;
    }
    Ok(out)
}

pub struct Trainer {
    config: TrainConfig,
    threshold: DangerThreshold,
    space: ActionSpace,
    envs: Vec<Box<dyn Environment>>,
    params: MlpParams,
    adam: Adam,
    buffer: Option<SafetyBuffer>,
    lagrangian: LagrangianState,
    epoch: usize,
    cum_failures: u64,
    history: Vec<EpochMetrics>,
    audit: Vec<AuditEntry>,
    inserts: Vec<InsertEntry>,
}

pub fn env_factory(config: &TrainConfig) -> Result<EnvFactory> {
    let options = EnvOptions {
        horizon: config.horizon,
        danger_radius: config.danger_radius,
        layout: config.layout.as_deref().map(Layout::load).transpose()?,
    };
    let id = config.env;
    make_env(id, &options)?;
    Ok(Arc::new(move || make_env(id, &options)))
}

pub fn make_matcher(space: &ActionSpace, bucket_width: f64) -> Result<ActionMatcher> {
    match space {
        ActionSpace::Discrete { .. } => Ok(ActionMatcher::DiscreteExact),
        ActionSpace::Continuous { low, .. } => ActionMatcher::grid_bucket(vec![bucket_width; low.len()], low.clone()),
    }
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let factory = env_factory(&config)?;
        Self::with_env_factory(config, factory)
    }

    /// Uses `factory` instead of the configured environment id.
    pub fn with_env_factory(config: TrainConfig, factory: EnvFactory) -> Result<Self> {
        config.validate()?;
        let threshold = config.danger_threshold()?;
        let envs = (0..config.rollout_workers).map(|_| factory()).collect::<Result<Vec<_>>>()?;
        let spec = envs[0].spec().clone();
        spec.validate()?;
        let space = spec.action_space.clone();
        let params = MlpParams::new(
            spec.obs_dim,
            PolicyHead::for_space(&space),
            &config.hidden,
            derive(config.seed, &[STREAM_INIT]),
        );
        let buffer = if config.algo.uses_buffer() {
            Some(SafetyBuffer::new(config.k_policy, make_matcher(&space, config.bucket_width)?).with_capacity(config.capacity)?)
        } else {
            None
        };
        Ok(Trainer {
            adam: Adam::new(params.num_params()),
            lagrangian: config.lagrangian(),
            threshold,
            space,
            envs,
            params,
            buffer,
            epoch: 0,
            cum_failures: 0,
            history: Vec::new(),
            audit: Vec::new(),
            inserts: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn buffer(&self) -> Option<&SafetyBuffer> {
        self.buffer.as_ref()
    }

    pub fn lagrangian(&self) -> LagrangianState {
        self.lagrangian
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn insert_log(&self) -> &[InsertEntry] {
        &self.inserts
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Collects one epoch of experience and applies the policy update. On a
    /// numerical failure the parameters are left at their last good values.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.epoch;
        let filtering = self.config.algo.uses_buffer() && epoch >= self.config.pretrain_epochs;
        let rebuild_seed = derive(self.config.seed, &[STREAM_REBUILD]);
        let workers = self.config.rollout_workers;

        let mut batch = RolloutBatch::default();
        let mut failed_steps = Vec::new();
        let (mut episodes, mut failures, mut reward_sum) = (0usize, 0u64, 0.0);
        let (mut filtered, mut queries, mut rebuilds) = (0usize, 0usize, 0usize);

        while batch.len() < self.config.steps_per_epoch {
            let ctx = RolloutContext {
                params: &self.params,
                space: &self.space,
                buffer: self.buffer.as_ref(),
                filtering,
                threshold: self.threshold,
                seed: self.config.seed,
                epoch,
            };
            let first = episodes;
            let outcomes: Vec<Result<EpisodeOutcome>> = if self.config.parallel && workers > 1 {
                self.envs
                    .par_iter_mut()
                    .enumerate()
                    .map(|(w, env)| run_episode(&ctx, env.as_mut(), first + w))
                    .collect()
            } else {
                self.envs
                    .iter_mut()
                    .enumerate()
                    .map(|(w, env)| run_episode(&ctx, env.as_mut(), first + w))
                    .collect()
            };
            // commit in worker order, rebuilding after each episode
            for (w, outcome) in outcomes.into_iter().enumerate() {
                let outcome = outcome?;
                let episode = first + w;
                episodes += 1;
                reward_sum += outcome.reward;
                failures += u64::from(outcome.failed);
                filtered += outcome.audit.iter().filter(|a| a.substituted).count();
                queries += outcome.audit.len();
                if let Some(buffer) = self.buffer.as_mut() {
                    for p in outcome.pending {
                        let insert_order = buffer.insert(p.feature, p.action.clone(), p.reward)?;
                        self.inserts.push(InsertEntry {
                            epoch,
                            episode,
                            step: p.step,
                            cost: p.cost,
                            next_cost: p.next_cost,
                            action: p.action,
                            insert_order,
                        });
                    }
                    buffer.rebuild(rebuild_seed)?;
                    rebuilds += 1;
                }
                self.audit.extend(outcome.audit);
                failed_steps.extend(outcome.failed_steps);
                batch.extend(outcome.batch);
            }
        }

        if self.config.algo.uses_lagrangian() {
            for (r, f) in batch.rewards.iter_mut().zip(&failed_steps) {
                if *f {
                    *r -= self.lagrangian.multiplier;
                }
            }
            self.lagrangian = lagrangian_update(self.lagrangian, failures as f64 / episodes as f64);
        }
        let stats = self.update(&mut batch, epoch)?;

        self.cum_failures += failures;
        let metrics = EpochMetrics {
            epoch,
            mean_reward: reward_sum / episodes as f64,
            failure_rate: failures as f64 / episodes as f64,
            episodes,
            steps: batch.len(),
            failures,
            cum_failures: self.cum_failures,
            buffer_size: self.buffer.as_ref().map_or(0, SafetyBuffer::len),
            filtered_actions: filtered,
            filter_queries: queries,
            rebuilds,
            lagrange_multiplier: self.lagrangian.multiplier,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
        };
        self.epoch += 1;
        self.history.push(metrics.clone());
        Ok(metrics)
    }

    fn update(&mut self, batch: &mut RolloutBatch, epoch: usize) -> Result<UpdateStats> {
        let (adv, ret) = compute_gae(batch, self.config.ppo.gamma, self.config.ppo.lambda);
        batch.advantages = adv;
        batch.returns = ret;
        batch.normalize_advantages();
        let mut rng = rng::rng_from(self.config.seed, &[STREAM_UPDATE, epoch as u64]);
        let mut params = self.params.clone();
        let mut adam = self.adam.clone();
        let stats = ppo_update(&mut params, &mut adam, batch, &self.config.ppo, &mut rng)
            .map_err(|e| Error::Numerical(format!("epoch {epoch}: {e}")))?;
        self.params = params;
        self.adam = adam;
        Ok(stats)
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self) -> Result<&[EpochMetrics]> {
        while !self.is_finished() {
            self.run_epoch()?;
        }
        Ok(&self.history)
    }

    /// Greedy test-time evaluation on fresh episodes, optionally filtering
    /// with the frozen buffer.
    pub fn evaluate(&self, episodes: usize, use_buffer: bool) -> Result<EvalReport> {
        let mut env = env_factory(&self.config)?()?;
        let buffer = if use_buffer { self.buffer.as_ref() } else { None };
        evaluate(
            &self.params,
            env.as_mut(),
            episodes,
            buffer,
            self.threshold,
            derive(self.config.seed, &[STREAM_EVAL]),
        )
    }
}

pub fn run_training(config: TrainConfig) -> Result<Vec<EpochMetrics>> {
    let mut trainer = Trainer::new(config)?;
    trainer.run()?;
    Ok(trainer.history)
}

/// A deterministic test-time policy.
pub trait GreedyPolicy {
    fn greedy_action(&self, obs: &[f64]) -> Result<ActionValue>;
}

impl GreedyPolicy for MlpParams {
    fn greedy_action(&self, obs: &[f64]) -> Result<ActionValue> {
        Ok(policy_forward(self, obs)?.0.greedy())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub mean_reward: f64,
    pub failure_rate: f64,
    pub episodes: usize,
    pub substitutions: usize,
}

/// Runs `episodes` greedy episodes. With a buffer, danger states are
/// filtered exactly as in training; nothing is inserted or rebuilt.
pub fn evaluate(
    policy: &dyn GreedyPolicy,
    env: &mut dyn Environment,
    episodes: usize,
    buffer: Option<&SafetyBuffer>,
    threshold: DangerThreshold,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let space = env.spec().action_space.clone();
    let (mut reward, mut failures, mut substitutions) = (0.0, 0usize, 0usize);
    for ep in 0..episodes {
        let reset = env.reset(derive(seed, &[ep as u64]))?;
        let (mut obs, mut cost, mut feature) = (reset.obs, reset.cost, reset.feature);
        let mut failed = false;
        loop {
            let mut action = space.admit(&policy.greedy_action(&obs)?)?;
            if let Some(b) = buffer {
                if is_danger(cost, threshold) {
                    let q = b.query(&action, &feature)?;
                    substitutions += usize::from(q.substituted);
                    action = q.action;
                }
            }
            let tr = env.step(&action)?;
            reward += tr.reward;
            failed |= tr.failed || is_failure(tr.cost);
            if tr.episode_over() {
                break;
            }
            obs = tr.obs;
            cost = tr.cost;
            feature = tr.feature;
        }
        failures += usize::from(failed);
    }
    Ok(EvalReport {
        mean_reward: reward / episodes as f64,
        failure_rate: failures as f64 / episodes as f64,
        episodes,
        substitutions,
    })
}
