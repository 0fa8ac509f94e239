use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cmdp::DangerThreshold;
use crate::envs::EnvId;
use crate::error::{Error, Result};
use crate::policy::{LagrangianState, PpoConfig, DEFAULT_HIDDEN};
use crate::safety_buffer::KPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algo {
    Ppo,
    PpoLagrangian,
    PpoBuffer,
    PpoLagrangianBuffer,
}

impl Algo {
    pub const ALL: [Algo; 4] = [Algo::Ppo, Algo::PpoLagrangian, Algo::PpoBuffer, Algo::PpoLagrangianBuffer];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Ppo => "ppo",
            Algo::PpoLagrangian => "ppo_lagrangian",
            Algo::PpoBuffer => "ppo_buffer",
            Algo::PpoLagrangianBuffer => "ppo_lagrangian_buffer",
        }
    }

    pub fn uses_buffer(self) -> bool {
        matches!(self, Algo::PpoBuffer | Algo::PpoLagrangianBuffer)
    }

    pub fn uses_lagrangian(self) -> bool {
        matches!(self, Algo::PpoLagrangian | Algo::PpoLagrangianBuffer)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace(['-', '+'], "_");
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm '{s}'")))
    }
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvId,
    pub algo: Algo,
    pub seed: u64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Episode length limit; `None` keeps the environment default.
    pub horizon: Option<usize>,
    /// Cost distance at which danger begins; `None` keeps the environment default.
    pub danger_radius: Option<f64>,
    pub layout: Option<PathBuf>,
    pub c_hat: f64,
    pub pretrain_epochs: usize,
    pub k_policy: KPolicy,
    /// Bucket width for matching continuous actions.
    pub bucket_width: f64,
    pub capacity: Option<usize>,
    /// Episodes collected concurrently per wave.
    pub rollout_workers: usize,
    /// Run a wave's episodes on the rayon pool instead of in sequence.
    pub parallel: bool,
    pub hidden: Vec<usize>,
    pub ppo: PpoConfig,
    pub lagrangian_lr: f64,
    pub cost_limit: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let lag = LagrangianState::default();
        TrainConfig {
            env: EnvId::GoalNav,
            algo: Algo::Ppo,
            seed: 0,
            epochs: 150,
            steps_per_epoch: 4000,
            horizon: None,
            danger_radius: None,
            layout: None,
            c_hat: 0.5,
            pretrain_epochs: 5,
            k_policy: KPolicy::default(),
            bucket_width: 0.25,
            capacity: None,
            rollout_workers: 1,
            parallel: false,
            hidden: DEFAULT_HIDDEN.to_vec(),
            ppo: PpoConfig::default(),
            lagrangian_lr: lag.lr,
            cost_limit: lag.cost_limit,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value.trim() {
        "" | "none" | "default" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn show_optional<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), |v| v.to_string())
}

impl TrainConfig {
    pub fn danger_threshold(&self) -> Result<DangerThreshold> {
        DangerThreshold::new(self.c_hat)
    }

    pub fn lagrangian(&self) -> LagrangianState {
        LagrangianState {
            multiplier: 0.0,
            lr: self.lagrangian_lr,
            cost_limit: self.cost_limit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.danger_threshold()
            .map_err(|e| Error::Config(format!("c_hat: {e}")))?;
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config("epochs and steps_per_epoch must be positive".into()));
        }
        if self.pretrain_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "pretrain_epochs ({}) must be less than epochs ({})",
                self.pretrain_epochs, self.epochs
            )));
        }
        if !(self.bucket_width > 0.0 && self.bucket_width.is_finite()) {
            return Err(Error::Config("bucket_width must be positive".into()));
        }
        if self.capacity == Some(0) {
            return Err(Error::Config("capacity must be positive".into()));
        }
        if self.rollout_workers == 0 {
            return Err(Error::Config("rollout_workers must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if self.lagrangian_lr < 0.0 || self.cost_limit < 0.0 {
            return Err(Error::Config("lagrangian_lr and cost_limit must be non-negative".into()));
        }
        if self.horizon == Some(0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        self.ppo.validate()
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        match k {
            "env" => self.env = value.parse()?,
            "algo" => self.algo = value.parse()?,
            "seed" => self.seed = parse(k, value)?,
            "epochs" => self.epochs = parse(k, value)?,
            "steps_per_epoch" => self.steps_per_epoch = parse(k, value)?,
            "horizon" => self.horizon = parse_optional(k, value)?,
            "danger_radius" => self.danger_radius = parse_optional(k, value)?,
            "layout" => self.layout = parse_optional(k, value)?,
            "c_hat" => self.c_hat = parse(k, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(k, value)?,
            "k_exponent" | "k_policy" => self.k_policy = value.parse()?,
            "bucket_width" => self.bucket_width = parse(k, value)?,
            "capacity" => self.capacity = parse_optional(k, value)?,
            "rollout_workers" => self.rollout_workers = parse(k, value)?,
            "parallel" => self.parallel = parse(k, value)?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(|h| parse(k, h))
                    .collect::<Result<Vec<usize>>>()?;
            }
            "clip" => self.ppo.clip = parse(k, value)?,
            "lr" => self.ppo.lr = parse(k, value)?,
            "gamma" => self.ppo.gamma = parse(k, value)?,
            "gae_lambda" => self.ppo.lambda = parse(k, value)?,
            "update_epochs" => self.ppo.update_epochs = parse(k, value)?,
            "minibatch_size" => self.ppo.minibatch_size = parse(k, value)?,
            "entropy_coef" => self.ppo.entropy_coef = parse(k, value)?,
            "value_coef" => self.ppo.value_coef = parse(k, value)?,
            "max_grad_norm" => self.ppo.max_grad_norm = parse_optional(k, value)?,
            "lagrangian_lr" => self.lagrangian_lr = parse(k, value)?,
            "cost_limit" => self.cost_limit = parse(k, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are skipped.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected key = value, found {line:?}")))?;
            self.set(k, v).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&fs::read_to_string(path)?)
    }

    pub fn to_key_values(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let rows: Vec<(&str, String)> = vec![
            ("env", self.env.to_string()),
            ("algo", self.algo.to_string()),
            ("seed", self.seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("steps_per_epoch", self.steps_per_epoch.to_string()),
            ("horizon", show_optional(&self.horizon)),
            ("danger_radius", show_optional(&self.danger_radius)),
            ("layout", show_optional(&self.layout.as_ref().map(|p| p.display()))),
            ("c_hat", self.c_hat.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("k_exponent", self.k_policy.to_string()),
            ("bucket_width", self.bucket_width.to_string()),
            ("capacity", show_optional(&self.capacity)),
            ("rollout_workers", self.rollout_workers.to_string()),
            ("parallel", self.parallel.to_string()),
            ("hidden", hidden.join(",")),
            ("clip", self.ppo.clip.to_string()),
            ("lr", self.ppo.lr.to_string()),
            ("gamma", self.ppo.gamma.to_string()),
            ("gae_lambda", self.ppo.lambda.to_string()),
            ("update_epochs", self.ppo.update_epochs.to_string()),
            ("minibatch_size", self.ppo.minibatch_size.to_string()),
            ("entropy_coef", self.ppo.entropy_coef.to_string()),
            ("value_coef", self.ppo.value_coef.to_string()),
            ("max_grad_norm", show_optional(&self.ppo.max_grad_norm)),
            ("lagrangian_lr", self.lagrangian_lr.to_string()),
            ("cost_limit", self.cost_limit.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut cfg = TrainConfig {
            env: EnvId::PointMass,
            algo: Algo::PpoLagrangianBuffer,
            seed: 42,
            horizon: Some(77),
            k_policy: KPolicy::BruteForce,
            capacity: Some(500),
            hidden: vec![32, 16],
            ..Default::default()
        };
        cfg.ppo.max_grad_norm = None;
        assert_eq!(TrainConfig::parse_str(&cfg.to_key_values()).unwrap(), cfg);
        let third = TrainConfig::parse_str("k_exponent = 1/3").unwrap();
        assert_eq!(TrainConfig::parse_str(&third.to_key_values()).unwrap(), third);
    }

    #[test]
    fn comments_and_errors() {
        let cfg = TrainConfig::parse_str("# run\nalgo = ppo-buffer  # ours\n\nseed=3\n").unwrap();
        assert_eq!((cfg.algo, cfg.seed), (Algo::PpoBuffer, 3));
        assert!(matches!(
            TrainConfig::parse_str("seed = x"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(TrainConfig::parse_str("bogus = 1").is_err());
        assert!(TrainConfig::parse_str("no equals sign").is_err());
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { pretrain_epochs: 150, ..Default::default() },
            TrainConfig { c_hat: 1.0, ..Default::default() },
            TrainConfig { c_hat: 0.0, ..Default::default() },
            TrainConfig { rollout_workers: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }
}
