//! Desk-scale safety environments.
//!
//! Every environment reports a continuous cost derived from the distance to
//! the nearest hazard and a feature vector used as the safety-buffer key.

mod grid;
mod layout;
mod point_mass;

use std::fmt;
use std::str::FromStr;

pub use grid::{GridAction, GridConfig, GridTask, GridWorld, GridWorldState, NUM_GRID_ACTIONS};
pub use layout::Layout;
pub use point_mass::{PointMass, PointMassConfig, PointMassState};

use crate::cmdp::{ActionSpace, ActionValue, CostSignal, FeatureVec, TransitionRecord};
use crate::error::{Error, Result};

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub feature_dim: usize,
    pub horizon: usize,
    /// Distance at which the cost starts rising above zero.
    pub danger_radius: f64,
    /// Distance at or below which the agent is in contact with a hazard.
    pub contact_radius: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.contact_radius > 0.0 && self.danger_radius > self.contact_radius) {
            return Err(Error::Config(format!(
                "danger radius {} must exceed contact radius {} > 0",
                self.danger_radius, self.contact_radius
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResetOutput {
    pub obs: Vec<f64>,
    pub cost: CostSignal,
    pub feature: FeatureVec,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode whose layout is a pure function of `seed`.
    fn reset(&mut self, seed: u64) -> Result<ResetOutput>;

    /// Advances one step. Stepping a finished episode is a usage error.
    fn step(&mut self, action: &ActionValue) -> Result<TransitionRecord>;
}

/// Piecewise-linear cost of a hazard distance: 1 inside the contact radius,
/// 0 beyond the danger radius, linear in between.
pub fn cost_from_distance(distance: f64, danger_radius: f64, contact_radius: f64) -> CostSignal {
    if distance <= contact_radius {
        CostSignal::FAILURE
    } else if distance >= danger_radius {
        CostSignal::SAFE
    } else {
        CostSignal::new((danger_radius - distance) / (danger_radius - contact_radius))
    }
}

/// Environment identifiers understood by the trainer and CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnvId {
    GoalNav,
    PushNav,
    SurvivalNav,
    PointMass,
}

impl EnvId {
    pub fn name(self) -> &'static str {
        match self {
            EnvId::GoalNav => "goal",
            EnvId::PushNav => "push",
            EnvId::SurvivalNav => "survival",
            EnvId::PointMass => "point",
        }
    }

    pub fn is_discrete(self) -> bool {
        !matches!(self, EnvId::PointMass)
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "goal" | "goal_nav" | "goalnav" => Ok(EnvId::GoalNav),
            "push" | "push_nav" | "pushnav" => Ok(EnvId::PushNav),
            "survival" | "survival_nav" | "survivalnav" => Ok(EnvId::SurvivalNav),
            "point" | "point_mass" | "pointmass" => Ok(EnvId::PointMass),
            other => Err(Error::InvalidArgument(format!("unknown environment '{other}'"))),
        }
    }
}

/// Per-run overrides applied on top of an environment's defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnvOptions {
    pub horizon: Option<usize>,
    pub danger_radius: Option<f64>,
    pub layout: Option<Layout>,
}

pub fn make_env(id: EnvId, options: &EnvOptions) -> Result<Box<dyn Environment>> {
    match id {
        EnvId::PointMass => {
            if options.layout.is_some() {
                return Err(Error::Config("layout files apply to grid tasks only".into()));
            }
            let mut cfg = PointMassConfig::default();
            if let Some(h) = options.horizon {
                cfg.horizon = h;
            }
            if let Some(r) = options.danger_radius {
                cfg.danger_radius = r;
            }
            Ok(Box::new(PointMass::new(cfg)?))
        }
        grid_id => {
            let task = match grid_id {
                EnvId::GoalNav => GridTask::Goal,
                EnvId::PushNav => GridTask::Push,
                _ => GridTask::Survival,
            };
            let mut cfg = GridConfig::for_task(task);
            if let Some(h) = options.horizon {
                cfg.horizon = h;
            }
            if let Some(r) = options.danger_radius {
                cfg.danger_radius = r;
            }
            cfg.layout = options.layout.clone();
            Ok(Box::new(GridWorld::new(cfg)?))
        }
    }
}
