//! Continuous-action point mass with momentum in a walled square arena.

use rand::Rng as _;

use super::{cost_from_distance, EnvSpec, Environment, ResetOutput};
use crate::cmdp::{is_failure, ActionSpace, ActionValue, CostSignal, FeatureVec, TransitionRecord};
use crate::error::{Error, Result};
use crate::rng;

/// Fixed centring/scaling for the safety feature
/// `(offset_x, offset_y, distance, vel_x, vel_y)`.
const FEATURE_MEAN: [f64; 5] = [0.0; 5];
const FEATURE_SCALE: [f64; 5] = [1.0, 1.0, 1.0, 0.5, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct PointMassConfig {
    /// Arena is `[-half_size, half_size]^2`.
    pub half_size: f64,
    pub hazards: usize,
    pub horizon: usize,
    pub danger_radius: f64,
    pub contact_radius: f64,
    pub dt: f64,
    pub drag: f64,
    pub goal_radius: f64,
    pub goal_bonus: f64,
    pub step_penalty: f64,
    pub min_goal_distance: f64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        PointMassConfig {
            half_size: 3.0,
            hazards: 5,
            horizon: 200,
            danger_radius: 1.5,
            contact_radius: 0.5,
            dt: 0.1,
            drag: 0.5,
            goal_radius: 0.3,
            goal_bonus: 10.0,
            step_penalty: 0.01,
            min_goal_distance: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMassState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    /// Hazard centres with their contact radius.
    pub hazards: Vec<([f64; 2], f64)>,
    pub goal: [f64; 2],
    pub step_count: usize,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl PointMassState {
    /// Index and distance of the nearest hazard centre (first one on ties).
    pub fn nearest_hazard(&self) -> Option<(usize, f64)> {
        self.hazards
            .iter()
            .enumerate()
            .map(|(i, (c, _))| (i, dist(*c, self.position)))
            .fold(None, |best, (i, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((i, d)),
            })
    }
}

/// Cost from the distance to the nearest hazard centre.
pub fn cost_of_state(state: &PointMassState, danger_radius: f64, contact_radius: f64) -> CostSignal {
    match state.nearest_hazard() {
        Some((_, d)) => cost_from_distance(d, danger_radius, contact_radius),
        None => CostSignal::SAFE,
    }
}

/// `(offset to nearest hazard, distance to it, velocity)`, standardized.
pub fn extract_feature(state: &PointMassState) -> FeatureVec {
    let raw = match state.nearest_hazard() {
        Some((i, d)) => {
            let c = state.hazards[i].0;
            [
                c[0] - state.position[0],
                c[1] - state.position[1],
                d,
                state.velocity[0],
                state.velocity[1],
            ]
        }
        None => [0.0, 0.0, 0.0, state.velocity[0], state.velocity[1]],
    };
    FeatureVec(
        raw.iter()
            .zip(FEATURE_MEAN.iter().zip(&FEATURE_SCALE))
            .map(|(x, (m, s))| (x - m) / s)
            .collect(),
    )
}

pub struct PointMass {
    config: PointMassConfig,
    spec: EnvSpec,
    state: Option<PointMassState>,
    finished: bool,
}

impl PointMass {
    pub fn new(config: PointMassConfig) -> Result<Self> {
        if config.half_size <= 0.0 || config.dt <= 0.0 {
            return Err(Error::Config("arena size and dt must be positive".into()));
        }
        let spec = EnvSpec {
            obs_dim: 6 + 2 * config.hazards,
            action_space: ActionSpace::Continuous {
                low: vec![-1.0, -1.0],
                high: vec![1.0, 1.0],
            },
            feature_dim: 5,
            horizon: config.horizon,
            danger_radius: config.danger_radius,
            contact_radius: config.contact_radius,
        };
        spec.validate()?;
        Ok(PointMass {
            config,
            spec,
            state: None,
            finished: false,
        })
    }

    pub fn state(&self) -> Option<&PointMassState> {
        self.state.as_ref()
    }

    pub fn set_state(&mut self, state: PointMassState) -> Result<ResetOutput> {
        if state.hazards.len() != self.config.hazards {
            return Err(Error::InvalidArgument(format!(
                "expected {} hazards, got {}",
                self.config.hazards,
                state.hazards.len()
            )));
        }
        self.state = Some(state);
        self.finished = false;
        Ok(self.current())
    }

    fn cost(&self, s: &PointMassState) -> CostSignal {
        cost_of_state(s, self.config.danger_radius, self.config.contact_radius)
    }

    fn current(&self) -> ResetOutput {
        let s = self.state.as_ref().expect("state initialized");
        ResetOutput {
            obs: self.observe(s),
            cost: self.cost(s),
            feature: extract_feature(s),
        }
    }

    fn observe(&self, s: &PointMassState) -> Vec<f64> {
        let h = self.config.half_size;
        let mut obs = vec![
            s.position[0] / h,
            s.position[1] / h,
            s.velocity[0],
            s.velocity[1],
            (s.goal[0] - s.position[0]) / h,
            (s.goal[1] - s.position[1]) / h,
        ];
        for (c, _) in &s.hazards {
            obs.push((c[0] - s.position[0]) / h);
            obs.push((c[1] - s.position[1]) / h);
        }
        obs
    }

    fn sample_state(&self, seed: u64) -> Result<PointMassState> {
        let cfg = &self.config;
        let mut rng = rng::rng_from(seed, &[0x706f_696e_74]);
        let h = cfg.half_size;
        let point = |rng: &mut rng::Rng| [rng.random_range(-h..h), rng.random_range(-h..h)];
        const ATTEMPTS: usize = 10_000;
        let position = point(&mut rng);
        let mut hazards = Vec::with_capacity(cfg.hazards);
        let mut tries = 0;
        while hazards.len() < cfg.hazards {
            tries += 1;
            if tries > ATTEMPTS {
                return Err(Error::Config("cannot place hazards outside the spawn zone".into()));
            }
            let c = point(&mut rng);
            if dist(c, position) >= cfg.danger_radius {
                hazards.push((c, cfg.contact_radius));
            }
        }
        let goal_clearance = cfg.contact_radius + cfg.goal_radius;
        let goal = (0..ATTEMPTS)
            .map(|_| point(&mut rng))
            .find(|g| {
                dist(*g, position) >= cfg.min_goal_distance
                    && hazards.iter().all(|(c, _)| dist(*c, *g) > goal_clearance)
            })
            .ok_or_else(|| Error::Config("cannot place the goal".into()))?;
        Ok(PointMassState {
            position,
            velocity: [0.0, 0.0],
            hazards,
            goal,
            step_count: 0,
        })
    }
}

impl Environment for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<ResetOutput> {
        self.state = Some(self.sample_state(seed)?);
        self.finished = false;
        Ok(self.current())
    }

    fn step(&mut self, action: &ActionValue) -> Result<TransitionRecord> {
        if self.finished {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let applied = self.spec.action_space.admit(action)?;
        let ActionValue::Continuous(u) = &applied else {
            unreachable!("admit returns the space's action kind")
        };
        let cfg = &self.config;
        let s = self
            .state
            .as_mut()
            .ok_or_else(|| Error::Usage("step before reset".into()))?;
        let prev_goal = dist(s.position, s.goal);
        for i in 0..2 {
            s.velocity[i] += u[i] * cfg.dt - cfg.drag * s.velocity[i] * cfg.dt;
            s.position[i] += s.velocity[i] * cfg.dt;
            if s.position[i] > cfg.half_size {
                s.position[i] = 2.0 * cfg.half_size - s.position[i];
                s.velocity[i] = -s.velocity[i];
            } else if s.position[i] < -cfg.half_size {
                s.position[i] = -2.0 * cfg.half_size - s.position[i];
                s.velocity[i] = -s.velocity[i];
            }
        }
        s.step_count += 1;
        let s = self.state.as_ref().expect("initialized");
        let cost = self.cost(s);
        let failed = is_failure(cost);
        let goal_dist = dist(s.position, s.goal);
        let mut reward = prev_goal - goal_dist - cfg.step_penalty;
        let success = !failed && goal_dist <= cfg.goal_radius;
        if success {
            reward += cfg.goal_bonus;
        }
        let done = failed || success;
        let truncated = !done && s.step_count >= cfg.horizon;
        self.finished = done || truncated;
        Ok(TransitionRecord {
            obs: self.observe(s),
            action: applied.clone(),
            reward,
            cost,
            feature: extract_feature(s),
            done,
            truncated,
            failed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with(position: [f64; 2], hazards: Vec<[f64; 2]>) -> PointMassState {
        PointMassState {
            position,
            velocity: [0.0, 0.0],
            hazards: hazards.into_iter().map(|c| (c, 0.5)).collect(),
            goal: [2.5, 2.5],
            step_count: 0,
        }
    }

    #[test]
    fn cost_at_danger_radius_is_zero() {
        let s = state_with([0.0, 0.0], vec![[1.5, 0.0]]);
        assert_eq!(cost_of_state(&s, 1.5, 0.5).value(), 0.0);
        let s = state_with([0.0, 0.0], vec![[1.0, 0.0]]);
        assert_eq!(cost_of_state(&s, 1.5, 0.5).value(), 0.5);
    }

    #[test]
    fn feature_uses_nearest_hazard() {
        let hazards = vec![[-2.0, 2.0], [1.0, 0.0]];
        let s = state_with([0.0, 0.0], hazards.clone());
        // brute-force nearest scan
        let (mut best, mut best_d) = (0, f64::INFINITY);
        for (i, h) in hazards.iter().enumerate() {
            let d = (h[0] * h[0] + h[1] * h[1]).sqrt();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        assert_eq!(best, 1);
        let f = extract_feature(&s);
        assert_eq!(&f[..3], &[1.0, 0.0, 1.0]);
        assert_eq!(f.len(), 5);
    }

    #[test]
    fn reset_is_deterministic_and_safe() {
        let mut env = PointMass::new(PointMassConfig::default()).unwrap();
        assert_eq!(env.reset(4).unwrap(), env.reset(4).unwrap());
        for seed in 0..100 {
            let r = env.reset(seed).unwrap();
            assert_eq!(r.cost.value(), 0.0);
            assert_eq!(r.obs.len(), env.spec().obs_dim);
        }
    }

    #[test]
    fn walls_reflect_and_actions_clamp() {
        let mut env = PointMass::new(PointMassConfig::default()).unwrap();
        let mut s = state_with([2.95, 0.0], vec![[-2.5, -2.5]; 5]);
        s.velocity = [2.0, 0.0];
        env.set_state(s).unwrap();
        let t = env.step(&ActionValue::Continuous(vec![5.0, 0.0])).unwrap();
        assert_eq!(t.action, ActionValue::Continuous(vec![1.0, 0.0]));
        let s = env.state().unwrap();
        assert!(s.position[0] <= 3.0);
        assert!(s.velocity[0] < 0.0);
    }

    #[test]
    fn dynamics_follow_euler_update() {
        let mut env = PointMass::new(PointMassConfig::default()).unwrap();
        env.set_state(state_with([0.0, 0.0], vec![[-2.5, -2.5]; 5])).unwrap();
        env.step(&ActionValue::Continuous(vec![1.0, -0.5])).unwrap();
        let s = env.state().unwrap();
        assert!((s.velocity[0] - 0.1).abs() < 1e-15);
        assert!((s.velocity[1] + 0.05).abs() < 1e-15);
        assert!((s.position[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn contact_terminates() {
        let mut env = PointMass::new(PointMassConfig::default()).unwrap();
        let mut s = state_with([0.0, 0.0], vec![[0.55, 0.0]; 5]);
        s.velocity = [1.0, 0.0];
        env.set_state(s).unwrap();
        let t = env.step(&ActionValue::Continuous(vec![1.0, 0.0])).unwrap();
        assert!(t.failed && t.done);
        assert!(env.step(&ActionValue::Continuous(vec![0.0, 0.0])).is_err());
    }
}
