//! Discrete-action gridworld navigation: reach a goal, push a box to a goal,
//! or survive among moving hazards.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::layout::{Cell, Layout};
use super::{cost_from_distance, EnvSpec, Environment, ResetOutput};
use crate::cmdp::{is_failure, ActionSpace, ActionValue, CostSignal, FeatureVec, TransitionRecord};
use crate::error::{Error, Result};
use crate::rng;

pub const NUM_GRID_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl GridAction {
    pub const ALL: [GridAction; NUM_GRID_ACTIONS] = [
        GridAction::Up,
        GridAction::Down,
        GridAction::Left,
        GridAction::Right,
        GridAction::Stay,
    ];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Row 0 is the northern edge, so `Up` decreases y.
    pub fn delta(self) -> Cell {
        match self {
            GridAction::Up => (0, -1),
            GridAction::Down => (0, 1),
            GridAction::Left => (-1, 0),
            GridAction::Right => (1, 0),
            GridAction::Stay => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridTask {
    Goal,
    Push,
    Survival,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub task: GridTask,
    pub width: usize,
    pub height: usize,
    pub hazards: usize,
    pub horizon: usize,
    pub danger_radius: f64,
    pub contact_radius: f64,
    /// Side length of the square raster window around the agent (odd).
    pub window: usize,
    pub goal_bonus: f64,
    pub step_penalty: f64,
    pub survival_reward: f64,
    /// Minimum Euclidean spawn distance between agent and goal.
    pub min_goal_distance: f64,
    pub layout: Option<Layout>,
}

impl GridConfig {
    pub fn for_task(task: GridTask) -> Self {
        GridConfig {
            task,
            width: 12,
            height: 12,
            hazards: match task {
                GridTask::Goal => 14,
                GridTask::Push => 12,
                GridTask::Survival => 6,
            },
            horizon: 200,
            danger_radius: 2.5,
            contact_radius: 0.5,
            window: 5,
            goal_bonus: 10.0,
            step_penalty: 0.01,
            survival_reward: 0.1,
            min_goal_distance: 3.0,
            layout: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridWorldState {
    pub width: usize,
    pub height: usize,
    pub agent_pos: Cell,
    pub goal_pos: Cell,
    pub box_pos: Option<Cell>,
    pub hazards: Vec<Cell>,
    pub hazard_velocities: Option<Vec<Cell>>,
    pub step_count: usize,
    pub last_action: Option<usize>,
}

impl GridWorldState {
    pub fn in_bounds(&self, c: Cell) -> bool {
        c.0 >= 0 && c.1 >= 0 && (c.0 as usize) < self.width && (c.1 as usize) < self.height
    }

    /// Euclidean cell-center distance from the agent to the nearest hazard.
    pub fn nearest_hazard_distance(&self) -> f64 {
        self.hazards
            .iter()
            .map(|h| cell_distance(*h, self.agent_pos))
            .fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn cell_distance(a: Cell, b: Cell) -> f64 {
    let dx = (a.0 - b.0) as f64;
    let dy = (a.1 - b.1) as f64;
    (dx * dx + dy * dy).sqrt()
}

pub fn cost_of_state(state: &GridWorldState, danger_radius: f64, contact_radius: f64) -> CostSignal {
    cost_from_distance(state.nearest_hazard_distance(), danger_radius, contact_radius)
}

/// Row-major `window × window` occupancy raster centred on the agent
/// (hazards and out-of-bounds cells are 1), followed by a one-hot of the
/// previous action (all zeros right after reset).
pub fn extract_feature(state: &GridWorldState, window: usize) -> FeatureVec {
    let mut out = raster(state, &state.hazards, window);
    let mut onehot = [0.0; NUM_GRID_ACTIONS];
    if let Some(a) = state.last_action {
        onehot[a] = 1.0;
    }
    out.extend_from_slice(&onehot);
    FeatureVec(out)
}

fn raster(state: &GridWorldState, hazards: &[Cell], window: usize) -> Vec<f64> {
    let half = (window / 2) as i32;
    let mut out = vec![0.0; window * window];
    for r in 0..window as i32 {
        for c in 0..window as i32 {
            let cell = (state.agent_pos.0 + c - half, state.agent_pos.1 + r - half);
            if !state.in_bounds(cell) || hazards.contains(&cell) {
                out[(r * window as i32 + c) as usize] = 1.0;
            }
        }
    }
    out
}

pub struct GridWorld {
    config: GridConfig,
    spec: EnvSpec,
    state: Option<GridWorldState>,
    finished: bool,
}

impl GridWorld {
    pub fn new(config: GridConfig) -> Result<Self> {
        if config.window % 2 == 0 || config.window == 0 {
            return Err(Error::Config("raster window must be odd".into()));
        }
        if config.width < 3 || config.height < 3 {
            return Err(Error::Config("grid must be at least 3x3".into()));
        }
        if let Some(layout) = &config.layout {
            validate_layout(layout, config.task)?;
        }
        let (width, height) = match &config.layout {
            Some(l) => (l.width, l.height),
            None => (config.width, config.height),
        };
        let raster_len = config.window * config.window;
        let obs_dim = 2 + raster_len
            + match config.task {
                GridTask::Goal => 2,
                GridTask::Push => 4,
                GridTask::Survival => raster_len,
            };
        let spec = EnvSpec {
            obs_dim,
            action_space: ActionSpace::Discrete { n: NUM_GRID_ACTIONS },
            feature_dim: raster_len + NUM_GRID_ACTIONS,
            horizon: config.horizon,
            danger_radius: config.danger_radius,
            contact_radius: config.contact_radius,
        };
        spec.validate()?;
        let config = GridConfig {
            width,
            height,
            ..config
        };
        Ok(GridWorld {
            config,
            spec,
            state: None,
            finished: false,
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&GridWorldState> {
        self.state.as_ref()
    }

    /// Replaces the current state, starting a fresh episode from it.
    pub fn set_state(&mut self, state: GridWorldState) -> Result<ResetOutput> {
        if !state.in_bounds(state.agent_pos) || state.hazards.iter().any(|h| !state.in_bounds(*h)) {
            return Err(Error::InvalidArgument("state positions outside the grid".into()));
        }
        self.state = Some(state);
        self.finished = false;
        Ok(self.current())
    }

    pub fn cost(&self, state: &GridWorldState) -> CostSignal {
        cost_of_state(state, self.config.danger_radius, self.config.contact_radius)
    }

    fn current(&self) -> ResetOutput {
        let s = self.state.as_ref().expect("state initialized");
        ResetOutput {
            obs: self.observe(s),
            cost: self.cost(s),
            feature: extract_feature(s, self.config.window),
        }
    }

    fn observe(&self, s: &GridWorldState) -> Vec<f64> {
        let sx = (s.width - 1) as f64;
        let sy = (s.height - 1) as f64;
        let (ax, ay) = (s.agent_pos.0 as f64, s.agent_pos.1 as f64);
        let mut obs = Vec::with_capacity(self.spec.obs_dim);
        obs.push(2.0 * ax / sx - 1.0);
        obs.push(2.0 * ay / sy - 1.0);
        match self.config.task {
            GridTask::Goal => {
                obs.push((s.goal_pos.0 as f64 - ax) / sx);
                obs.push((s.goal_pos.1 as f64 - ay) / sy);
            }
            GridTask::Push => {
                let b = s.box_pos.unwrap_or(s.agent_pos);
                obs.push((b.0 as f64 - ax) / sx);
                obs.push((b.1 as f64 - ay) / sy);
                obs.push((s.goal_pos.0 - b.0) as f64 / sx);
                obs.push((s.goal_pos.1 - b.1) as f64 / sy);
            }
            GridTask::Survival => {}
        }
        obs.extend(raster(s, &s.hazards, self.config.window));
        if self.config.task == GridTask::Survival {
            let next = next_hazards(s);
            obs.extend(raster(s, &next, self.config.window));
        }
        obs
    }

    fn sample_state(&self, seed: u64) -> Result<GridWorldState> {
        let cfg = &self.config;
        let mut rng = rng::rng_from(seed, &[0x6c61_796f_7574]);
        let survival = cfg.task == GridTask::Survival;
        let mut state = if let Some(layout) = &cfg.layout {
            GridWorldState {
                width: layout.width,
                height: layout.height,
                agent_pos: layout.agent,
                goal_pos: layout.goal.unwrap_or(layout.agent),
                box_pos: layout.box_pos,
                hazards: layout.hazards.clone(),
                hazard_velocities: None,
                step_count: 0,
                last_action: None,
            }
        } else {
            let (w, h) = (cfg.width as i32, cfg.height as i32);
            let cells: Vec<Cell> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect();
            let agent_pos = cells[rng.random_range(0..cells.len())];
            let mut hazard_slots: Vec<Cell> = cells
                .iter()
                .copied()
                .filter(|c| cell_distance(*c, agent_pos) >= cfg.danger_radius)
                .collect();
            let reserve = match cfg.task {
                GridTask::Goal => 1,
                GridTask::Push => 2,
                GridTask::Survival => 0,
            };
            if hazard_slots.len() < cfg.hazards + reserve {
                return Err(Error::Config(format!(
                    "{} hazards do not fit in a {}x{} grid outside the spawn zone",
                    cfg.hazards, cfg.width, cfg.height
                )));
            }
            hazard_slots.shuffle(&mut rng);
            hazard_slots.truncate(cfg.hazards);
            let hazards = hazard_slots;

            let mut goal_pos = agent_pos;
            let mut box_pos = None;
            if !survival {
                let goals: Vec<Cell> = cells
                    .iter()
                    .copied()
                    .filter(|c| {
                        !hazards.contains(c) && cell_distance(*c, agent_pos) >= cfg.min_goal_distance
                    })
                    .collect();
                goal_pos = *goals
                    .get(rng.random_range(0..goals.len().max(1)))
                    .ok_or_else(|| Error::Config("no free cell for the goal".into()))?;
                if cfg.task == GridTask::Push {
                    let boxes: Vec<Cell> = cells
                        .iter()
                        .copied()
                        .filter(|c| {
                            c.0 > 0
                                && c.1 > 0
                                && c.0 < w - 1
                                && c.1 < h - 1
                                && *c != agent_pos
                                && *c != goal_pos
                                && !hazards.contains(c)
                                && cell_distance(*c, goal_pos) >= 2.0
                        })
                        .collect();
                    box_pos = Some(
                        *boxes
                            .get(rng.random_range(0..boxes.len().max(1)))
                            .ok_or_else(|| Error::Config("no free cell for the box".into()))?,
                    );
                }
            }
            GridWorldState {
                width: cfg.width,
                height: cfg.height,
                agent_pos,
                goal_pos,
                box_pos,
                hazards,
                hazard_velocities: None,
                step_count: 0,
                last_action: None,
            }
        };
        if survival {
            const DIRS: [Cell; 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
            state.hazard_velocities = Some(
                (0..state.hazards.len())
                    .map(|_| DIRS[rng.random_range(0..DIRS.len())])
                    .collect(),
            );
        }
        if self.cost(&state).value() > 0.0 {
            return Err(Error::Config("agent spawns inside a danger zone".into()));
        }
        Ok(state)
    }

    fn target_distance(&self, s: &GridWorldState) -> f64 {
        match self.config.task {
            GridTask::Goal => cell_distance(s.agent_pos, s.goal_pos),
            GridTask::Push => cell_distance(s.box_pos.unwrap_or(s.agent_pos), s.goal_pos),
            GridTask::Survival => 0.0,
        }
    }
}

fn validate_layout(layout: &Layout, task: GridTask) -> Result<()> {
    match task {
        GridTask::Goal if layout.goal.is_none() => {
            Err(Error::Config("goal task layout needs a 'G' cell".into()))
        }
        GridTask::Push if layout.goal.is_none() || layout.box_pos.is_none() => {
            Err(Error::Config("push task layout needs 'G' and 'B' cells".into()))
        }
        _ => Ok(()),
    }
}

/// Hazard positions after one move with wall bounce.
fn next_hazards(s: &GridWorldState) -> Vec<Cell> {
    match &s.hazard_velocities {
        None => s.hazards.clone(),
        Some(vels) => s
            .hazards
            .iter()
            .zip(vels)
            .map(|(h, v)| bounce(*h, *v, s.width, s.height).0)
            .collect(),
    }
}

fn bounce(pos: Cell, vel: Cell, width: usize, height: usize) -> (Cell, Cell) {
    fn axis(p: i32, v: i32, size: i32) -> (i32, i32) {
        let n = p + v;
        if n < 0 || n >= size {
            (p - v, -v)
        } else {
            (n, v)
        }
    }
    let (x, vx) = axis(pos.0, vel.0, width as i32);
    let (y, vy) = axis(pos.1, vel.1, height as i32);
    ((x, y), (vx, vy))
}

impl Environment for GridWorld {
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
        let action = self.spec.action_space.admit(action)?;
        let ActionValue::Discrete(index) = action else {
            unreachable!("admit returns the space's action kind")
        };
        let task = self.config.task;
        let prev_target = {
            let s = self.state.as_ref().ok_or_else(|| Error::Usage("step before reset".into()))?;
            self.target_distance(s)
        };
        let s = self.state.as_mut().expect("checked above");
        let (dx, dy) = GridAction::from_index(index).expect("admitted").delta();
        let target = (s.agent_pos.0 + dx, s.agent_pos.1 + dy);
        if s.in_bounds(target) {
            if task == GridTask::Push && Some(target) == s.box_pos {
                let pushed = (target.0 + dx, target.1 + dy);
                if s.in_bounds(pushed) {
                    s.box_pos = Some(pushed);
                    s.agent_pos = target;
                }
            } else {
                s.agent_pos = target;
            }
        }
        if let Some(vels) = s.hazard_velocities.as_mut() {
            for (h, v) in s.hazards.iter_mut().zip(vels.iter_mut()) {
                let (np, nv) = bounce(*h, *v, s.width, s.height);
                *h = np;
                *v = nv;
            }
        }
        s.step_count += 1;
        s.last_action = Some(index);

        let s = self.state.as_ref().expect("initialized");
        let cost = self.cost(s);
        let failed = is_failure(cost);
        let cfg = &self.config;
        let mut reward;
        let mut success = false;
        match task {
            GridTask::Survival => {
                reward = if failed { 0.0 } else { cfg.survival_reward };
            }
            GridTask::Goal | GridTask::Push => {
                reward = prev_target - self.target_distance(s) - cfg.step_penalty;
                let at_goal = match task {
                    GridTask::Goal => s.agent_pos == s.goal_pos,
                    _ => s.box_pos == Some(s.goal_pos),
                };
                if at_goal && !failed {
                    reward += cfg.goal_bonus;
                    success = true;
                }
            }
        }
        let done = failed || success;
        let truncated = !done && s.step_count >= cfg.horizon;
        self.finished = done || truncated;
        Ok(TransitionRecord {
            obs: self.observe(s),
            action: ActionValue::Discrete(index),
            reward,
            cost,
            feature: extract_feature(s, cfg.window),
            done,
            truncated,
            failed,
        })
    }
}
