//! Gridworld with an adversary: the system (blue) navigates toward reward
//! cells under 0.7/0.3 action noise while the adversary (orange) moves
//! deterministically and tries to collide with it.
//!
//! Both agents share one 9-move set (8 neighbors + stay); a move into a wall
//! or out of bounds resolves to "stay" so every move index is always legal.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, StepOutcome};
use crate::error::{Error, Result};
use crate::seeding::TaskRng;

pub type Cell = (i32, i32);

/// Move deltas, indexed by move/disturbance id:
/// up, down, left, right, up-right, up-left, down-right, down-left, stay.
pub const MOVES: [(i32, i32); 9] = [
    (0, 1),
    (0, -1),
    (-1, 0),
    (1, 0),
    (1, 1),
    (-1, 1),
    (1, -1),
    (-1, -1),
    (0, 0),
];

pub const NUM_MOVES: usize = 9;
pub const STAY: usize = 8;

fn default_slip_prob() -> f64 {
    0.3
}

fn default_dim() -> usize {
    10
}

fn default_max_steps() -> usize {
    100
}

fn default_gamma() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridworldConfig {
    #[serde(default = "default_dim")]
    pub width: usize,
    #[serde(default = "default_dim")]
    pub height: usize,
    #[serde(default)]
    pub walls: BTreeSet<Cell>,
    /// Cell -> positive reward collected by the system on arrival.
    /// Serialized as an entry list: JSON object keys must be strings.
    #[serde(default, with = "goal_map_serde")]
    pub goal_rewards: BTreeMap<Cell, f64>,
    #[serde(default = "default_slip_prob")]
    pub slip_prob: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GridworldConfig {
    fn default() -> Self {
        Self {
            width: 10,
            height: 10,
            walls: BTreeSet::new(),
            goal_rewards: BTreeMap::new(),
            slip_prob: 0.3,
            max_steps: 100,
            gamma: 0.95,
            seed: 0,
        }
    }
}

impl GridworldConfig {
    pub fn in_bounds(&self, c: Cell) -> bool {
        c.0 >= 0 && c.1 >= 0 && (c.0 as usize) < self.width && (c.1 as usize) < self.height
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.walls.contains(&c)
    }

    pub fn is_goal(&self, c: Cell) -> bool {
        self.goal_rewards.contains_key(&c)
    }

    /// Resolve a move from `cell`: infeasible targets collapse to stay.
    pub fn resolve_move(&self, cell: Cell, mv: usize) -> Cell {
        let (dx, dy) = MOVES[mv];
        let target = (cell.0 + dx, cell.1 + dy);
        if self.is_free(target) {
            target
        } else {
            cell
        }
    }

    /// Distinct cells reachable from `cell` (including the cell itself),
    /// in move-index order.
    pub fn reachable_cells(&self, cell: Cell) -> Vec<Cell> {
        let mut out = Vec::with_capacity(NUM_MOVES);
        for mv in 0..NUM_MOVES {
            let c = self.resolve_move(cell, mv);
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    /// Slip alternatives for an intended target: every reachable cell except
    /// the target itself.
    pub fn slip_cells(&self, cell: Cell, intended: Cell) -> Vec<Cell> {
        self.reachable_cells(cell)
            .into_iter()
            .filter(|&c| c != intended)
            .collect()
    }

    /// Cells where agents may be placed at reset: free and not a goal.
    pub fn spawn_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                let c = (x, y);
                if self.is_free(c) && !self.is_goal(c) {
                    out.push(c);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig(
                "grid dimensions must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return Err(Error::InvalidConfig(format!(
                "slip_prob {} outside [0, 1]",
                self.slip_prob
            )));
        }
        for c in &self.walls {
            if !self.in_bounds(*c) {
                return Err(Error::InvalidConfig(format!("wall {c:?} out of bounds")));
            }
        }
        for (c, r) in &self.goal_rewards {
            if !self.in_bounds(*c) {
                return Err(Error::InvalidConfig(format!("goal {c:?} out of bounds")));
            }
            if self.walls.contains(c) {
                return Err(Error::InvalidConfig(format!("goal {c:?} placed on a wall")));
            }
            if *r <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "goal reward at {c:?} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Parse a human-editable ASCII layout: `#` wall, `.` free, digits 1-9
    /// goal cells with that reward. The first text row is the top of the
    /// grid (y = height - 1).
    pub fn from_ascii(map: &str, slip_prob: f64) -> Result<Self> {
        let rows: Vec<&str> = map.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.is_empty() {
            return Err(Error::InvalidConfig("empty ascii map".into()));
        }
        let height = rows.len();
        let width = rows[0].chars().count();
        let mut walls = BTreeSet::new();
        let mut goal_rewards = BTreeMap::new();
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::InvalidConfig(format!(
                    "ascii map row {r} has width {} != {width}",
                    row.chars().count()
                )));
            }
            let y = (height - 1 - r) as i32;
            for (x, ch) in row.chars().enumerate() {
                let c = (x as i32, y);
                match ch {
                    '#' => {
                        walls.insert(c);
                    }
                    '.' => {}
                    d if d.is_ascii_digit() && d != '0' => {
                        goal_rewards.insert(c, d.to_digit(10).unwrap() as f64);
                    }
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "ascii map: unexpected character {other:?}"
                        )))
                    }
                }
            }
        }
        let cfg = Self {
            width,
            height,
            walls,
            goal_rewards,
            slip_prob,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Render the layout back to ASCII (inverse of [`Self::from_ascii`] for
    /// integer goal rewards 1-9).
    pub fn to_ascii(&self) -> String {
        let mut out = String::new();
        for r in 0..self.height {
            let y = (self.height - 1 - r) as i32;
            for x in 0..self.width as i32 {
                let c = (x, y);
                if self.walls.contains(&c) {
                    out.push('#');
                } else if let Some(&v) = self.goal_rewards.get(&c) {
                    let d = v.round().clamp(1.0, 9.0) as u32;
                    out.push(char::from_digit(d, 10).unwrap());
                } else {
                    out.push('.');
                }
            }
            out.push('\n');
        }
        out
    }
}

mod goal_map_serde {
    use super::Cell;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(map: &BTreeMap<Cell, f64>, s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<(Cell, f64)> = map.iter().map(|(k, v)| (*k, *v)).collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Cell, f64>, D::Error> {
        let entries: Vec<(Cell, f64)> = Vec::deserialize(d)?;
        Ok(entries.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridworldState {
    pub blue: Cell,
    pub orange: Cell,
    pub done: bool,
}

/// Outcome of one gridworld transition with the typed next state.
#[derive(Debug, Clone, PartialEq)]
pub struct GwStep {
    pub state: GridworldState,
    pub reward: f64,
    pub done: bool,
    pub is_failure: bool,
}

/// Move the blue agent with the 0.7/0.3 slip model: the intended resolved
/// cell with probability 1 - slip_prob, otherwise a uniformly random
/// reachable cell other than the intended one.
fn move_blue(cfg: &GridworldConfig, blue: Cell, intent: usize, rng: &mut TaskRng) -> Cell {
    let intended = cfg.resolve_move(blue, intent);
    let u: f64 = rng.random();
    if u < cfg.slip_prob {
        let alts = cfg.slip_cells(blue, intended);
        if alts.is_empty() {
            intended
        } else {
            alts[rng.random_range(0..alts.len())]
        }
    } else {
        intended
    }
}

/// One adversary-side transition. Both agents move simultaneously from the
/// current state; the adversary is rewarded 1 for a collision (failure of
/// the system) and 0 otherwise. Collision takes precedence over goal
/// arrival when both land on the same goal cell.
pub fn gw_step(
    cfg: &GridworldConfig,
    state: &GridworldState,
    disturbance: usize,
    system_action: usize,
    rng: &mut TaskRng,
) -> Result<GwStep> {
    if disturbance >= NUM_MOVES {
        return Err(Error::InvalidDisturbance {
            index: disturbance,
            count: NUM_MOVES,
        });
    }
    if system_action >= NUM_MOVES {
        return Err(Error::InvalidDisturbance {
            index: system_action,
            count: NUM_MOVES,
        });
    }
    debug_assert!(!state.done, "step on a finished episode");

    let blue = move_blue(cfg, state.blue, system_action, rng);
    let orange = cfg.resolve_move(state.orange, disturbance);

    let collided = blue == orange;
    let reached_goal = cfg.is_goal(blue);
    let done = collided || reached_goal;
    let reward = if collided { 1.0 } else { 0.0 };
    Ok(GwStep {
        state: GridworldState { blue, orange, done },
        reward,
        done,
        is_failure: collided,
    })
}

/// Encode a joint state as [blue.x, blue.y, orange.x, orange.y], each axis
/// scaled to [0, 1] by coord / (dim - 1).
pub fn gw_encode(cfg: &GridworldConfig, state: &GridworldState) -> Vec<f64> {
    let sx = if cfg.width > 1 {
        (cfg.width - 1) as f64
    } else {
        1.0
    };
    let sy = if cfg.height > 1 {
        (cfg.height - 1) as f64
    } else {
        1.0
    };
    vec![
        state.blue.0 as f64 / sx,
        state.blue.1 as f64 / sy,
        state.orange.0 as f64 / sx,
        state.orange.1 as f64 / sy,
    ]
}

pub const GW_STATE_DIM: usize = 4;

/// Place blue and orange uniformly on distinct spawn cells.
pub fn gw_reset(cfg: &GridworldConfig, rng: &mut TaskRng) -> Result<GridworldState> {
    let cells = cfg.spawn_cells();
    if cells.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 free non-goal cells, found {}",
            cells.len()
        )));
    }
    let bi = rng.random_range(0..cells.len());
    let blue = cells[bi];
    let mut rest = cells;
    rest.swap_remove(bi);
    let orange = rest[rng.random_range(0..rest.len())];
    Ok(GridworldState {
        blue,
        orange,
        done: false,
    })
}

/// The system side of the gridworld: how blue picks its intended move.
pub trait GwPolicy: Send + Sync {
    fn act(&self, cfg: &GridworldConfig, state: &GridworldState, rng: &mut TaskRng) -> usize;
}

/// System rewards for the blue agent's own MDP (used when training or
/// solving the system, not the adversary).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemRewardSpec {
    /// Reward on colliding with the adversary (episode ends).
    pub collision_penalty: f64,
}

impl Default for SystemRewardSpec {
    fn default() -> Self {
        Self {
            collision_penalty: -1.0,
        }
    }
}

/// Adversary-side environment: the agent is orange, the system policy is
/// fixed. Disturbances are orange's 9 moves.
#[derive(Clone)]
pub struct GridworldAdversaryEnv {
    pub cfg: GridworldConfig,
    system: Arc<dyn GwPolicy>,
    state: GridworldState,
    steps: usize,
}

impl GridworldAdversaryEnv {
    pub fn new(cfg: GridworldConfig, system: Arc<dyn GwPolicy>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            system,
            state: GridworldState {
                blue: (0, 0),
                orange: (0, 0),
                done: true,
            },
            steps: 0,
        })
    }

    pub fn state(&self) -> &GridworldState {
        &self.state
    }
}

impl Environment for GridworldAdversaryEnv {
    fn state_dim(&self) -> usize {
        GW_STATE_DIM
    }

    fn num_disturbances(&self) -> usize {
        NUM_MOVES
    }

    fn discount(&self) -> f64 {
        self.cfg.gamma
    }

    fn max_episode_steps(&self) -> usize {
        self.cfg.max_steps
    }

    fn reset(&mut self, rng: &mut TaskRng) -> Result<Vec<f64>> {
        self.state = gw_reset(&self.cfg, rng)?;
        self.steps = 0;
        Ok(gw_encode(&self.cfg, &self.state))
    }

    fn step(&mut self, disturbance: usize, rng: &mut TaskRng) -> Result<StepOutcome> {
        let action = self.system.act(&self.cfg, &self.state, rng);
        let mut out = gw_step(&self.cfg, &self.state, disturbance, action, rng)?;
        self.steps += 1;
        if self.steps >= self.cfg.max_steps {
            out.done = true;
            out.state.done = true;
        }
        self.state = out.state;
        Ok(StepOutcome {
            next_state: gw_encode(&self.cfg, &self.state),
            reward: out.reward,
            done: out.done,
            is_failure: out.is_failure,
        })
    }
}

/// System-side environment for training blue: the agent is blue (9 moves),
/// the adversary moves uniformly at random, rewards follow the system spec.
#[derive(Clone)]
pub struct GridworldSystemEnv {
    pub cfg: GridworldConfig,
    pub rewards: SystemRewardSpec,
    state: GridworldState,
    steps: usize,
}

impl GridworldSystemEnv {
    pub fn new(cfg: GridworldConfig, rewards: SystemRewardSpec) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            rewards,
            state: GridworldState {
                blue: (0, 0),
                orange: (0, 0),
                done: true,
            },
            steps: 0,
        })
    }
}

impl Environment for GridworldSystemEnv {
    fn state_dim(&self) -> usize {
        GW_STATE_DIM
    }

    fn num_disturbances(&self) -> usize {
        NUM_MOVES
    }

    fn discount(&self) -> f64 {
        self.cfg.gamma
    }

    fn max_episode_steps(&self) -> usize {
        self.cfg.max_steps
    }

    fn reset(&mut self, rng: &mut TaskRng) -> Result<Vec<f64>> {
        self.state = gw_reset(&self.cfg, rng)?;
        self.steps = 0;
        Ok(gw_encode(&self.cfg, &self.state))
    }

    fn step(&mut self, action: usize, rng: &mut TaskRng) -> Result<StepOutcome> {
        // Draw order: adversary move first, then blue's slip.
        let disturbance = rng.random_range(0..NUM_MOVES);
        let out = gw_step(&self.cfg, &self.state, disturbance, action, rng)?;
        self.steps += 1;
        let mut done = out.done;
        if self.steps >= self.cfg.max_steps {
            done = true;
        }
        // Reward from the system's perspective.
        let reward = if out.is_failure {
            self.rewards.collision_penalty
        } else if self.cfg.is_goal(out.state.blue) {
            self.cfg.goal_rewards[&out.state.blue]
        } else {
            0.0
        };
        self.state = GridworldState { done, ..out.state };
        Ok(StepOutcome {
            next_state: gw_encode(&self.cfg, &self.state),
            reward,
            done,
            is_failure: out.is_failure,
        })
    }
}
