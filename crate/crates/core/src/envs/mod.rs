//! Safety-validation MDPs: a common environment contract plus the
//! gridworld-with-adversary and intersection-with-pedestrian instantiations.

pub mod driving;
pub mod gridworld;

use crate::error::Result;
use crate::seeding::TaskRng;

/// One transition's outcome. `is_failure` implies `done`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub is_failure: bool,
}

/// The adversary-facing MDP contract: encoded states of a fixed dimension,
/// a discrete disturbance set, and seeded reset/step.
pub trait Environment {
    /// Encoded state vector length n.
    fn state_dim(&self) -> usize;
    /// Number of disturbances m; indices are 0..m-1.
    fn num_disturbances(&self) -> usize;
    /// Discount factor of the MDP.
    fn discount(&self) -> f64;
    /// Episode step cap (truncation).
    fn max_episode_steps(&self) -> usize;
    /// Start a fresh episode, returning the encoded initial state.
    fn reset(&mut self, rng: &mut TaskRng) -> Result<Vec<f64>>;
    /// Apply one disturbance.
    fn step(&mut self, disturbance: usize, rng: &mut TaskRng) -> Result<StepOutcome>;
}
