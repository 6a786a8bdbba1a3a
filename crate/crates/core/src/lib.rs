//! Iterative safety validation at desk scale.
//!
//! A library and CLI for training DQN adversaries that drive autonomous
//! systems (a gridworld agent, an IDM-controlled vehicle) into failure
//! states, transferring knowledge across a sequence of related systems via
//! fine-tuning and attention-weighted source mixtures with optional learned
//! state/value transformations, and scoring the transfer with jumpstart,
//! final-improvement, and steps-to-threshold metrics.

pub mod checkpoint;
pub mod config;
pub mod dqn;
pub mod envs;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod replay;
pub mod runner;
pub mod seeding;
pub mod sut;
pub mod tasks;
pub mod transfer;

pub use error::{Error, Result};
