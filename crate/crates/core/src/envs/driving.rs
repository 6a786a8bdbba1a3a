//! Intersection with a crossing pedestrian: the vehicle travels along +x at
//! y = 0 under a rule-based controller; the adversary accelerates the
//! pedestrian. Dynamics are deterministic given the disturbance sequence;
//! randomness enters only through the initial conditions.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, StepOutcome};
use crate::error::{Error, Result};
use crate::seeding::TaskRng;

/// Pedestrian disturbances: accelerate up (+y), down, left (-x), right, or
/// coast. Probabilities of natural occurrence feed the reward's
/// log-likelihood term.
pub const NUM_DISTURBANCES: usize = 5;
pub const COAST: usize = 4;

const ACCELS: [(f64, f64); 5] = [(0.0, 1.0), (0.0, -1.0), (-1.0, 0.0), (1.0, 0.0), (0.0, 0.0)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Maximum acceleration (m/s^2).
    pub a_max: f64,
    /// Comfortable braking deceleration (m/s^2).
    pub b: f64,
    /// Jam distance s0 (m).
    pub s0: f64,
    /// Desired time headway (s).
    pub t_headway: f64,
    /// Free-road exponent.
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            a_max: 2.0,
            b: 3.0,
            s0: 2.0,
            t_headway: 1.5,
            delta: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrivingConfig {
    /// Vehicle spawn range along x (m).
    pub x_start_min: f64,
    pub x_start_max: f64,
    /// Episode ends when the vehicle passes this x (m).
    pub road_end: f64,
    /// Pedestrian spawn box (m); the crosswalk sits at x = 0.
    pub ped_x_min: f64,
    pub ped_x_max: f64,
    pub ped_y_min: f64,
    pub ped_y_max: f64,
    /// Vehicle desired speed v0 (m/s); also the initial speed.
    pub desired_speed: f64,
    pub idm: IdmParams,
    /// Blind spot center, degrees from the vehicle heading.
    pub blind_spot_direction_deg: f64,
    /// Blind spot angular width, degrees.
    pub blind_spot_width_deg: f64,
    pub dt: f64,
    pub max_steps: usize,
    /// Reward constant weighting the disturbance log-likelihood.
    pub lambda: f64,
    /// Axis-aligned footprints (m).
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub ped_length: f64,
    pub ped_width: f64,
    /// The pedestrian is treated as an obstacle only within this lateral
    /// corridor around the road centerline (m).
    pub corridor_half_width: f64,
    /// Per-axis pedestrian speed cap (m/s).
    pub ped_speed_cap: f64,
    /// Initial walking speed along +y (m/s).
    pub ped_walk_speed: f64,
    /// Disturbance acceleration magnitude (m/s^2).
    pub accel_magnitude: f64,
    /// Natural probability of each acceleration disturbance.
    pub p_accel: f64,
    /// Natural probability of coasting.
    pub p_none: f64,
    pub gamma: f64,
}

impl Default for DrivingConfig {
    fn default() -> Self {
        Self {
            x_start_min: -50.0,
            x_start_max: -40.0,
            road_end: 25.0,
            ped_x_min: -1.0,
            ped_x_max: 1.0,
            ped_y_min: -6.0,
            ped_y_max: -4.0,
            desired_speed: 11.0,
            idm: IdmParams::default(),
            blind_spot_direction_deg: 20.0,
            blind_spot_width_deg: 30.0,
            dt: 0.1,
            max_steps: 300,
            lambda: 0.01,
            vehicle_length: 4.0,
            vehicle_width: 2.0,
            ped_length: 0.5,
            ped_width: 0.5,
            corridor_half_width: 2.0,
            ped_speed_cap: 3.0,
            ped_walk_speed: 1.0,
            accel_magnitude: 1.0,
            p_accel: 0.01,
            p_none: 0.96,
            gamma: 0.95,
        }
    }
}

impl DrivingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        if self.blind_spot_width_deg < 0.0 {
            return Err(Error::InvalidConfig("blind spot width must be >= 0".into()));
        }
        if self.desired_speed <= 0.0
            || self.vehicle_length <= 0.0
            || self.vehicle_width <= 0.0
            || self.ped_length <= 0.0
            || self.ped_width <= 0.0
            || self.ped_speed_cap <= 0.0
        {
            return Err(Error::InvalidConfig(
                "geometry and speeds must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn disturbance_prob(&self, disturbance: usize) -> f64 {
        if disturbance == COAST {
            self.p_none
        } else {
            self.p_accel
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivingState {
    pub veh_x: f64,
    /// Vehicle speed along +x, never negative.
    pub veh_speed: f64,
    pub ped_x: f64,
    pub ped_y: f64,
    pub ped_vx: f64,
    pub ped_vy: f64,
    pub done: bool,
}

/// How the system chooses its longitudinal acceleration.
pub trait VehicleController: Send + Sync {
    fn acceleration(&self, cfg: &DrivingConfig, state: &DrivingState) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveStep {
    pub state: DrivingState,
    pub reward: f64,
    pub done: bool,
    pub is_failure: bool,
}

fn footprints_overlap(cfg: &DrivingConfig, veh_x: f64, ped_x: f64, ped_y: f64) -> bool {
    (veh_x - ped_x).abs() < 0.5 * (cfg.vehicle_length + cfg.ped_length)
        && ped_y.abs() < 0.5 * (cfg.vehicle_width + cfg.ped_width)
}

/// One deterministic transition (semi-implicit Euler). The reward is
/// lambda * ln p(x|s) plus 1 on entering a failure state.
pub fn drive_step(
    cfg: &DrivingConfig,
    state: &DrivingState,
    disturbance: usize,
    controller: &dyn VehicleController,
) -> Result<DriveStep> {
    if disturbance >= NUM_DISTURBANCES {
        return Err(Error::InvalidDisturbance {
            index: disturbance,
            count: NUM_DISTURBANCES,
        });
    }
    debug_assert!(!state.done, "step on a finished episode");

    let (ax, ay) = ACCELS[disturbance];
    let cap = cfg.ped_speed_cap;
    let ped_vx = (state.ped_vx + ax * cfg.accel_magnitude * cfg.dt).clamp(-cap, cap);
    let ped_vy = (state.ped_vy + ay * cfg.accel_magnitude * cfg.dt).clamp(-cap, cap);
    let ped_x = state.ped_x + ped_vx * cfg.dt;
    let ped_y = state.ped_y + ped_vy * cfg.dt;

    // Vehicle acceleration is chosen from the pre-step state.
    let veh_a = controller.acceleration(cfg, state);
    let veh_speed = (state.veh_speed + veh_a * cfg.dt).max(0.0);
    let veh_x = state.veh_x + veh_speed * cfg.dt;

    let is_failure = footprints_overlap(cfg, veh_x, ped_x, ped_y);
    let done = is_failure || veh_x >= cfg.road_end;
    let reward =
        cfg.lambda * cfg.disturbance_prob(disturbance).ln() + if is_failure { 1.0 } else { 0.0 };

    Ok(DriveStep {
        state: DrivingState {
            veh_x,
            veh_speed,
            ped_x,
            ped_y,
            ped_vx,
            ped_vy,
            done,
        },
        reward,
        done,
        is_failure,
    })
}

pub const DRIVE_STATE_DIM: usize = 6;

/// Encode as [veh_x/50, veh_speed/15, ped_x/10, ped_y/10, ped_vx/3, ped_vy/3].
pub fn drive_encode(state: &DrivingState) -> Vec<f64> {
    vec![
        state.veh_x / 50.0,
        state.veh_speed / 15.0,
        state.ped_x / 10.0,
        state.ped_y / 10.0,
        state.ped_vx / 3.0,
        state.ped_vy / 3.0,
    ]
}

/// Draw the initial conditions: vehicle at its desired speed somewhere in
/// the start range, pedestrian in its spawn box walking +y.
pub fn drive_reset(cfg: &DrivingConfig, rng: &mut TaskRng) -> DrivingState {
    let veh_x = rng.random_range(cfg.x_start_min..=cfg.x_start_max);
    let ped_x = rng.random_range(cfg.ped_x_min..=cfg.ped_x_max);
    let ped_y = rng.random_range(cfg.ped_y_min..=cfg.ped_y_max);
    DrivingState {
        veh_x,
        veh_speed: cfg.desired_speed,
        ped_x,
        ped_y,
        ped_vx: 0.0,
        ped_vy: cfg.ped_walk_speed,
        done: false,
    }
}

/// Adversary-side driving environment.
#[derive(Clone)]
pub struct DrivingEnv {
    pub cfg: DrivingConfig,
    controller: Arc<dyn VehicleController>,
    state: DrivingState,
    steps: usize,
}

impl DrivingEnv {
    pub fn new(cfg: DrivingConfig, controller: Arc<dyn VehicleController>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            controller,
            state: DrivingState {
                veh_x: 0.0,
                veh_speed: 0.0,
                ped_x: 0.0,
                ped_y: 0.0,
                ped_vx: 0.0,
                ped_vy: 0.0,
                done: true,
            },
            steps: 0,
        })
    }

    pub fn state(&self) -> &DrivingState {
        &self.state
    }
}

impl Environment for DrivingEnv {
    fn state_dim(&self) -> usize {
        DRIVE_STATE_DIM
    }

    fn num_disturbances(&self) -> usize {
        NUM_DISTURBANCES
    }

    fn discount(&self) -> f64 {
        self.cfg.gamma
    }

    fn max_episode_steps(&self) -> usize {
        self.cfg.max_steps
    }

    fn reset(&mut self, rng: &mut TaskRng) -> Result<Vec<f64>> {
        self.state = drive_reset(&self.cfg, rng);
        self.steps = 0;
        Ok(drive_encode(&self.state))
    }

    fn step(&mut self, disturbance: usize, _rng: &mut TaskRng) -> Result<StepOutcome> {
        let mut out = drive_step(
            &self.cfg,
            &self.state,
            disturbance,
            self.controller.as_ref(),
        )?;
        self.steps += 1;
        if self.steps >= self.cfg.max_steps {
            out.done = true;
            out.state.done = true;
        }
        self.state = out.state;
        Ok(StepOutcome {
            next_state: drive_encode(&self.state),
            reward: out.reward,
            done: out.done,
            is_failure: out.is_failure,
        })
    }
}
