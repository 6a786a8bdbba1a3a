//! Experiment configuration: a JSON document with built-in scale presets,
//! partial overrides, and environment-variable overrides under the
//! `SAFEVAL_` prefix. Every unset field is resolved from the preset before
//! anything runs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dqn::DqnConfig;
use crate::envs::driving::DrivingConfig;
use crate::envs::gridworld::{GridworldConfig, SystemRewardSpec};
use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::nn::OptimizerKind;
use crate::seeding::content_hash;
use crate::tasks::{Scenario, Setting};
use crate::transfer::{ArchConfig, ArchKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Published hyperparameters (3e6-step runs).
    Paper,
    /// Scaled-down runs with a raised learning rate.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnOverrides {
    pub training_steps: Option<u64>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub target_update_freq: Option<u64>,
    pub eval_every: Option<u64>,
    pub eval_episodes: Option<u32>,
    pub gamma: Option<f64>,
    pub epsilon_final: Option<f64>,
    pub importance_sampling: Option<bool>,
    pub replay_capacity: Option<usize>,
}

impl DqnOverrides {
    pub fn apply(&self, base: &mut DqnConfig) {
        if let Some(v) = self.training_steps {
            base.training_steps = v;
        }
        if let Some(v) = self.batch_size {
            base.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            base.learning_rate = v;
        }
        if let Some(v) = self.optimizer {
            base.optimizer = v;
        }
        if let Some(v) = self.target_update_freq {
            base.target_update_freq = v;
        }
        if let Some(v) = self.eval_every {
            base.eval_every = v;
        }
        if let Some(v) = self.eval_episodes {
            base.eval_episodes = v;
        }
        if let Some(v) = self.gamma {
            base.gamma = Some(v);
        }
        if let Some(v) = self.epsilon_final {
            base.epsilon_final = v;
        }
        if let Some(v) = self.importance_sampling {
            base.replay.importance_sampling = v;
        }
        if let Some(v) = self.replay_capacity {
            base.replay.capacity = v;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridworldOverrides {
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub slip_prob: Option<f64>,
    pub max_steps: Option<usize>,
    pub gamma: Option<f64>,
    /// Fixed layout for the learning-system setting ('#', '.', digits).
    pub ascii_map: Option<String>,
    /// Wall density for sampled comparable-setting layouts.
    pub wall_prob: Option<f64>,
    pub collision_penalty: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrivingOverrides {
    pub lambda: Option<f64>,
    pub dt: Option<f64>,
    pub max_steps: Option<usize>,
    pub gamma: Option<f64>,
    pub desired_speed: Option<f64>,
    pub blind_spot_direction_deg: Option<f64>,
    pub blind_spot_width_deg: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvOverrides {
    pub gridworld: GridworldOverrides,
    pub driving: DrivingOverrides,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchOverrides {
    pub base_hidden: Option<Vec<usize>>,
    pub attention_hidden: Option<Vec<usize>>,
    pub transform_noise: Option<f64>,
}

fn default_architectures() -> Vec<ArchKind> {
    vec![
        ArchKind::Scratch,
        ArchKind::FineTune,
        ArchKind::A2t,
        ArchKind::A2tSavt,
    ]
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub scenario: Scenario,
    pub setting: Setting,
    /// Number of tasks in the sequence; None uses the setting's default
    /// (10 learning-system, 16 gridworld-comparable, 9 driving-comparable).
    #[serde(default)]
    pub num_tasks: Option<usize>,
    #[serde(default = "default_architectures")]
    pub architectures: Vec<ArchKind>,
    #[serde(default = "ExperimentConfig::default_preset")]
    pub preset: Preset,
    #[serde(default)]
    pub master_seed: u64,
    /// Output directory; default runs/<name>.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub dqn: DqnOverrides,
    /// Overrides for the system's own training run (learning setting).
    #[serde(default)]
    pub system_training: DqnOverrides,
    #[serde(default)]
    pub env: EnvOverrides,
    #[serde(default)]
    pub arch: ArchOverrides,
    #[serde(default)]
    pub metrics: MetricConfig,
}

impl ExperimentConfig {
    fn default_preset() -> Preset {
        Preset::Desk
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Apply `SAFEVAL_`-prefixed overrides from an environment-variable
    /// iterator.
    pub fn apply_env_overrides<I>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (key, value) in vars {
            let Some(name) = key.strip_prefix("SAFEVAL_") else {
                continue;
            };
            let parse_err =
                |e: String| Error::InvalidConfig(format!("env override {key}={value}: {e}"));
            match name {
                "MASTER_SEED" => {
                    self.master_seed = value.parse().map_err(|e| parse_err(format!("{e}")))?
                }
                "NUM_TASKS" => {
                    self.num_tasks = Some(value.parse().map_err(|e| parse_err(format!("{e}")))?)
                }
                "OUT_DIR" => self.out_dir = Some(PathBuf::from(&value)),
                "JOBS" => self.jobs = value.parse().map_err(|e| parse_err(format!("{e}")))?,
                "PRESET" => self.preset = value.parse()?,
                "TRAINING_STEPS" => {
                    self.dqn.training_steps =
                        Some(value.parse().map_err(|e| parse_err(format!("{e}")))?)
                }
                "EVAL_EVERY" => {
                    self.dqn.eval_every =
                        Some(value.parse().map_err(|e| parse_err(format!("{e}")))?)
                }
                "EVAL_EPISODES" => {
                    self.dqn.eval_episodes =
                        Some(value.parse().map_err(|e| parse_err(format!("{e}")))?)
                }
                "LEARNING_RATE" => {
                    self.dqn.learning_rate =
                        Some(value.parse().map_err(|e| parse_err(format!("{e}")))?)
                }
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown environment override {key}"
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::InvalidConfig(
                "experiment name must be nonempty".into(),
            ));
        }
        if self.architectures.is_empty() {
            return Err(Error::InvalidConfig(
                "architectures list must be nonempty".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.architectures {
            if !seen.insert(a.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate architecture {a}")));
            }
        }
        if let Some(n) = self.num_tasks {
            if n == 0 {
                return Err(Error::InvalidConfig("num_tasks must be >= 1".into()));
            }
            if self.setting == Setting::Comparable && n < 2 {
                return Err(Error::InvalidConfig(
                    "comparable setting needs at least 2 tasks".into(),
                ));
            }
        }
        if self.jobs == 0 {
            return Err(Error::InvalidConfig("jobs must be >= 1".into()));
        }
        Ok(())
    }

    fn default_num_tasks(&self) -> usize {
        match (self.scenario, self.setting) {
            (_, Setting::LearningSystem) => 10,
            (Scenario::Gridworld, Setting::Comparable) => 16,
            (Scenario::Driving, Setting::Comparable) => 9,
        }
    }

    /// Resolve presets and overrides into the complete runtime
    /// configuration.
    pub fn resolve(&self) -> Result<Resolved> {
        self.validate()?;
        let num_tasks = self.num_tasks.unwrap_or_else(|| self.default_num_tasks());

        let mut dqn = match (self.preset, self.scenario) {
            (Preset::Paper, Scenario::Gridworld) => DqnConfig::paper_gridworld(),
            (Preset::Paper, Scenario::Driving) => DqnConfig::paper_driving(),
            (Preset::Desk, Scenario::Gridworld) => DqnConfig {
                target_update_freq: 2_000,
                ..DqnConfig::desk()
            },
            (Preset::Desk, Scenario::Driving) => DqnConfig {
                target_update_freq: 3_000,
                ..DqnConfig::desk()
            },
        };
        self.dqn.apply(&mut dqn);
        dqn.validate()?;

        // The system's own training budget (gridworld learning setting).
        let mut system_training = match self.preset {
            Preset::Paper => DqnConfig {
                training_steps: 1_000_000,
                learning_rate: 4e-5,
                ..DqnConfig::paper_gridworld()
            },
            Preset::Desk => DqnConfig {
                training_steps: 100_000,
                eval_every: 10_000,
                eval_episodes: 50,
                ..DqnConfig::desk()
            },
        };
        self.system_training.apply(&mut system_training);
        system_training.validate()?;

        let gw = &self.env.gridworld;
        let mut grid = match &gw.ascii_map {
            Some(map) => GridworldConfig::from_ascii(map, gw.slip_prob.unwrap_or(0.3))?,
            None => GridworldConfig::default(),
        };
        if let Some(v) = gw.width {
            grid.width = v;
        }
        if let Some(v) = gw.height {
            grid.height = v;
        }
        if let Some(v) = gw.slip_prob {
            grid.slip_prob = v;
        }
        if let Some(v) = gw.max_steps {
            grid.max_steps = v;
        }
        if let Some(v) = gw.gamma {
            grid.gamma = v;
        }
        grid.validate()?;
        let rewards = SystemRewardSpec {
            collision_penalty: gw.collision_penalty.unwrap_or(-1.0),
        };

        let dv = &self.env.driving;
        let mut driving = DrivingConfig::default();
        if let Some(v) = dv.lambda {
            driving.lambda = v;
        }
        if let Some(v) = dv.dt {
            driving.dt = v;
        }
        if let Some(v) = dv.max_steps {
            driving.max_steps = v;
        }
        if let Some(v) = dv.gamma {
            driving.gamma = v;
        }
        if let Some(v) = dv.desired_speed {
            driving.desired_speed = v;
        }
        if let Some(v) = dv.blind_spot_direction_deg {
            driving.blind_spot_direction_deg = v;
        }
        if let Some(v) = dv.blind_spot_width_deg {
            driving.blind_spot_width_deg = v;
        }
        driving.validate()?;

        let mut arch = ArchConfig::default();
        if let Some(v) = &self.arch.base_hidden {
            arch.base_hidden = v.clone();
        }
        if let Some(v) = &self.arch.attention_hidden {
            arch.attention_hidden = v.clone();
        }
        if let Some(v) = self.arch.transform_noise {
            arch.transform_noise = v;
        }

        let out_dir = self
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.name));

        let mut resolved = Resolved {
            name: self.name.clone(),
            scenario: self.scenario,
            setting: self.setting,
            num_tasks,
            architectures: self.architectures.clone(),
            preset: self.preset,
            master_seed: self.master_seed,
            out_dir,
            jobs: self.jobs,
            dqn,
            system_training,
            grid,
            rewards,
            driving,
            arch,
            metrics: self.metrics,
            wall_prob: gw.wall_prob.unwrap_or(0.2),
            candidate_budget_fraction: 0.25,
            config_hash: String::new(),
        };
        resolved.config_hash = content_hash(serde_json::to_string(&resolved)?.as_bytes());
        Ok(resolved)
    }
}

/// Fully resolved experiment parameters. The config hash covers every
/// serialized field; `out_dir` and `jobs` are execution placement, not part
/// of the experiment's identity, so they are excluded (two runs of one
/// config into different directories must produce bit-identical artifacts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub name: String,
    pub scenario: Scenario,
    pub setting: Setting,
    pub num_tasks: usize,
    pub architectures: Vec<ArchKind>,
    pub preset: Preset,
    pub master_seed: u64,
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub jobs: usize,
    pub dqn: DqnConfig,
    pub system_training: DqnConfig,
    pub grid: GridworldConfig,
    pub rewards: SystemRewardSpec,
    pub driving: DrivingConfig,
    pub arch: ArchConfig,
    pub metrics: MetricConfig,
    pub wall_prob: f64,
    pub candidate_budget_fraction: f64,
    #[serde(skip)]
    pub config_hash: String,
}
