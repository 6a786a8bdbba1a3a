//! Task sequences and iterative solving: construct the gridworld/driving
//! task sets for the learning-system and comparable-systems settings, then
//! solve each task with the requested architectures, feeding earlier
//! scratch solutions to the transfer learners as frozen sources.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Meta};
use crate::dqn::{self, DqnConfig};
use crate::envs::driving::{DrivingConfig, DrivingEnv};
use crate::envs::gridworld::{Cell, GridworldAdversaryEnv, GridworldConfig, SystemRewardSpec};
use crate::envs::{Environment, StepOutcome};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::seeding::{content_hash, derive_seed, rng_from_seed, TaskRng};
use crate::sut::{value_iteration, AdversaryModel, IdmController, NetworkGwPolicy, TabularPolicy};
use crate::transfer::{build_architecture, ArchConfig, ArchKind, Architecture};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Gridworld,
    Driving,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    LearningSystem,
    Comparable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case")]
pub enum EnvSpec {
    Gridworld(GridworldConfig),
    Driving(DrivingConfig),
}

impl EnvSpec {
    pub fn config_hash(&self) -> String {
        content_hash(
            serde_json::to_string(self)
                .expect("env config serializes")
                .as_bytes(),
        )
    }
}

/// How a task's system policy is found again: a stored network checkpoint,
/// a stored tabular policy, or blind-spot parameters (driving).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SystemRef {
    Network { checkpoint: usize },
    Tabular { policy: usize },
    BlindSpot { direction_deg: f64, width_deg: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub scenario: Scenario,
    pub setting: Setting,
    /// 1-based position in the sequence.
    pub index: usize,
    pub env: EnvSpec,
    pub system: SystemRef,
}

/// Shared storage for system policies referenced by task specs.
#[derive(Default, Clone)]
pub struct SystemBank {
    pub networks: Vec<Arc<Mlp>>,
    pub tabulars: Vec<Arc<TabularPolicy>>,
}

#[derive(Clone)]
pub struct TaskSet {
    pub specs: Vec<TaskSpec>,
    pub systems: SystemBank,
}

/// Concrete environment for any scenario.
#[derive(Clone)]
pub enum AnyEnv {
    Gridworld(GridworldAdversaryEnv),
    Driving(DrivingEnv),
}

macro_rules! delegate_env {
    ($self:ident, $env:ident => $body:expr) => {
        match $self {
            AnyEnv::Gridworld($env) => $body,
            AnyEnv::Driving($env) => $body,
        }
    };
}

impl Environment for AnyEnv {
    fn state_dim(&self) -> usize {
        delegate_env!(self, env => env.state_dim())
    }
    fn num_disturbances(&self) -> usize {
        delegate_env!(self, env => env.num_disturbances())
    }
    fn discount(&self) -> f64 {
        delegate_env!(self, env => env.discount())
    }
    fn max_episode_steps(&self) -> usize {
        delegate_env!(self, env => env.max_episode_steps())
    }
    fn reset(&mut self, rng: &mut TaskRng) -> Result<Vec<f64>> {
        delegate_env!(self, env => env.reset(rng))
    }
    fn step(&mut self, disturbance: usize, rng: &mut TaskRng) -> Result<StepOutcome> {
        delegate_env!(self, env => env.step(disturbance, rng))
    }
}

pub fn instantiate_env(spec: &TaskSpec, bank: &SystemBank) -> Result<AnyEnv> {
    match (&spec.env, &spec.system) {
        (EnvSpec::Gridworld(cfg), SystemRef::Network { checkpoint }) => {
            let net = bank
                .networks
                .get(*checkpoint)
                .ok_or(Error::IndexOutOfRange {
                    index: *checkpoint,
                    len: bank.networks.len(),
                })?;
            Ok(AnyEnv::Gridworld(GridworldAdversaryEnv::new(
                cfg.clone(),
                Arc::new(NetworkGwPolicy::new(net.clone())),
            )?))
        }
        (EnvSpec::Gridworld(cfg), SystemRef::Tabular { policy }) => {
            let tab = bank.tabulars.get(*policy).ok_or(Error::IndexOutOfRange {
                index: *policy,
                len: bank.tabulars.len(),
            })?;
            Ok(AnyEnv::Gridworld(GridworldAdversaryEnv::new(
                cfg.clone(),
                tab.clone(),
            )?))
        }
        (EnvSpec::Driving(cfg), SystemRef::BlindSpot { .. }) => Ok(AnyEnv::Driving(
            DrivingEnv::new(cfg.clone(), Arc::new(IdmController::from_config(cfg)))?,
        )),
        _ => Err(Error::InvalidConfig(
            "system reference does not match the scenario".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Sequence builders
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GwLearningConfig {
    pub grid: GridworldConfig,
    pub rewards: SystemRewardSpec,
    pub num_tasks: usize,
    /// Budget for training the system itself (blue agent).
    pub system_training: DqnConfig,
}

impl Default for GwLearningConfig {
    fn default() -> Self {
        Self {
            grid: GridworldConfig::default(),
            rewards: SystemRewardSpec::default(),
            num_tasks: 10,
            system_training: DqnConfig::desk(),
        }
    }
}

/// Task i validates the i-th stored checkpoint of one system training run;
/// the layout is identical across tasks, so only the transition model
/// varies.
pub fn build_gw_learning_sequence(cfg: &GwLearningConfig) -> Result<TaskSet> {
    if cfg.num_tasks == 0 {
        return Err(Error::InvalidConfig("num_tasks must be >= 1".into()));
    }
    let nets = crate::sut::train_system_checkpoints(
        &cfg.grid,
        &cfg.rewards,
        &cfg.system_training,
        cfg.num_tasks,
    )?;
    build_gw_learning_from_checkpoints(cfg, nets)
}

/// Same as [`build_gw_learning_sequence`] but with pre-trained checkpoints
/// (used when resuming from persisted systems).
pub fn build_gw_learning_from_checkpoints(
    cfg: &GwLearningConfig,
    checkpoints: Vec<Mlp>,
) -> Result<TaskSet> {
    if checkpoints.len() != cfg.num_tasks {
        return Err(Error::InvalidConfig(format!(
            "expected {} system checkpoints, got {}",
            cfg.num_tasks,
            checkpoints.len()
        )));
    }
    let systems = SystemBank {
        networks: checkpoints.into_iter().map(Arc::new).collect(),
        tabulars: Vec::new(),
    };
    let specs = (1..=cfg.num_tasks)
        .map(|i| TaskSpec {
            scenario: Scenario::Gridworld,
            setting: Setting::LearningSystem,
            index: i,
            env: EnvSpec::Gridworld(cfg.grid.clone()),
            system: SystemRef::Network { checkpoint: i - 1 },
        })
        .collect();
    Ok(TaskSet { specs, systems })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GwComparableConfig {
    pub width: usize,
    pub height: usize,
    pub slip_prob: f64,
    pub max_steps: usize,
    pub gamma: f64,
    pub num_tasks: usize,
    /// Each interior cell becomes a wall with this probability.
    pub wall_prob: f64,
    pub min_goals: usize,
    pub max_goals: usize,
    pub goal_values: Vec<f64>,
    pub rewards: SystemRewardSpec,
    pub vi_tolerance: f64,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for GwComparableConfig {
    fn default() -> Self {
        Self {
            width: 10,
            height: 10,
            slip_prob: 0.3,
            max_steps: 100,
            gamma: 0.95,
            num_tasks: 16,
            wall_prob: 0.2,
            min_goals: 2,
            max_goals: 4,
            goal_values: vec![1.0, 2.0, 3.0],
            rewards: SystemRewardSpec::default(),
            vi_tolerance: 1e-8,
            max_attempts: 1000,
            seed: 0,
        }
    }
}

/// All free cells mutually reachable through 8-neighbor moves.
fn layout_connected(cfg: &GridworldConfig) -> bool {
    let free: Vec<Cell> = (0..cfg.height as i32)
        .flat_map(|y| (0..cfg.width as i32).map(move |x| (x, y)))
        .filter(|&c| cfg.is_free(c))
        .collect();
    if free.is_empty() {
        return false;
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut queue = vec![free[0]];
    seen.insert(free[0]);
    while let Some(c) = queue.pop() {
        for mv in 0..crate::envs::gridworld::NUM_MOVES - 1 {
            let n = cfg.resolve_move(c, mv);
            if n != c && seen.insert(n) {
                queue.push(n);
            }
        }
    }
    seen.len() == free.len()
}

fn sample_layout(cfg: &GwComparableConfig, rng: &mut TaskRng) -> GridworldConfig {
    let mut grid = GridworldConfig {
        width: cfg.width,
        height: cfg.height,
        slip_prob: cfg.slip_prob,
        max_steps: cfg.max_steps,
        gamma: cfg.gamma,
        ..GridworldConfig::default()
    };
    for y in 1..cfg.height as i32 - 1 {
        for x in 1..cfg.width as i32 - 1 {
            if rng.random::<f64>() < cfg.wall_prob {
                grid.walls.insert((x, y));
            }
        }
    }
    let free: Vec<Cell> = (0..cfg.height as i32)
        .flat_map(|y| (0..cfg.width as i32).map(move |x| (x, y)))
        .filter(|&c| grid.is_free(c))
        .collect();
    let n_goals = rng.random_range(cfg.min_goals..=cfg.max_goals);
    let mut available = free;
    for _ in 0..n_goals {
        if available.is_empty() {
            break;
        }
        let i = rng.random_range(0..available.len());
        let cell = available.swap_remove(i);
        let v = cfg.goal_values[rng.random_range(0..cfg.goal_values.len())];
        grid.goal_rewards.insert(cell, v);
    }
    grid
}

/// Each task samples a fresh connected layout (walls, goal placement, goal
/// values all vary) and solves the system side exactly by dynamic
/// programming against a random adversary.
pub fn build_gw_comparable_sequence(cfg: &GwComparableConfig) -> Result<TaskSet> {
    if cfg.num_tasks < 2 {
        return Err(Error::InvalidConfig(
            "comparable setting needs >= 2 tasks".into(),
        ));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut layouts: Vec<GridworldConfig> = Vec::with_capacity(cfg.num_tasks);
    for _ in 0..cfg.num_tasks {
        let mut accepted = None;
        for _ in 0..cfg.max_attempts {
            let grid = sample_layout(cfg, &mut rng);
            let enough_goals = grid.goal_rewards.len() >= cfg.min_goals;
            let enough_spawns = grid.spawn_cells().len() >= 2;
            let duplicate = layouts
                .iter()
                .any(|g| g.walls == grid.walls && g.goal_rewards == grid.goal_rewards);
            if enough_goals && enough_spawns && !duplicate && layout_connected(&grid) {
                accepted = Some(grid);
                break;
            }
        }
        match accepted {
            Some(g) => layouts.push(g),
            None => {
                return Err(Error::LayoutGeneration {
                    attempts: cfg.max_attempts,
                    reason: "no connected, distinct layout found".into(),
                })
            }
        }
    }

    let mut systems = SystemBank::default();
    let mut specs = Vec::with_capacity(cfg.num_tasks);
    for (i, grid) in layouts.into_iter().enumerate() {
        let policy = value_iteration(
            &grid,
            &cfg.rewards,
            AdversaryModel::UniformRandom,
            cfg.gamma,
            cfg.vi_tolerance,
        )?;
        systems.tabulars.push(Arc::new(policy));
        specs.push(TaskSpec {
            scenario: Scenario::Gridworld,
            setting: Setting::Comparable,
            index: i + 1,
            env: EnvSpec::Gridworld(grid),
            system: SystemRef::Tabular { policy: i },
        });
    }
    Ok(TaskSet { specs, systems })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdLearningConfig {
    pub driving: DrivingConfig,
    pub num_tasks: usize,
    pub width_start_deg: f64,
    pub width_end_deg: f64,
    pub direction_deg: f64,
}

impl Default for AdLearningConfig {
    fn default() -> Self {
        Self {
            driving: DrivingConfig::default(),
            num_tasks: 10,
            width_start_deg: 30.0,
            width_end_deg: 6.0,
            direction_deg: 20.0,
        }
    }
}

/// Blind-spot widths linearly spaced from start to end (inclusive), fixed
/// direction: the simulated "learning system" sees more as tasks advance.
pub fn build_ad_learning_sequence(cfg: &AdLearningConfig) -> Result<TaskSet> {
    if cfg.num_tasks == 0 {
        return Err(Error::InvalidConfig("num_tasks must be >= 1".into()));
    }
    let step = if cfg.num_tasks > 1 {
        (cfg.width_start_deg - cfg.width_end_deg) / (cfg.num_tasks - 1) as f64
    } else {
        0.0
    };
    let specs = (1..=cfg.num_tasks)
        .map(|i| {
            let width = cfg.width_start_deg - (i - 1) as f64 * step;
            let env = DrivingConfig {
                blind_spot_direction_deg: cfg.direction_deg,
                blind_spot_width_deg: width,
                ..cfg.driving.clone()
            };
            TaskSpec {
                scenario: Scenario::Driving,
                setting: Setting::LearningSystem,
                index: i,
                env: EnvSpec::Driving(env),
                system: SystemRef::BlindSpot {
                    direction_deg: cfg.direction_deg,
                    width_deg: width,
                },
            }
        })
        .collect();
    Ok(TaskSet {
        specs,
        systems: SystemBank::default(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdComparableConfig {
    pub driving: DrivingConfig,
    pub population: usize,
    pub keep: usize,
    pub direction_min_deg: f64,
    pub direction_max_deg: f64,
    pub width_min_deg: f64,
    pub width_max_deg: f64,
    /// Reduced budget for the per-candidate scratch adversaries.
    pub candidate_training: DqnConfig,
    pub cross_eval_episodes: u32,
    /// "Performs poorly" means scoring below this fraction of the target
    /// task's own scratch score.
    pub dissimilar_fraction: f64,
    pub seed: u64,
}

impl Default for AdComparableConfig {
    fn default() -> Self {
        Self {
            driving: DrivingConfig::default(),
            population: 30,
            keep: 9,
            direction_min_deg: -30.0,
            direction_max_deg: 30.0,
            width_min_deg: 3.0,
            width_max_deg: 9.0,
            candidate_training: DqnConfig {
                training_steps: DqnConfig::desk().training_steps / 4,
                ..DqnConfig::desk()
            },
            cross_eval_episodes: 100,
            dissimilar_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Greedy selection of mutually dissimilar candidates in sampling order:
/// a candidate joins if, against every already-selected task (both
/// directions), the trained policy of one scores below `fraction` of the
/// other's own scratch score.
pub fn select_dissimilar(
    own_scores: &[f64],
    keep: usize,
    fraction: f64,
    cross: &mut dyn FnMut(usize, usize) -> Result<f64>,
) -> Result<Vec<usize>> {
    let mut selected: Vec<usize> = Vec::with_capacity(keep);
    for c in 0..own_scores.len() {
        if selected.len() == keep {
            break;
        }
        let mut ok = true;
        for &s in &selected {
            if cross(c, s)? >= fraction * own_scores[s] || cross(s, c)? >= fraction * own_scores[c]
            {
                ok = false;
                break;
            }
        }
        if ok {
            selected.push(c);
        }
    }
    if selected.len() < keep {
        return Err(Error::TaskSelection {
            achieved: selected.len(),
            requested: keep,
        });
    }
    Ok(selected)
}

/// Result of the comparable-driving construction, keeping the candidate
/// policies and scores around for verification.
pub struct AdComparableOutcome {
    pub tasks: TaskSet,
    pub selected: Vec<usize>,
    pub blind_spots: Vec<(f64, f64)>,
    pub own_scores: Vec<f64>,
}

/// Sample blind-spot candidates, train a reduced-budget scratch adversary
/// per candidate, and greedily keep tasks whose policies transfer poorly to
/// one another.
pub fn build_ad_comparable_sequence(cfg: &AdComparableConfig) -> Result<AdComparableOutcome> {
    if cfg.keep == 0 || cfg.keep > cfg.population {
        return Err(Error::InvalidConfig(format!(
            "keep {} must be in 1..={}",
            cfg.keep, cfg.population
        )));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let blind_spots: Vec<(f64, f64)> = (0..cfg.population)
        .map(|_| {
            (
                rng.random_range(cfg.direction_min_deg..=cfg.direction_max_deg),
                rng.random_range(cfg.width_min_deg..=cfg.width_max_deg),
            )
        })
        .collect();

    let env_for = |&(dir, width): &(f64, f64)| -> Result<DrivingEnv> {
        let env_cfg = DrivingConfig {
            blind_spot_direction_deg: dir,
            blind_spot_width_deg: width,
            ..cfg.driving.clone()
        };
        DrivingEnv::new(
            env_cfg.clone(),
            Arc::new(IdmController::from_config(&env_cfg)),
        )
    };

    let mut policies = Vec::with_capacity(cfg.population);
    let mut own_scores = Vec::with_capacity(cfg.population);
    for (i, bs) in blind_spots.iter().enumerate() {
        let mut env = env_for(bs)?;
        let seed = derive_seed(cfg.seed, "candidate", i as u64);
        let net = Mlp::xavier(
            &[env.state_dim(), 64, 32, 16, env.num_disturbances()],
            &mut rng_from_seed(seed),
        )?;
        let train_cfg = DqnConfig {
            seed,
            ..cfg.candidate_training.clone()
        };
        let result = dqn::train(&mut env, net, &train_cfg)?;
        let (own, _) = dqn::evaluate(
            &mut env,
            &result.arch,
            cfg.cross_eval_episodes,
            derive_seed(cfg.seed, "own-eval", i as u64),
        )?;
        policies.push(result.arch);
        own_scores.push(own);
    }

    let mut cross_cache = std::collections::BTreeMap::new();
    let mut cross = |i: usize, j: usize| -> Result<f64> {
        if let Some(&v) = cross_cache.get(&(i, j)) {
            return Ok(v);
        }
        let mut env = env_for(&blind_spots[j])?;
        let (score, _) = dqn::evaluate(
            &mut env,
            &policies[i],
            cfg.cross_eval_episodes,
            derive_seed(cfg.seed, "cross-eval", (i * cfg.population + j) as u64),
        )?;
        cross_cache.insert((i, j), score);
        Ok(score)
    };

    let selected = select_dissimilar(&own_scores, cfg.keep, cfg.dissimilar_fraction, &mut cross)?;

    let specs = selected
        .iter()
        .enumerate()
        .map(|(pos, &c)| {
            let (dir, width) = blind_spots[c];
            TaskSpec {
                scenario: Scenario::Driving,
                setting: Setting::Comparable,
                index: pos + 1,
                env: EnvSpec::Driving(DrivingConfig {
                    blind_spot_direction_deg: dir,
                    blind_spot_width_deg: width,
                    ..cfg.driving.clone()
                }),
                system: SystemRef::BlindSpot {
                    direction_deg: dir,
                    width_deg: width,
                },
            }
        })
        .collect();
    Ok(AdComparableOutcome {
        tasks: TaskSet {
            specs,
            systems: SystemBank::default(),
        },
        selected,
        blind_spots,
        own_scores,
    })
}

// ---------------------------------------------------------------------------
// Sequence execution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub dqn: DqnConfig,
    pub arch: ArchConfig,
    pub architectures: Vec<ArchKind>,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub jobs: usize,
    /// Experiment-level provenance hash stamped into every output file.
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_index: usize,
    pub architecture: ArchKind,
    pub dir: PathBuf,
    pub seed: u64,
    /// Task indices whose scratch solutions fed this run.
    pub sources: Vec<usize>,
    pub skipped: bool,
    pub failures_found: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config_hash: String,
    pub runs: Vec<RunRecord>,
}

pub fn run_dir(out_dir: &Path, task_index: usize, kind: ArchKind) -> PathBuf {
    out_dir
        .join(format!("task{task_index}"))
        .join(kind.as_str())
}

fn expected_curve_len(dqn: &DqnConfig) -> usize {
    (dqn.training_steps / dqn.eval_every) as usize
}

/// A run is complete when its checkpoint exists and its curve holds every
/// scheduled evaluation.
fn run_is_complete(dir: &Path, dqn: &DqnConfig) -> bool {
    let curve_path = dir.join("curve.csv");
    let ckpt_path = dir.join("checkpoint.json");
    if !curve_path.exists() || !ckpt_path.exists() {
        return false;
    }
    match dqn::LearningCurve::load_csv(&curve_path) {
        Ok(curve) => curve.len() == expected_curve_len(dqn),
        Err(_) => false,
    }
}

/// (task index, scratch solution, checkpoint file) — the archive entry a
/// transfer run consumes as one source.
type SourceEntry = (usize, Arc<Mlp>, PathBuf);

struct RunOutcome {
    record: RunRecord,
    scratch_net: Option<Arc<Mlp>>,
}

#[derive(Serialize)]
struct RunSnapshot<'a> {
    task: &'a TaskSpec,
    architecture: ArchKind,
    seed: u64,
    sources: &'a [usize],
    dqn: &'a DqnConfig,
    arch: &'a ArchConfig,
    config_hash: &'a str,
}

fn execute_run(
    spec: &TaskSpec,
    bank: &SystemBank,
    kind: ArchKind,
    sources: &[SourceEntry],
    cfg: &RunConfig,
) -> Result<(PathBuf, Arc<Mlp>, usize)> {
    let dir = run_dir(&cfg.out_dir, spec.index, kind);
    std::fs::create_dir_all(&dir)?;
    let seed = derive_seed(
        cfg.master_seed,
        &format!("task{}:{}", spec.index, kind.as_str()),
        0,
    );
    let mut env = instantiate_env(spec, bank)?;
    let source_nets: Vec<Arc<Mlp>> = sources.iter().map(|(_, n, _)| n.clone()).collect();
    let mut build_rng = rng_from_seed(derive_seed(seed, "init", 0));
    let arch = build_architecture(
        kind,
        &cfg.arch,
        &source_nets,
        env.state_dim(),
        env.num_disturbances(),
        &mut build_rng,
    )?;
    let dqn_cfg = DqnConfig {
        seed,
        ..cfg.dqn.clone()
    };
    let source_indices: Vec<usize> = sources.iter().map(|(i, _, _)| *i).collect();
    let snapshot = RunSnapshot {
        task: spec,
        architecture: kind,
        seed,
        sources: &source_indices,
        dqn: &dqn_cfg,
        arch: &cfg.arch,
        config_hash: &cfg.config_hash,
    };
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&snapshot)?,
    )?;

    let result = dqn::train(&mut env, arch, &dqn_cfg)?;

    result
        .curve
        .save_csv(&dir.join("curve.csv"), &cfg.config_hash)?;
    let meta = Meta {
        seed,
        train_step: dqn_cfg.training_steps,
        env_config_hash: spec.env.config_hash(),
        config_hash: cfg.config_hash.clone(),
    };
    let source_files: Vec<PathBuf> = sources.iter().map(|(_, _, p)| p.clone()).collect();
    checkpoint::save_architecture(
        &dir.join("checkpoint.json"),
        &result.arch,
        meta,
        &source_files,
    )?;

    let mut log = String::new();
    log.push_str(&format!("task={} arch={}\n", spec.index, kind));
    log.push_str(&format!("seed={seed}\n"));
    log.push_str(&format!("config_hash={}\n", cfg.config_hash));
    log.push_str(&format!("failures_found={}\n", result.failures_found));
    if let Some(last) = result.curve.points.last() {
        log.push_str(&format!(
            "final_eval step={} mean={:.6} std={:.6}\n",
            last.step, last.mean_return, last.std_return
        ));
    }
    std::fs::write(dir.join("log.txt"), log)?;

    let scratch = match &result.arch {
        Architecture::Scratch(net) => Arc::new(net.clone()),
        _ => Arc::new(Mlp::zeros(&[1, 1])?), // unused for transfer runs
    };
    Ok((dir, scratch, result.failures_found))
}

fn run_one(
    spec: &TaskSpec,
    bank: &SystemBank,
    kind: ArchKind,
    sources: Vec<SourceEntry>,
    cfg: &RunConfig,
) -> RunOutcome {
    let dir = run_dir(&cfg.out_dir, spec.index, kind);
    let seed = derive_seed(
        cfg.master_seed,
        &format!("task{}:{}", spec.index, kind.as_str()),
        0,
    );
    let source_indices: Vec<usize> = sources.iter().map(|(i, _, _)| *i).collect();

    if run_is_complete(&dir, &cfg.dqn) {
        let scratch_net = if kind == ArchKind::Scratch {
            checkpoint::load_mlp(&dir.join("checkpoint.json"))
                .ok()
                .map(|(net, _)| Arc::new(net))
        } else {
            None
        };
        return RunOutcome {
            record: RunRecord {
                task_index: spec.index,
                architecture: kind,
                dir,
                seed,
                sources: source_indices,
                skipped: true,
                failures_found: 0,
                error: None,
            },
            scratch_net,
        };
    }

    match execute_run(spec, bank, kind, &sources, cfg) {
        Ok((dir, net, failures)) => RunOutcome {
            record: RunRecord {
                task_index: spec.index,
                architecture: kind,
                dir,
                seed,
                sources: source_indices,
                skipped: false,
                failures_found: failures,
                error: None,
            },
            scratch_net: (kind == ArchKind::Scratch).then_some(net),
        },
        Err(e) => RunOutcome {
            record: RunRecord {
                task_index: spec.index,
                architecture: kind,
                dir,
                seed,
                sources: source_indices,
                skipped: false,
                failures_found: 0,
                error: Some(e.to_string()),
            },
            scratch_net: None,
        },
    }
}

/// Execute a wave of independent runs, at most `jobs` at a time.
fn run_wave(
    jobs: usize,
    work: Vec<(TaskSpec, ArchKind, Vec<SourceEntry>)>,
    bank: &SystemBank,
    cfg: &RunConfig,
) -> Vec<RunOutcome> {
    let jobs = jobs.max(1);
    let mut outcomes = Vec::with_capacity(work.len());
    for chunk in work.chunks(jobs) {
        if jobs == 1 || chunk.len() == 1 {
            for (spec, kind, sources) in chunk {
                outcomes.push(run_one(spec, bank, *kind, sources.clone(), cfg));
            }
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|(spec, kind, sources)| {
                        scope.spawn(move || run_one(spec, bank, *kind, sources.clone(), cfg))
                    })
                    .collect();
                for h in handles {
                    outcomes.push(h.join().expect("run thread panicked"));
                }
            });
        }
    }
    outcomes
}

/// Solve the sequence: task 1 from scratch only, later tasks with every
/// requested architecture, transfer learners sourcing all earlier archived
/// scratch solutions (fine-tuning the most recent one). Completed runs
/// found on disk are skipped; failed runs are recorded and the sequence
/// continues.
pub fn run_sequence(tasks: &TaskSet, cfg: &RunConfig) -> Result<ExperimentRecord> {
    if tasks.specs.is_empty() {
        return Err(Error::InvalidConfig("task list is empty".into()));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut record = ExperimentRecord {
        config_hash: cfg.config_hash.clone(),
        ..ExperimentRecord::default()
    };

    // Scratch phase: always task 1; later tasks when scratch is requested.
    let scratch_requested = cfg.architectures.contains(&ArchKind::Scratch);
    let scratch_work: Vec<_> = tasks
        .specs
        .iter()
        .filter(|s| s.index == 1 || scratch_requested)
        .map(|s| (s.clone(), ArchKind::Scratch, Vec::new()))
        .collect();
    let outcomes = run_wave(cfg.jobs, scratch_work, &tasks.systems, cfg);

    // Archive of scratch solutions by task index.
    let mut archive: Vec<SourceEntry> = Vec::new();
    for o in outcomes {
        if let Some(net) = o.scratch_net {
            archive.push((
                o.record.task_index,
                net,
                o.record.dir.join("checkpoint.json"),
            ));
        }
        record.runs.push(o.record);
    }
    archive.sort_by_key(|(i, _, _)| *i);

    // Transfer phase.
    let mut transfer_work = Vec::new();
    for spec in tasks.specs.iter().filter(|s| s.index >= 2) {
        for kind in cfg
            .architectures
            .iter()
            .filter(|k| **k != ArchKind::Scratch)
        {
            let sources: Vec<SourceEntry> = archive
                .iter()
                .filter(|(i, _, _)| *i < spec.index)
                .cloned()
                .collect();
            let sources = if *kind == ArchKind::FineTune {
                sources.last().cloned().into_iter().collect()
            } else {
                sources
            };
            transfer_work.push((spec.clone(), *kind, sources));
        }
    }
    let outcomes = run_wave(cfg.jobs, transfer_work, &tasks.systems, cfg);
    for o in outcomes {
        record.runs.push(o.record);
    }

    record
        .runs
        .sort_by_key(|r| (r.task_index, r.architecture.as_str()));
    let summary_path = cfg.out_dir.join("experiment.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_grid(width: usize, height: usize) -> GridworldConfig {
        let mut g = GridworldConfig {
            width,
            height,
            max_steps: 30,
            ..GridworldConfig::default()
        };
        g.goal_rewards
            .insert((width as i32 - 1, height as i32 - 1), 1.0);
        g
    }

    fn tiny_dqn(steps: u64) -> DqnConfig {
        DqnConfig {
            training_steps: steps,
            eval_every: steps / 2,
            eval_episodes: 5,
            batch_size: 16,
            replay: crate::replay::ReplayConfig {
                capacity: 2000,
                ..Default::default()
            },
            ..DqnConfig::desk()
        }
    }

    #[test]
    fn gw_learning_sequence_has_default_length_ten() {
        let cfg = GwLearningConfig {
            grid: tiny_grid(3, 3),
            num_tasks: 10,
            system_training: tiny_dqn(500),
            ..GwLearningConfig::default()
        };
        let set = build_gw_learning_sequence(&cfg).unwrap();
        assert_eq!(set.specs.len(), 10);
        assert_eq!(set.systems.networks.len(), 10);
        for (i, spec) in set.specs.iter().enumerate() {
            // one shared layout; only the system reference varies
            assert_eq!(spec.env, set.specs[0].env);
            assert_eq!(spec.system, SystemRef::Network { checkpoint: i });
            assert_eq!(spec.index, i + 1);
        }
    }

    #[test]
    fn gw_comparable_layouts_are_connected_distinct_and_reproducible() {
        let cfg = GwComparableConfig {
            width: 6,
            height: 6,
            num_tasks: 5,
            vi_tolerance: 1e-6,
            seed: 11,
            ..GwComparableConfig::default()
        };
        let a = build_gw_comparable_sequence(&cfg).unwrap();
        let b = build_gw_comparable_sequence(&cfg).unwrap();
        assert_eq!(a.specs, b.specs);
        for (i, spec) in a.specs.iter().enumerate() {
            let EnvSpec::Gridworld(g) = &spec.env else {
                panic!("wrong scenario")
            };
            assert!(layout_connected(g));
            assert!(g.goal_rewards.len() >= 2 && g.goal_rewards.len() <= 4);
            for other in &a.specs[i + 1..] {
                let EnvSpec::Gridworld(o) = &other.env else {
                    panic!("wrong scenario")
                };
                assert!(
                    g.walls != o.walls || g.goal_rewards != o.goal_rewards,
                    "duplicate layouts"
                );
            }
        }
        assert_eq!(a.systems.tabulars.len(), 5);
    }

    #[test]
    fn ad_learning_widths_follow_the_published_schedule() {
        let set = build_ad_learning_sequence(&AdLearningConfig::default()).unwrap();
        assert_eq!(set.specs.len(), 10);
        let widths: Vec<f64> = set
            .specs
            .iter()
            .map(|s| match s.system {
                SystemRef::BlindSpot { width_deg, .. } => width_deg,
                _ => panic!("wrong system ref"),
            })
            .collect();
        assert_eq!(widths[0], 30.0);
        assert!((widths[9] - 6.0).abs() < 1e-12);
        assert!((widths[1] - (30.0 - 24.0 / 9.0)).abs() < 1e-12);
        for s in &set.specs {
            match s.system {
                SystemRef::BlindSpot { direction_deg, .. } => assert_eq!(direction_deg, 20.0),
                _ => panic!("wrong system ref"),
            }
        }
    }

    #[test]
    fn ad_comparable_defaults_match_published_counts() {
        let cfg = AdComparableConfig::default();
        assert_eq!(cfg.population, 30);
        assert_eq!(cfg.keep, 9);
        assert_eq!(
            (cfg.direction_min_deg, cfg.direction_max_deg),
            (-30.0, 30.0)
        );
        assert_eq!((cfg.width_min_deg, cfg.width_max_deg), (3.0, 9.0));
    }

    #[test]
    fn dissimilar_selection_applies_the_cross_performance_criterion() {
        // own scores all 1.0; candidates 0 and 2 are mutually dissimilar,
        // candidate 1 transfers too well onto 0.
        let own = [1.0, 1.0, 1.0, 1.0];
        let matrix = [
            [1.0, 0.2, 0.1, 0.9],
            [0.9, 1.0, 0.1, 0.1],
            [0.2, 0.3, 1.0, 0.1],
            [0.1, 0.1, 0.1, 1.0],
        ];
        let mut cross = |i: usize, j: usize| Ok(matrix[i][j]);
        let picked = select_dissimilar(&own, 2, 0.5, &mut cross).unwrap();
        assert_eq!(picked, vec![0, 2]);
        // verify the criterion pairwise on the selection
        for &i in &picked {
            for &j in &picked {
                if i != j {
                    assert!(matrix[i][j] < 0.5 * own[j]);
                }
            }
        }
        // asking for more than exist reports the achieved count
        let err = select_dissimilar(&own, 4, 0.5, &mut |i, j| Ok(matrix[i][j])).unwrap_err();
        assert!(matches!(
            err,
            Error::TaskSelection {
                achieved: 2,
                requested: 4
            }
        ));
    }

    #[test]
    fn ad_comparable_candidates_stay_in_range_and_selection_verifies() {
        // Micro budget: population 2, keep 1 needs no cross evaluations.
        let cfg = AdComparableConfig {
            population: 2,
            keep: 1,
            candidate_training: tiny_dqn(400),
            cross_eval_episodes: 5,
            seed: 5,
            ..AdComparableConfig::default()
        };
        let out = build_ad_comparable_sequence(&cfg).unwrap();
        assert_eq!(out.tasks.specs.len(), 1);
        for &(dir, width) in &out.blind_spots {
            assert!((-30.0..=30.0).contains(&dir));
            assert!((3.0..=9.0).contains(&width));
        }
    }

    #[test]
    fn run_sequence_counting_and_source_wiring() {
        let dir = std::env::temp_dir().join(format!("safeval-seq-{}", std::process::id()));
        std::fs::remove_dir_all(&dir).ok();
        let grid = tiny_grid(3, 3);
        let cfg = GwLearningConfig {
            grid,
            num_tasks: 3,
            system_training: tiny_dqn(300),
            ..GwLearningConfig::default()
        };
        let tasks = build_gw_learning_sequence(&cfg).unwrap();
        let run_cfg = RunConfig {
            dqn: tiny_dqn(400),
            arch: ArchConfig {
                base_hidden: vec![16, 8],
                attention_hidden: vec![8],
                transform_noise: 1e-3,
            },
            architectures: vec![ArchKind::Scratch, ArchKind::FineTune, ArchKind::A2t],
            master_seed: 9,
            out_dir: dir.clone(),
            jobs: 2,
            config_hash: "test".into(),
        };
        let record = run_sequence(&tasks, &run_cfg).unwrap();
        // 1 scratch + 3 runs per later task
        assert_eq!(record.runs.len(), 7);
        for r in &record.runs {
            assert!(r.error.is_none(), "{:?} failed: {:?}", r.dir, r.error);
            assert!(r.dir.join("curve.csv").exists());
            assert!(r.dir.join("checkpoint.json").exists());
            assert!(r.dir.join("config.json").exists());
            assert!(r.dir.join("log.txt").exists());
        }
        // A2T at task 3 attends over both earlier scratch solutions.
        let a2t3 = record
            .runs
            .iter()
            .find(|r| r.task_index == 3 && r.architecture == ArchKind::A2t)
            .unwrap();
        assert_eq!(a2t3.sources, vec![1, 2]);
        let (arch, _) = checkpoint::load_architecture(&a2t3.dir.join("checkpoint.json")).unwrap();
        assert_eq!(arch.as_a2t().unwrap().num_sources(), 2);
        // fine-tune at task i starts from scratch solution i-1
        let ft3 = record
            .runs
            .iter()
            .find(|r| r.task_index == 3 && r.architecture == ArchKind::FineTune)
            .unwrap();
        assert_eq!(ft3.sources, vec![2]);

        // resume: a second invocation trains nothing
        let again = run_sequence(&tasks, &run_cfg).unwrap();
        assert!(again.runs.iter().all(|r| r.skipped));
        std::fs::remove_dir_all(&dir).ok();
    }
}
