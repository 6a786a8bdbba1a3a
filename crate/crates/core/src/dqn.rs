//! DQN training: double-Q targets against a periodically synced target
//! network, epsilon-greedy exploration, prioritized replay with importance
//! weighting, Huber loss, and periodic greedy evaluation producing a
//! learning curve. Fully deterministic given the config seed.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::nn::{huber_loss, Optimizer, OptimizerKind, QFunction};
use crate::replay::{ReplayBuffer, ReplayConfig, Transition};
use crate::seeding::{derive_seed, rng_from_seed, TaskRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub training_steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Online -> target parameter copy period, in steps.
    pub target_update_freq: u64,
    pub eval_every: u64,
    pub eval_episodes: u32,
    /// Discount override; None inherits the environment's.
    pub gamma: Option<f64>,
    pub epsilon_start: f64,
    pub epsilon_final: f64,
    /// Fraction of training over which epsilon anneals linearly.
    pub epsilon_anneal_fraction: f64,
    pub huber_delta: f64,
    pub replay: ReplayConfig,
    pub seed: u64,
    /// When set, clone the architecture every this many steps.
    pub snapshot_every: Option<u64>,
    /// Retain at most this many failed-episode traces.
    pub max_failure_logs: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DqnConfig {
    /// Desk-scale defaults: short runs with a raised learning rate.
    pub fn desk() -> Self {
        Self {
            training_steps: 200_000,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            target_update_freq: 2_000,
            eval_every: 2_000,
            eval_episodes: 300,
            gamma: None,
            epsilon_start: 1.0,
            epsilon_final: 0.1,
            epsilon_anneal_fraction: 0.5,
            huber_delta: 1.0,
            replay: ReplayConfig::default(),
            seed: 0,
            snapshot_every: None,
            max_failure_logs: 8,
        }
    }

    /// Published gridworld hyperparameters.
    pub fn paper_gridworld() -> Self {
        Self {
            training_steps: 3_000_000,
            learning_rate: 4e-5,
            target_update_freq: 2_000,
            ..Self::desk()
        }
    }

    /// Published driving hyperparameters.
    pub fn paper_driving() -> Self {
        Self {
            training_steps: 3_000_000,
            learning_rate: 5e-5,
            target_update_freq: 3_000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.training_steps == 0
            || self.batch_size == 0
            || self.target_update_freq == 0
            || self.eval_every == 0
            || self.eval_episodes == 0
        {
            return Err(Error::InvalidConfig("dqn counts must be positive".into()));
        }
        if !(self.epsilon_final >= 0.0
            && self.epsilon_final <= self.epsilon_start
            && self.epsilon_start <= 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "epsilon schedule [{}, {}] outside [0, 1]",
                self.epsilon_start, self.epsilon_final
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Epsilon after `step` completed training steps: linear from start to
    /// final over the first `epsilon_anneal_fraction` of training, then
    /// held.
    pub fn epsilon_at(&self, step: u64) -> f64 {
        let horizon = (self.training_steps as f64 * self.epsilon_anneal_fraction).max(1.0);
        let frac = (step as f64 / horizon).min(1.0);
        let e = self.epsilon_start + (self.epsilon_final - self.epsilon_start) * frac;
        e.max(self.epsilon_final)
    }
}

/// One evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub episodes: u32,
}

/// Evaluation statistics over training, ordered by step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn steps(&self) -> Vec<u64> {
        self.points.iter().map(|p| p.step).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean_return).collect()
    }

    /// Delimited text table: train_step, mean_return, std_return, episodes.
    /// A leading `#` comment carries provenance.
    pub fn write_csv<W: Write>(&self, mut w: W, config_hash: &str) -> Result<()> {
        writeln!(w, "# config_hash={config_hash}")?;
        writeln!(w, "train_step,mean_return,std_return,episodes")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{:.17e},{:.17e},{}",
                p.step, p.mean_return, p.std_return, p.episodes
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, config_hash: &str) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file), config_hash)
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut points = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("train_step") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::InvalidConfig(format!("bad curve row: {line}")));
            }
            let parse_f = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::InvalidConfig(format!("bad curve number {s}: {e}")))
            };
            points.push(CurvePoint {
                step: fields[0]
                    .parse()
                    .map_err(|e| Error::InvalidConfig(format!("bad step: {e}")))?,
                mean_return: parse_f(fields[1])?,
                std_return: parse_f(fields[2])?,
                episodes: fields[3]
                    .parse()
                    .map_err(|e| Error::InvalidConfig(format!("bad episodes: {e}")))?,
            });
        }
        Ok(Self { points })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// A failed episode observed during training, kept for trajectory-level
/// checks: the disturbances taken and the per-step rewards received.
#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub initial_state: Vec<f64>,
    pub disturbances: Vec<usize>,
    pub rewards: Vec<f64>,
    pub failed: bool,
}

pub struct TrainResult<Q> {
    pub arch: Q,
    pub curve: LearningCurve,
    /// (step, snapshot) pairs when `snapshot_every` is set.
    pub snapshots: Vec<(u64, Q)>,
    /// Number of failure episodes encountered while training.
    pub failures_found: usize,
    pub failure_logs: Vec<EpisodeLog>,
}

/// Lowest-index argmax.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy selection: uniform with probability epsilon, else the
/// lowest-index argmax.
pub fn epsilon_greedy(q_values: &[f64], epsilon: f64, rng: &mut TaskRng) -> usize {
    debug_assert!(!q_values.is_empty());
    let u: f64 = rng.random();
    if u < epsilon {
        rng.random_range(0..q_values.len())
    } else {
        argmax_lowest(q_values)
    }
}

/// Double-DQN target: r when terminal, else
/// r + gamma * Q_target(s', argmax_x Q_online(s', x)).
pub fn td_target<Q: QFunction>(
    reward: f64,
    next_state: &[f64],
    terminal: bool,
    online: &Q,
    target: &Q,
    gamma: f64,
) -> f64 {
    if terminal {
        return reward;
    }
    let a = argmax_lowest(&online.q_values(next_state));
    reward + gamma * target.q_values(next_state)[a]
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Greedy (epsilon = 0) evaluation over fresh episodes with per-episode
/// derived seeds; returns mean and population std of undiscounted returns.
pub fn evaluate<E: Environment, Q: QFunction>(
    env: &mut E,
    q: &Q,
    episodes: u32,
    eval_seed: u64,
) -> Result<(f64, f64)> {
    let mut returns = Vec::with_capacity(episodes as usize);
    for ep in 0..episodes {
        let mut rng = rng_from_seed(derive_seed(eval_seed, "episode", u64::from(ep)));
        let mut state = env.reset(&mut rng)?;
        let mut ret = 0.0;
        loop {
            let a = argmax_lowest(&q.q_values(&state));
            let out = env.step(a, &mut rng)?;
            ret += out.reward;
            state = out.next_state;
            if out.done {
                break;
            }
        }
        returns.push(ret);
    }
    Ok(mean_std(&returns))
}

/// Run the full training loop. The environment supplies dynamics and
/// rewards; `arch` is any trainable Q-architecture. Sources frozen inside
/// composite architectures never receive updates because they are not part
/// of the trainable parameter vector.
pub fn train<E: Environment + Clone, Q: QFunction + Clone>(
    env: &mut E,
    mut arch: Q,
    cfg: &DqnConfig,
) -> Result<TrainResult<Q>> {
    cfg.validate()?;
    if env.state_dim() != arch.input_dim() {
        return Err(Error::Shape {
            context: "train: env state dim vs arch input",
            expected: env.state_dim(),
            got: arch.input_dim(),
        });
    }
    if env.num_disturbances() != arch.output_dim() {
        return Err(Error::Shape {
            context: "train: env disturbances vs arch output",
            expected: env.num_disturbances(),
            got: arch.output_dim(),
        });
    }

    let gamma = cfg.gamma.unwrap_or_else(|| env.discount());
    let mut rng = rng_from_seed(cfg.seed);
    let mut buffer = ReplayBuffer::new(cfg.replay);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, arch.param_count());
    let mut target = arch.clone();

    let mut curve = LearningCurve::default();
    let mut snapshots = Vec::new();
    let mut failures_found = 0usize;
    let mut failure_logs: Vec<EpisodeLog> = Vec::new();

    let mut state = env.reset(&mut rng)?;
    let mut episode = EpisodeLog {
        initial_state: state.clone(),
        disturbances: Vec::new(),
        rewards: Vec::new(),
        failed: false,
    };

    let mut grads = vec![0.0; arch.param_count()];
    let mut params = arch.params();

    for step in 1..=cfg.training_steps {
        let epsilon = cfg.epsilon_at(step - 1);
        let action = epsilon_greedy(&arch.q_values(&state), epsilon, &mut rng);
        let out = env.step(action, &mut rng)?;
        episode.disturbances.push(action);
        episode.rewards.push(out.reward);
        buffer.push(Transition {
            state: std::mem::take(&mut state),
            disturbance: action,
            reward: out.reward,
            next_state: out.next_state.clone(),
            terminal: out.done,
        });
        if out.done {
            if out.is_failure {
                failures_found += 1;
                episode.failed = true;
                if failure_logs.len() < cfg.max_failure_logs {
                    failure_logs.push(episode.clone());
                }
            }
            state = env.reset(&mut rng)?;
            episode = EpisodeLog {
                initial_state: state.clone(),
                disturbances: Vec::new(),
                rewards: Vec::new(),
                failed: false,
            };
        } else {
            state = out.next_state;
        }

        if buffer.len() >= cfg.batch_size {
            buffer.set_progress(step as f64 / cfg.training_steps as f64);
            let batch = buffer.sample(cfg.batch_size, &mut rng)?;
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut td_errors = Vec::with_capacity(cfg.batch_size);
            let mut loss_acc = 0.0;
            let inv_batch = 1.0 / cfg.batch_size as f64;
            let mut out_grad = vec![0.0; arch.output_dim()];
            for (&idx, &w) in batch.indices.iter().zip(&batch.weights) {
                let t = buffer.get(idx);
                let y = td_target(t.reward, &t.next_state, t.terminal, &arch, &target, gamma);
                let q = arch.q_values(&t.state);
                let err = q[t.disturbance] - y;
                let (value, deriv) = huber_loss(err, cfg.huber_delta);
                loss_acc += w * value * inv_batch;
                out_grad.iter_mut().for_each(|g| *g = 0.0);
                out_grad[t.disturbance] = w * deriv * inv_batch;
                arch.accumulate_grad(&t.state, &out_grad, &mut grads);
                td_errors.push(err);
            }
            if !loss_acc.is_finite() {
                return Err(Error::TrainingDiverged { step });
            }
            buffer.update_priorities(&batch.indices, &td_errors)?;
            params.clear();
            params.extend_from_slice(&arch.params());
            optimizer.step(&mut params, &grads)?;
            arch.set_params(&params);
        }

        if step % cfg.target_update_freq == 0 {
            target = arch.clone();
            debug_assert_eq!(target.params(), arch.params());
        }
        if let Some(every) = cfg.snapshot_every {
            if step % every == 0 {
                snapshots.push((step, arch.clone()));
            }
        }
        if step % cfg.eval_every == 0 {
            let eval_seed = derive_seed(cfg.seed, "eval", step);
            let mut eval_env = env.clone();
            let (mean, std) = evaluate(&mut eval_env, &arch, cfg.eval_episodes, eval_seed)?;
            curve.points.push(CurvePoint {
                step,
                mean_return: mean,
                std_return: std,
                episodes: cfg.eval_episodes,
            });
        }
    }

    Ok(TrainResult {
        arch,
        curve,
        snapshots,
        failures_found,
        failure_logs,
    })
}
