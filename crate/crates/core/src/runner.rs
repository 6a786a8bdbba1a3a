//! Command-level orchestration: build (or reload) the task sequence for a
//! resolved experiment, run it, extract transfer metrics, and export
//! plot-ready tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Meta};
use crate::config::Resolved;
use crate::dqn::{DqnConfig, LearningCurve};
use crate::error::{Error, Result};
use crate::metrics::{build_report, MetricConfig, TransferReport};
use crate::nn::Mlp;
use crate::seeding::derive_seed;
use crate::sut::{value_iteration, AdversaryModel};
use crate::tasks::{
    self, build_ad_comparable_sequence, build_ad_learning_sequence, build_gw_comparable_sequence,
    build_gw_learning_from_checkpoints, build_gw_learning_sequence, AdComparableConfig,
    AdLearningConfig, EnvSpec, ExperimentRecord, GwComparableConfig, GwLearningConfig, RunConfig,
    Scenario, Setting, SystemBank, TaskSet, TaskSpec,
};
use crate::transfer::ArchKind;

#[derive(Serialize, Deserialize)]
struct TaskSetFile {
    config_hash: String,
    specs: Vec<TaskSpec>,
}

fn system_net_path(sys_dir: &Path, index: usize) -> PathBuf {
    sys_dir.join(format!("system{index:02}.json"))
}

fn system_policy_path(sys_dir: &Path, index: usize) -> PathBuf {
    sys_dir.join(format!("task{index:02}.policy.json"))
}

fn load_task_set_file(path: &Path, expected_hash: &str) -> Result<Option<Vec<TaskSpec>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    let file: TaskSetFile = serde_json::from_str(&text)?;
    if file.config_hash != expected_hash {
        return Err(Error::InvalidConfig(format!(
            "{} was produced by config {}, current config is {} — use a fresh out_dir",
            path.display(),
            file.config_hash,
            expected_hash
        )));
    }
    Ok(Some(file.specs))
}

fn save_task_set_file(path: &Path, specs: &[TaskSpec], config_hash: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = TaskSetFile {
        config_hash: config_hash.to_string(),
        specs: specs.to_vec(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Build the task sequence for the experiment, persisting system artifacts
/// (trained system checkpoints, solved tabular policies, selected task
/// lists) under `<out_dir>/systems` and reusing them on rerun.
pub fn build_task_set(r: &Resolved) -> Result<TaskSet> {
    let sys_dir = r.out_dir.join("systems");
    let tasks_path = sys_dir.join("tasks.json");
    match (r.scenario, r.setting) {
        (Scenario::Gridworld, Setting::LearningSystem) => {
            let cfg = GwLearningConfig {
                grid: r.grid.clone(),
                rewards: r.rewards,
                num_tasks: r.num_tasks,
                system_training: DqnConfig {
                    seed: derive_seed(r.master_seed, "system-training", 0),
                    ..r.system_training.clone()
                },
            };
            let paths: Vec<PathBuf> = (1..=r.num_tasks)
                .map(|i| system_net_path(&sys_dir, i))
                .collect();
            if load_task_set_file(&tasks_path, &r.config_hash)?.is_some()
                && paths.iter().all(|p| p.exists())
            {
                let mut nets = Vec::with_capacity(paths.len());
                for p in &paths {
                    nets.push(checkpoint::load_mlp(p)?.0);
                }
                return build_gw_learning_from_checkpoints(&cfg, nets);
            }
            let set = build_gw_learning_sequence(&cfg)?;
            for (i, net) in set.systems.networks.iter().enumerate() {
                let meta = Meta {
                    seed: cfg.system_training.seed,
                    train_step: cfg.system_training.training_steps / r.num_tasks as u64
                        * (i as u64 + 1),
                    env_config_hash: set.specs[i].env.config_hash(),
                    config_hash: r.config_hash.clone(),
                };
                checkpoint::save_mlp(&paths[i], net, meta)?;
            }
            save_task_set_file(&tasks_path, &set.specs, &r.config_hash)?;
            Ok(set)
        }
        (Scenario::Gridworld, Setting::Comparable) => {
            if let Some(specs) = load_task_set_file(&tasks_path, &r.config_hash)? {
                let mut bank = SystemBank::default();
                for i in 1..=specs.len() {
                    let (policy, _) = checkpoint::load_tabular(&system_policy_path(&sys_dir, i))?;
                    bank.tabulars.push(Arc::new(policy));
                }
                return Ok(TaskSet {
                    specs,
                    systems: bank,
                });
            }
            let cfg = GwComparableConfig {
                width: r.grid.width,
                height: r.grid.height,
                slip_prob: r.grid.slip_prob,
                max_steps: r.grid.max_steps,
                gamma: r.grid.gamma,
                num_tasks: r.num_tasks,
                wall_prob: r.wall_prob,
                rewards: r.rewards,
                seed: derive_seed(r.master_seed, "layouts", 0),
                ..GwComparableConfig::default()
            };
            let set = build_gw_comparable_sequence(&cfg)?;
            for (i, policy) in set.systems.tabulars.iter().enumerate() {
                let meta = Meta {
                    seed: cfg.seed,
                    train_step: 0,
                    env_config_hash: set.specs[i].env.config_hash(),
                    config_hash: r.config_hash.clone(),
                };
                checkpoint::save_tabular(&system_policy_path(&sys_dir, i + 1), policy, meta)?;
            }
            save_task_set_file(&tasks_path, &set.specs, &r.config_hash)?;
            Ok(set)
        }
        (Scenario::Driving, Setting::LearningSystem) => {
            let set = build_ad_learning_sequence(&AdLearningConfig {
                driving: r.driving.clone(),
                num_tasks: r.num_tasks,
                ..AdLearningConfig::default()
            })?;
            save_task_set_file(&tasks_path, &set.specs, &r.config_hash)?;
            Ok(set)
        }
        (Scenario::Driving, Setting::Comparable) => {
            if let Some(specs) = load_task_set_file(&tasks_path, &r.config_hash)? {
                return Ok(TaskSet {
                    specs,
                    systems: SystemBank::default(),
                });
            }
            let keep = r.num_tasks;
            let cfg = AdComparableConfig {
                driving: r.driving.clone(),
                population: (keep * 10).div_ceil(3).max(keep),
                keep,
                candidate_training: DqnConfig {
                    training_steps: ((r.dqn.training_steps as f64 * r.candidate_budget_fraction)
                        .max(1.0)) as u64,
                    ..r.dqn.clone()
                },
                seed: derive_seed(r.master_seed, "candidates", 0),
                ..AdComparableConfig::default()
            };
            let out = build_ad_comparable_sequence(&cfg)?;
            save_task_set_file(&tasks_path, &out.tasks.specs, &r.config_hash)?;
            Ok(out.tasks)
        }
    }
}

/// Run the full pipeline for a resolved experiment. Completed runs are
/// skipped; partial results of failed runs are preserved.
pub fn cmd_run_sequence(r: &Resolved) -> Result<ExperimentRecord> {
    std::fs::create_dir_all(&r.out_dir)?;
    std::fs::write(
        r.out_dir.join("config.json"),
        serde_json::to_string_pretty(&ResolvedWithHash {
            config_hash: &r.config_hash,
            resolved: r,
        })?,
    )?;
    let tasks = build_task_set(r)?;
    let run_cfg = RunConfig {
        dqn: r.dqn.clone(),
        arch: r.arch.clone(),
        architectures: r.architectures.clone(),
        master_seed: r.master_seed,
        out_dir: r.out_dir.clone(),
        jobs: r.jobs,
        config_hash: r.config_hash.clone(),
    };
    tasks::run_sequence(&tasks, &run_cfg)
}

#[derive(Serialize)]
struct ResolvedWithHash<'a> {
    config_hash: &'a str,
    #[serde(flatten)]
    resolved: &'a Resolved,
}

/// Train a single scratch adversary on task 1 of the configured scenario
/// (debugging entry point). The gridworld system is a dynamic-programming
/// policy on the configured layout; the driving system is the configured
/// blind-spot controller.
pub fn cmd_train_scratch(r: &Resolved, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let spec = match r.scenario {
        Scenario::Gridworld => TaskSpec {
            scenario: Scenario::Gridworld,
            setting: r.setting,
            index: 1,
            env: EnvSpec::Gridworld(r.grid.clone()),
            system: tasks::SystemRef::Tabular { policy: 0 },
        },
        Scenario::Driving => TaskSpec {
            scenario: Scenario::Driving,
            setting: r.setting,
            index: 1,
            env: EnvSpec::Driving(r.driving.clone()),
            system: tasks::SystemRef::BlindSpot {
                direction_deg: r.driving.blind_spot_direction_deg,
                width_deg: r.driving.blind_spot_width_deg,
            },
        },
    };
    let mut bank = SystemBank::default();
    if r.scenario == Scenario::Gridworld {
        let policy = value_iteration(
            &r.grid,
            &r.rewards,
            AdversaryModel::UniformRandom,
            r.grid.gamma,
            1e-8,
        )?;
        bank.tabulars.push(Arc::new(policy));
    }
    let run_cfg = RunConfig {
        dqn: r.dqn.clone(),
        arch: r.arch.clone(),
        architectures: vec![ArchKind::Scratch],
        master_seed: r.master_seed,
        out_dir: out_dir.to_path_buf(),
        jobs: 1,
        config_hash: r.config_hash.clone(),
    };
    let record = tasks::run_sequence(
        &TaskSet {
            specs: vec![spec],
            systems: bank,
        },
        &run_cfg,
    )?;
    let run = &record.runs[0];
    if let Some(e) = &run.error {
        return Err(Error::Internal(format!("scratch training failed: {e}")));
    }
    Ok(run.dir.clone())
}

const TRANSFER_KINDS: [ArchKind; 3] = [ArchKind::FineTune, ArchKind::A2t, ArchKind::A2tSavt];

/// Discover `task<N>` directories under a run directory, ascending.
fn discover_tasks(run_dir: &Path) -> Result<Vec<usize>> {
    let mut tasks = Vec::new();
    for entry in std::fs::read_dir(run_dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(n) = name
            .strip_prefix("task")
            .and_then(|s| s.parse::<usize>().ok())
        {
            if entry.path().is_dir() {
                tasks.push(n);
            }
        }
    }
    tasks.sort_unstable();
    Ok(tasks)
}

pub struct MetricsOutput {
    pub reports: Vec<TransferReport>,
    pub warnings: Vec<String>,
}

fn curve_config_hash(path: &Path) -> String {
    if let Ok(text) = std::fs::read_to_string(path) {
        for line in text.lines() {
            if let Some(h) = line.strip_prefix("# config_hash=") {
                return h.trim().to_string();
            }
        }
    }
    "unknown".to_string()
}

/// Compute transfer reports for every (task >= 2, transfer architecture)
/// run against the task's scratch reference. Missing curves are listed and
/// skipped. Writes one report.json per run plus an aggregate table.
pub fn cmd_metrics(run_dir: &Path, metric_cfg: &MetricConfig) -> Result<MetricsOutput> {
    let tasks = discover_tasks(run_dir)?;
    if tasks.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{} contains no task directories",
            run_dir.display()
        )));
    }
    let mut reports = Vec::new();
    let mut warnings = Vec::new();
    for &task in tasks.iter().filter(|&&t| t >= 2) {
        let task_dir = run_dir.join(format!("task{task}"));
        let ref_path = task_dir.join("scratch").join("curve.csv");
        if !ref_path.exists() {
            warnings.push(format!("task {task}: missing scratch reference curve"));
            continue;
        }
        let reference = LearningCurve::load_csv(&ref_path)?;
        let hash = curve_config_hash(&ref_path);
        for kind in TRANSFER_KINDS {
            let curve_path = task_dir.join(kind.as_str()).join("curve.csv");
            if !curve_path.exists() {
                continue;
            }
            let transfer = LearningCurve::load_csv(&curve_path)?;
            let report = build_report(
                task,
                kind.as_str(),
                &transfer,
                &reference,
                metric_cfg,
                &hash,
            )?;
            std::fs::write(
                task_dir.join(kind.as_str()).join("report.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            reports.push(report);
        }
    }
    if reports.is_empty() {
        warnings.push("no transfer curves found; nothing to report".to_string());
    }

    let metrics_dir = run_dir.join("metrics");
    std::fs::create_dir_all(&metrics_dir)?;
    let hash = reports
        .first()
        .map(|r| r.config_hash.clone())
        .unwrap_or_else(|| "unknown".to_string());
    let mut table = format!(
        "# config_hash={hash}\ntask,architecture,jumpstart,jumpstart_raw,final_improvement,step_ratio\n",
    );
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
    for rep in &reports {
        table.push_str(&format!(
            "{},{},{},{:.17e},{},{}\n",
            rep.task_index,
            rep.architecture,
            fmt(rep.jumpstart),
            rep.jumpstart_raw,
            fmt(rep.final_improvement),
            fmt(rep.step_ratio),
        ));
    }
    std::fs::write(metrics_dir.join("aggregate.csv"), table)?;
    Ok(MetricsOutput { reports, warnings })
}

/// Architectures reported per figure: jumpstart covers only fine-tune and
/// the plain mixture (the transformed variant shares its initial outputs).
fn plot_kinds(metric: &str) -> &'static [ArchKind] {
    match metric {
        "jumpstart" => &[ArchKind::FineTune, ArchKind::A2t],
        _ => &TRANSFER_KINDS,
    }
}

/// Export per-figure delimited tables (task index vs metric value per
/// architecture). Absent values stay as gaps, never zeros.
pub fn cmd_plot_data(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let tasks = discover_tasks(run_dir)?;
    let mut by_key: BTreeMap<(usize, String), TransferReport> = BTreeMap::new();
    for &task in &tasks {
        for kind in TRANSFER_KINDS {
            let path = run_dir
                .join(format!("task{task}"))
                .join(kind.as_str())
                .join("report.json");
            if path.exists() {
                let report: TransferReport =
                    serde_json::from_str(&std::fs::read_to_string(&path)?)?;
                by_key.insert((task, kind.as_str().to_string()), report);
            }
        }
    }
    if by_key.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{} holds no transfer reports; run the metrics command first",
            run_dir.display()
        )));
    }

    let plots_dir = run_dir.join("plots");
    std::fs::create_dir_all(&plots_dir)?;
    let hash = by_key
        .values()
        .next()
        .map(|r| r.config_hash.clone())
        .unwrap_or_else(|| "unknown".to_string());
    let mut written = Vec::new();
    for metric in ["jumpstart", "final_improvement", "step_ratio"] {
        let kinds = plot_kinds(metric);
        let mut text = format!("# config_hash={hash}\ntask");
        for k in kinds {
            text.push(',');
            text.push_str(k.as_str());
        }
        text.push('\n');
        for &task in tasks.iter().filter(|&&t| t >= 2) {
            let mut row = format!("{task}");
            let mut any = false;
            for k in kinds {
                row.push(',');
                if let Some(rep) = by_key.get(&(task, k.as_str().to_string())) {
                    let value = match metric {
                        "jumpstart" => rep.jumpstart,
                        "final_improvement" => rep.final_improvement,
                        _ => rep.step_ratio,
                    };
                    if let Some(v) = value {
                        row.push_str(&format!("{v:.17e}"));
                        any = true;
                    }
                }
            }
            if any {
                text.push_str(&row);
                text.push('\n');
            }
        }
        let path = plots_dir.join(format!("{metric}.csv"));
        std::fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

/// Column names plus rows of (task index, per-column optional values).
pub type PlotTable = (Vec<String>, Vec<(usize, Vec<Option<f64>>)>);

/// Parse a plot table back into its columns and rows. Gaps decode as None;
/// `#` lines are provenance.
pub fn parse_plot_table(text: &str) -> Result<PlotTable> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig("empty plot table".into()))?;
    let columns: Vec<String> = header.split(',').skip(1).map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let task: usize = fields
            .next()
            .unwrap()
            .parse()
            .map_err(|e| Error::InvalidConfig(format!("bad task index: {e}")))?;
        let values: Vec<Option<f64>> = fields
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>()
                        .map(Some)
                        .map_err(|e| Error::InvalidConfig(format!("bad value {f}: {e}")))
                }
            })
            .collect::<Result<_>>()?;
        if values.len() != columns.len() {
            return Err(Error::InvalidConfig("ragged plot table".into()));
        }
        rows.push((task, values));
    }
    Ok((columns, rows))
}

/// Load an Mlp (scratch solution) from a run directory.
pub fn load_scratch_net(run_dir: &Path, task: usize) -> Result<Mlp> {
    let path = run_dir
        .join(format!("task{task}"))
        .join("scratch")
        .join("checkpoint.json");
    Ok(checkpoint::load_mlp(&path)?.0)
}

/// Read a run's learning curve.
pub fn load_curve(run_dir: &Path, task: usize, kind: ArchKind) -> Result<LearningCurve> {
    LearningCurve::load_csv(
        &run_dir
            .join(format!("task{task}"))
            .join(kind.as_str())
            .join("curve.csv"),
    )
}
