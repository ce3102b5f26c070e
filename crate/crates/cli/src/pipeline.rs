//! Training and evaluation pipelines for each experiment mode.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sketch_core::baselines::{completion_rate, zero_shot_eval, Condition, EvalRow, IndependentPolicy, JointPolicy, MetaPolicy};
use sketch_core::checkpoint::{checkpoint_hidden_dim, checkpoint_task_ids, restore_model, Checkpoint};
use sketch_core::critic::CriticVariant;
use sketch_core::curriculum::CurriculumMode;
use sketch_core::env::{Task, TaskId};
use sketch_core::env::registry::task_registry;
use sketch_core::policy::PolicyFamily;
use sketch_core::trainer::{
    episodes_to_threshold, learning_curve_area, ActorModel, StopReason, Trainer, TrainerConfig, UpdateRecord,
};

use crate::error::{CliError, Result};
use crate::output::{
    append_ablation, create_ablation, write_eval, write_summary, AblationRow, MetricsLog, Provenance, Summary,
};
use crate::spec::{ExperimentSpec, Mode};

/// Updates between periodic checkpoints.
pub const CHECKPOINT_EVERY: u64 = 50;

pub const PERIODIC_CHECKPOINT: &str = "checkpoint.skck";
pub const FINAL_CHECKPOINT: &str = "final.skck";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const EVAL_FILE: &str = "eval.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

/// Parameter-initialisation RNG of a run, independent of the episode streams.
pub fn model_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Modular,
    Joint,
    Independent,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Modular => "modular",
            ModelKind::Joint => "joint",
            ModelKind::Independent => "independent",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from the checkpoints in the output directory.
    pub resume: bool,
    /// Print a progress line every this many updates (0 = silent).
    pub progress_every: u64,
}

#[derive(Debug, Clone)]
pub struct TrainedRun<M> {
    pub trainer: Trainer<M>,
    pub records: Vec<UpdateRecord>,
    pub reason: StopReason,
    pub wall_clock_seconds: f64,
}

/// Identifies one training run inside an experiment.
pub struct RunLabel<'a> {
    pub experiment: &'a str,
    pub mode: Mode,
    pub model: &'a str,
}

/// Trains to completion inside `dir`, writing the metrics log, periodic and
/// final checkpoints, and the summary.
pub fn train_in_dir<M: ActorModel>(
    mut trainer: Trainer<M>,
    dir: &Path,
    provenance: &Provenance,
    label: RunLabel<'_>,
    options: &RunOptions,
) -> Result<TrainedRun<M>> {
    fs::create_dir_all(dir)?;
    let metrics_path = dir.join(METRICS_FILE);
    let periodic = dir.join(PERIODIC_CHECKPOINT);
    let final_path = dir.join(FINAL_CHECKPOINT);

    let resume_from = [&final_path, &periodic].into_iter().find(|p| options.resume && p.exists());
    let (mut log, mut records) = match resume_from {
        Some(path) if metrics_path.exists() => {
            trainer.restore(&Checkpoint::load(path)?)?;
            MetricsLog::resume(&metrics_path, provenance, trainer.episodes)?
        }
        _ => (MetricsLog::create(&metrics_path, provenance)?, Vec::new()),
    };

    let start = Instant::now();
    let every = options.progress_every;
    let mut log_failure: Option<CliError> = None;
    let reason = trainer.run(|t, record| {
        if let Err(e) = log.append(record) {
            log_failure = Some(e);
            return Err(std::io::Error::other("metrics log write failed").into());
        }
        if record.update % CHECKPOINT_EVERY == 0 {
            t.snapshot()?.save(&periodic)?;
        }
        if every > 0 && record.update % every == 0 {
            let mean = record.rows.iter().map(|r| r.reward_estimate).sum::<f64>() / record.rows.len() as f64;
            eprintln!(
                "[{}] update {:>6} episodes {:>9} l_max {} mean estimate {:.3}",
                label.model, record.update, record.episodes_elapsed, record.l_max, mean
            );
        }
        records.push(record.clone());
        Ok(())
    });
    if let Some(e) = log_failure {
        return Err(e);
    }
    let reason = reason?;
    let wall_clock_seconds = start.elapsed().as_secs_f64();
    trainer.snapshot()?.save(&final_path)?;

    let summary = Summary {
        name: label.experiment.to_string(),
        mode: label.mode.name().to_string(),
        model: label.model.to_string(),
        provenance: provenance.clone(),
        stop_reason: format!("{reason:?}"),
        episodes: trainer.episodes,
        updates: trainer.updates,
        wall_clock_seconds,
        final_estimates: trainer
            .tasks
            .iter()
            .map(|t| (t.name.clone(), trainer.curriculum.estimate(t.id)))
            .collect(),
    };
    write_summary(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(TrainedRun { trainer, records, reason, wall_clock_seconds })
}

pub fn new_modular(tasks: &[Task], config: &TrainerConfig) -> Result<Trainer<PolicyFamily>> {
    let family = PolicyFamily::new(tasks, config.hidden_dim, &mut model_rng(config.seed));
    Ok(Trainer::new(family, tasks.to_vec(), config.clone())?)
}

pub fn new_joint(tasks: &[Task], config: &TrainerConfig) -> Result<Trainer<JointPolicy>> {
    let joint = JointPolicy::new(tasks, config.hidden_dim, &mut model_rng(config.seed))?;
    Ok(Trainer::new(joint, tasks.to_vec(), config.clone())?)
}

pub fn new_independent(tasks: &[Task], config: &TrainerConfig) -> Result<Trainer<IndependentPolicy>> {
    let ind = IndependentPolicy::new(tasks, config.hidden_dim, &mut model_rng(config.seed));
    Ok(Trainer::new(ind, tasks.to_vec(), config.clone())?)
}

/// Completion of every task under frozen parameters.
pub fn multitask_rows<M: ActorModel>(
    model: &M,
    model_name: &str,
    tasks: &[Task],
    episodes: usize,
    seed: u64,
    step_cap: usize,
) -> Result<Vec<EvalRow>> {
    tasks
        .iter()
        .map(|t| {
            Ok(EvalRow {
                model: model_name.to_string(),
                condition: Condition::Multitask,
                task: t.name.clone(),
                completion_rate: completion_rate(model, t, episodes, seed, step_cap)?,
                episodes,
            })
        })
        .collect()
}

/// Zero-shot completion of held-out tasks; the modular model runs their
/// sketches, flat models get the sketch through their input.
pub fn zero_shot_rows<M: ActorModel>(
    model: &M,
    model_name: &str,
    held_out: &[Task],
    episodes: usize,
    seed: u64,
    step_cap: usize,
) -> Result<Vec<EvalRow>> {
    held_out
        .iter()
        .map(|t| {
            Ok(EvalRow {
                model: model_name.to_string(),
                condition: Condition::ZeroShot,
                task: t.name.clone(),
                completion_rate: completion_rate(model, t, episodes, seed, step_cap)?,
                episodes,
            })
        })
        .collect()
}

fn tasks_by_id(ids: &[TaskId]) -> Result<Vec<Task>> {
    let all = task_registry();
    ids.iter()
        .map(|id| {
            all.get(id.0)
                .cloned()
                .ok_or_else(|| CliError::Spec(format!("checkpoint names unknown task #{}", id.0)))
        })
        .collect()
}

/// Rebuilds the subpolicy family stored in a trainer checkpoint.
pub fn load_family(path: &Path) -> Result<PolicyFamily> {
    let ck = Checkpoint::load(path)?;
    let tasks = tasks_by_id(&checkpoint_task_ids(&ck)?)?;
    let mut family = PolicyFamily::new(&tasks, checkpoint_hidden_dim(&ck)?, &mut model_rng(0));
    restore_model(&ck, &mut family)?;
    Ok(family)
}

fn load_model<M: ActorModel>(path: &Path, mut model: M) -> Result<M> {
    restore_model(&Checkpoint::load(path)?, &mut model)?;
    Ok(model)
}

/// Evaluates a saved model according to the spec's mode.
pub fn evaluate_checkpoint(spec: &ExperimentSpec, path: &Path) -> Result<Vec<EvalRow>> {
    let cfg = spec.trainer_config(spec.seed)?;
    let (n, seed, cap) = (spec.eval.episodes, spec.seed, cfg.step_cap);
    let train = spec.training_tasks()?;
    match spec.mode {
        Mode::Multitask | Mode::AblationCritic | Mode::AblationCurriculum => {
            multitask_rows(&load_family(path)?, "modular", &train, n, seed, cap)
        }
        Mode::ZeroShot => {
            let family = load_family(path)?;
            let held = spec.held_out_tasks()?;
            for t in &held {
                family.check_covers(t)?;
            }
            zero_shot_rows(&family, "modular", &held, n, seed, cap)
        }
        Mode::BaselineJoint => {
            let joint = load_model(path, JointPolicy::new(&train, cfg.hidden_dim, &mut model_rng(seed))?)?;
            multitask_rows(&joint, "joint", &train, n, seed, cap)
        }
        Mode::BaselineIndependent => {
            let ind = load_model(path, IndependentPolicy::new(&train, cfg.hidden_dim, &mut model_rng(seed)))?;
            multitask_rows(&ind, "independent", &train, n, seed, cap)
        }
        Mode::Adaptation => Err(CliError::Spec(
            "adaptation learners are evaluated at the end of `train`; evaluate the family with mode zero_shot".into(),
        )),
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub eval_rows: Vec<EvalRow>,
    pub ablation_rows: Vec<AblationRow>,
}

/// Runs the spec's pipeline and writes its outputs under `spec.output_dir/spec.name`.
pub fn run(spec: &ExperimentSpec, options: &RunOptions) -> Result<RunReport> {
    spec.validate()?;
    let dir = spec.output_dir.join(&spec.name);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("spec.toml"), spec.to_toml()?)?;
    let hash = spec.hash()?;
    let provenance = Provenance::new(hash.clone(), spec.seed);
    let cfg = spec.trainer_config(spec.seed)?;
    let train = spec.training_tasks()?;
    let (n, seed, cap) = (spec.eval.episodes, spec.seed, cfg.step_cap);
    let label = |model| RunLabel { experiment: &spec.name, mode: spec.mode, model };

    let mut report = RunReport { dir: dir.clone(), eval_rows: Vec::new(), ablation_rows: Vec::new() };
    match spec.mode {
        Mode::Multitask => {
            let run = train_in_dir(new_modular(&train, &cfg)?, &dir, &provenance, label("modular"), options)?;
            report.eval_rows = multitask_rows(run.trainer.model(), "modular", &train, n, seed, cap)?;
        }
        Mode::BaselineJoint => {
            let run = train_in_dir(new_joint(&train, &cfg)?, &dir, &provenance, label("joint"), options)?;
            report.eval_rows = multitask_rows(run.trainer.model(), "joint", &train, n, seed, cap)?;
        }
        Mode::BaselineIndependent => {
            let run = train_in_dir(new_independent(&train, &cfg)?, &dir, &provenance, label("independent"), options)?;
            report.eval_rows = multitask_rows(run.trainer.model(), "independent", &train, n, seed, cap)?;
        }
        Mode::AblationCritic | Mode::AblationCurriculum => {
            let path = dir.join(ABLATION_FILE);
            create_ablation(&path, &provenance)?;
            let settings: Vec<(String, TrainerConfig)> = if spec.mode == Mode::AblationCritic {
                CriticVariant::ALL
                    .iter()
                    .map(|&v| (v.name().to_string(), TrainerConfig { critic: v, stop_when_mastered: false, ..cfg.clone() }))
                    .collect()
            } else {
                CurriculumMode::ALL
                    .iter()
                    .map(|&m| (m.name().to_string(), TrainerConfig { curriculum: m, ..cfg.clone() }))
                    .collect()
            };
            for (setting, base) in settings {
                for s in spec.run_seeds() {
                    let config = TrainerConfig { seed: s, ..base.clone() };
                    let sub = dir.join(&setting).join(format!("seed_{s}"));
                    let prov = Provenance::new(hash.clone(), s);
                    let run = train_in_dir(new_modular(&train, &config)?, &sub, &prov, label("modular"), options)?;
                    let row = AblationRow {
                        study: spec.mode.name().to_string(),
                        setting: setting.clone(),
                        seed: s,
                        auc: learning_curve_area(&run.records, config.max_episodes),
                        episodes_to_threshold: episodes_to_threshold(&run.records, config.r_good),
                    };
                    append_ablation(&path, &row)?;
                    report.ablation_rows.push(row);
                }
            }
        }
        Mode::ZeroShot => {
            let held = spec.held_out_tasks()?;
            match &spec.checkpoint {
                Some(path) => {
                    let family = load_family(path)?;
                    for t in &held {
                        family.check_covers(t)?;
                    }
                    report.eval_rows = zero_shot_rows(&family, "modular", &held, n, seed, cap)?;
                }
                None => {
                    let modular =
                        train_in_dir(new_modular(&train, &cfg)?, &dir.join("modular"), &provenance, label("modular"), options)?;
                    for t in &held {
                        zero_shot_eval(modular.trainer.model(), t, 1, seed, cap)?;
                    }
                    report.eval_rows = zero_shot_rows(modular.trainer.model(), "modular", &held, n, seed, cap)?;
                    let joint = train_in_dir(new_joint(&train, &cfg)?, &dir.join("joint"), &provenance, label("joint"), options)?;
                    report.eval_rows.extend(zero_shot_rows(joint.trainer.model(), "joint", &held, n, seed, cap)?);
                }
            }
        }
        Mode::Adaptation => {
            let held = spec.held_out_tasks()?;
            let family = match &spec.checkpoint {
                Some(path) => load_family(path)?,
                None => {
                    train_in_dir(new_modular(&train, &cfg)?, &dir.join("modular"), &provenance, label("modular"), options)?
                        .trainer
                        .learner
                        .model
                }
            };
            let adapt_cfg = TrainerConfig {
                curriculum: CurriculumMode::Uniform,
                max_episodes: spec.eval.adaptation_episodes,
                ..cfg.clone()
            };
            for t in &held {
                let slug = t.name.replace(' ', "_");
                let meta = MetaPolicy::new(family.clone(), t.env, cfg.hidden_dim, &mut model_rng(seed))?;
                let trainer = Trainer::new(meta, vec![t.clone()], adapt_cfg.clone())?;
                let run = train_in_dir(trainer, &dir.join(format!("meta_{slug}")), &provenance, label("modular"), options)?;
                report.eval_rows.push(EvalRow {
                    model: "modular".into(),
                    condition: Condition::Adaptation,
                    task: t.name.clone(),
                    completion_rate: completion_rate(run.trainer.model(), t, n, seed, cap)?,
                    episodes: n,
                });
                let ind = new_independent(std::slice::from_ref(t), &adapt_cfg)?;
                let run = train_in_dir(ind, &dir.join(format!("independent_{slug}")), &provenance, label("independent"), options)?;
                report.eval_rows.push(EvalRow {
                    model: "independent".into(),
                    condition: Condition::Adaptation,
                    task: t.name.clone(),
                    completion_rate: completion_rate(run.trainer.model(), t, n, seed, cap)?,
                    episodes: n,
                });
            }
        }
    }
    if !report.eval_rows.is_empty() {
        write_eval(&dir.join(EVAL_FILE), &provenance, &report.eval_rows)?;
    }
    Ok(report)
}
