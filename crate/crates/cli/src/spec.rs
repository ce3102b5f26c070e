//! Experiment specification: one TOML file, optionally overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sketch_core::critic::CriticVariant;
use sketch_core::curriculum::CurriculumMode;
use sketch_core::env::registry::{find_task, task_registry};
use sketch_core::env::{EnvKind, Task};
use sketch_core::trainer::TrainerConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Multitask,
    AblationCritic,
    AblationCurriculum,
    ZeroShot,
    Adaptation,
    BaselineJoint,
    BaselineIndependent,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Multitask => "multitask",
            Mode::AblationCritic => "ablation_critic",
            Mode::AblationCurriculum => "ablation_curriculum",
            Mode::ZeroShot => "zero_shot",
            Mode::Adaptation => "adaptation",
            Mode::BaselineJoint => "baseline_joint",
            Mode::BaselineIndependent => "baseline_independent",
        }
    }

    /// Whether the mode holds out tasks for generalisation.
    pub fn holds_out(self) -> bool {
        matches!(self, Mode::ZeroShot | Mode::Adaptation)
    }
}

/// Which registry tasks an experiment uses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFilter {
    /// Exact task names; empty means the whole registry.
    #[serde(default)]
    pub names: Vec<String>,
    /// `craft` or `maze`.
    pub env: Option<String>,
    /// Longest admitted sketch.
    pub max_len: Option<usize>,
    /// Generalisation targets; empty means the registry's held-out tasks.
    #[serde(default)]
    pub held_out: Vec<String>,
}

/// Trainer settings; anything left out takes the library default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerOverrides {
    pub batch_size: Option<usize>,
    pub gamma: Option<f64>,
    pub r_good: Option<f64>,
    pub policy_step: Option<f64>,
    pub critic_step: Option<f64>,
    pub step_cap: Option<usize>,
    pub curriculum: Option<String>,
    pub critic: Option<String>,
    pub hidden_dim: Option<usize>,
    pub max_episodes: Option<u64>,
    pub stop_when_mastered: Option<bool>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    /// Frozen-parameter episodes per evaluated task.
    #[serde(default = "default_eval_episodes")]
    pub episodes: usize,
    /// Training budget (meta-episodes) of each adaptation learner.
    #[serde(default = "default_adaptation_episodes")]
    pub adaptation_episodes: u64,
}

fn default_eval_episodes() -> usize {
    1000
}

fn default_adaptation_episodes() -> u64 {
    100_000
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { episodes: default_eval_episodes(), adaptation_episodes: default_adaptation_episodes() }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    /// Extra seeds for the ablation modes; empty means `[seed]`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Trained modular checkpoint for `zero_shot` / `adaptation`.
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub tasks: TaskFilter,
    #[serde(default)]
    pub trainer: TrainerOverrides,
    #[serde(default)]
    pub eval: EvalSettings,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Spec(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(CliError::Spec("`name` must be nonempty".into()));
        }
        self.trainer_config(self.seed)?;
        let train = self.training_tasks()?;
        if train.is_empty() {
            return Err(CliError::Spec("task filter selects no training tasks".into()));
        }
        if self.mode.holds_out() && self.held_out_tasks()?.is_empty() {
            return Err(CliError::Spec(format!("mode `{}` needs at least one held-out task", self.mode.name())));
        }
        if self.eval.episodes == 0 {
            return Err(CliError::Spec("eval.episodes must be positive".into()));
        }
        Ok(())
    }

    /// Seeds of the ablation repeats.
    pub fn run_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn trainer_config(&self, seed: u64) -> Result<TrainerConfig> {
        let o = &self.trainer;
        let d = TrainerConfig::default();
        let cfg = TrainerConfig {
            batch_size: o.batch_size.unwrap_or(d.batch_size),
            gamma: o.gamma.unwrap_or(d.gamma),
            r_good: o.r_good.unwrap_or(d.r_good),
            policy_step: o.policy_step.unwrap_or(d.policy_step),
            critic_step: o.critic_step.unwrap_or(d.critic_step),
            step_cap: o.step_cap.unwrap_or(d.step_cap),
            curriculum: match &o.curriculum {
                Some(name) => CurriculumMode::parse(name)?,
                None => d.curriculum,
            },
            critic: match &o.critic {
                Some(name) => CriticVariant::parse(name)?,
                None => d.critic,
            },
            hidden_dim: o.hidden_dim.unwrap_or(d.hidden_dim),
            seed,
            max_episodes: o.max_episodes.unwrap_or(d.max_episodes),
            stop_when_mastered: o.stop_when_mastered.unwrap_or(d.stop_when_mastered),
            workers: o.workers.unwrap_or(d.workers),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn filtered(&self) -> Result<Vec<Task>> {
        let all = task_registry();
        let mut tasks: Vec<Task> = if self.tasks.names.is_empty() {
            all.clone()
        } else {
            self.tasks
                .names
                .iter()
                .map(|n| find_task(&all, n).cloned())
                .collect::<sketch_core::Result<_>>()?
        };
        if let Some(env) = &self.tasks.env {
            let kind = parse_env(env)?;
            tasks.retain(|t| t.env == kind);
        }
        if let Some(max) = self.tasks.max_len {
            tasks.retain(|t| t.sketch.len() <= max);
        }
        Ok(tasks)
    }

    /// Held-out tasks of a generalisation run.
    pub fn held_out_tasks(&self) -> Result<Vec<Task>> {
        let all = task_registry();
        if self.tasks.held_out.is_empty() {
            let env = self.tasks.env.as_deref().map(parse_env).transpose()?;
            Ok(all.into_iter().filter(|t| t.held_out && env.is_none_or(|e| t.env == e)).collect())
        } else {
            Ok(self
                .tasks
                .held_out
                .iter()
                .map(|n| find_task(&all, n).cloned())
                .collect::<sketch_core::Result<_>>()?)
        }
    }

    /// Training tasks; held-out tasks are removed in generalisation modes.
    pub fn training_tasks(&self) -> Result<Vec<Task>> {
        let mut tasks = self.filtered()?;
        if self.mode.holds_out() {
            let held: Vec<String> = self.held_out_tasks()?.into_iter().map(|t| t.name).collect();
            tasks.retain(|t| !held.contains(&t.name));
        }
        Ok(tasks)
    }

    /// SHA-256 of the spec with run-location and parallelism settings blanked,
    /// so it identifies everything that can change results.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.trainer.workers = None;
        let digest = Sha256::digest(canonical.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn parse_env(name: &str) -> Result<EnvKind> {
    match name {
        "craft" => Ok(EnvKind::Craft),
        "maze" => Ok(EnvKind::Maze),
        other => Err(CliError::Spec(format!("unknown environment `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "plank-stick"
mode = "multitask"
seed = 3

[tasks]
env = "craft"
max_len = 2
"#;

    #[test]
    fn defaults_are_library_defaults() {
        let spec = ExperimentSpec::from_toml(MINIMAL).unwrap();
        let cfg = spec.trainer_config(spec.seed).unwrap();
        assert_eq!(cfg, TrainerConfig { seed: 3, ..TrainerConfig::default() });
        let names: Vec<String> = spec.training_tasks().unwrap().into_iter().map(|t| t.name).collect();
        assert_eq!(names, ["make plank", "make stick", "make cloth", "make rope"]);
    }

    #[test]
    fn held_out_removed_only_in_generalisation_modes() {
        let text = MINIMAL.replace("max_len = 2", "").replace("multitask", "zero_shot");
        let spec = ExperimentSpec::from_toml(&text).unwrap();
        let train: Vec<String> = spec.training_tasks().unwrap().into_iter().map(|t| t.name).collect();
        assert_eq!(train.len(), 8);
        assert!(!train.contains(&"make bed".to_string()));
        let held: Vec<String> = spec.held_out_tasks().unwrap().into_iter().map(|t| t.name).collect();
        assert_eq!(held, ["make bed", "make axe"]);

        let multi = ExperimentSpec::from_toml(&MINIMAL.replace("max_len = 2", "")).unwrap();
        assert_eq!(multi.training_tasks().unwrap().len(), 10);
    }

    #[test]
    fn bad_specs_rejected() {
        assert!(ExperimentSpec::from_toml(&MINIMAL.replace("multitask", "sideways")).is_err());
        assert!(ExperimentSpec::from_toml(&format!("{MINIMAL}\n[trainer]\ncritic = \"oracle\"\n")).is_err());
        assert!(ExperimentSpec::from_toml(&format!("{MINIMAL}\n[trainer]\ngamma = 2.0\n")).is_err());
        assert!(ExperimentSpec::from_toml(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
        assert!(ExperimentSpec::from_toml(&MINIMAL.replace("max_len = 2", "max_len = 1")).is_err());
        assert!(ExperimentSpec::from_toml(&MINIMAL.replace("\"craft\"", "\"space\"")).is_err());
    }

    #[test]
    fn hash_ignores_location_and_workers() {
        let a = ExperimentSpec::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("/elsewhere");
        b.trainer.workers = Some(4);
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 4;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn toml_round_trip() {
        let a = ExperimentSpec::from_toml(MINIMAL).unwrap();
        assert_eq!(ExperimentSpec::from_toml(&a.to_toml().unwrap()).unwrap(), a);
    }
}
