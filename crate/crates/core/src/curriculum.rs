//! Task-sampling curriculum: a sketch-length gate combined with weights
//! proportional to how far each task is from being solved.

use std::collections::BTreeMap;

use crate::env::{Task, TaskId};
use crate::error::{Error, Result};
use crate::policy::Rollout;

/// Per-episode decay of the running success estimate.
pub const ESTIMATE_DECAY: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurriculumMode {
    /// Admit tasks up to `l_max`, weight them by `1 - Êr`.
    LengthAndWeight,
    /// Admit tasks up to `l_max`, sample them uniformly.
    LengthOnly,
    /// All tasks admitted, weighted by `1 - Êr`.
    WeightOnly,
    /// All tasks admitted, sampled uniformly.
    Uniform,
}

impl CurriculumMode {
    pub const ALL: [CurriculumMode; 4] = [
        CurriculumMode::LengthAndWeight,
        CurriculumMode::LengthOnly,
        CurriculumMode::WeightOnly,
        CurriculumMode::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CurriculumMode::LengthAndWeight => "length_and_weight",
            CurriculumMode::LengthOnly => "length_only",
            CurriculumMode::WeightOnly => "weight_only",
            CurriculumMode::Uniform => "uniform",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown curriculum mode `{name}`")))
    }

    pub fn gates_length(self) -> bool {
        matches!(self, CurriculumMode::LengthAndWeight | CurriculumMode::LengthOnly)
    }

    pub fn weights_by_reward(self) -> bool {
        matches!(self, CurriculumMode::LengthAndWeight | CurriculumMode::WeightOnly)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    pub l_max: usize,
    pub reward_estimates: BTreeMap<TaskId, f64>,
    pub episode_counts: BTreeMap<TaskId, u64>,
}

impl CurriculumState {
    pub fn new(tasks: &[Task], mode: CurriculumMode) -> Self {
        let l_max = if mode.gates_length() { 1 } else { max_sketch_len(tasks) };
        Self {
            l_max,
            reward_estimates: tasks.iter().map(|t| (t.id, 0.0)).collect(),
            episode_counts: tasks.iter().map(|t| (t.id, 0)).collect(),
        }
    }

    pub fn estimate(&self, task: TaskId) -> f64 {
        self.reward_estimates.get(&task).copied().unwrap_or(0.0)
    }

    /// Whether `task` passes the length gate `|K_τ| ≤ l_max`.
    pub fn admits(&self, task: &Task) -> bool {
        task.sketch.len() <= self.l_max
    }

    pub fn active<'a>(&self, tasks: &'a [Task]) -> Vec<&'a Task> {
        tasks.iter().filter(|t| self.admits(t)).collect()
    }

    /// Uniform distribution over the admitted tasks, aligned with `tasks`.
    pub fn uniform(&self, tasks: &[Task]) -> Result<Vec<f64>> {
        let n = tasks.iter().filter(|t| self.admits(t)).count();
        if n == 0 {
            return Err(Error::Config(format!("no task has a sketch of length ≤ {}", self.l_max)));
        }
        Ok(tasks
            .iter()
            .map(|t| if self.admits(t) { 1.0 / n as f64 } else { 0.0 })
            .collect())
    }

    /// Sampling distribution over `tasks` (same order) under `mode`.
    pub fn distribution(&self, tasks: &[Task], mode: CurriculumMode) -> Result<Vec<f64>> {
        let gate = |t: &Task| !mode.gates_length() || self.admits(t);
        let weights: Vec<f64> = tasks
            .iter()
            .map(|t| {
                if !gate(t) {
                    0.0
                } else if mode.weights_by_reward() {
                    (1.0 - self.estimate(t.id)).max(0.0)
                } else {
                    1.0
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            return Ok(weights.into_iter().map(|w| w / total).collect());
        }
        // Every admitted task is (nearly) mastered.
        let n = tasks.iter().filter(|t| gate(t)).count();
        if n == 0 {
            return Err(Error::Config(format!("no task has a sketch of length ≤ {}", self.l_max)));
        }
        Ok(tasks.iter().map(|t| if gate(t) { 1.0 / n as f64 } else { 0.0 }).collect())
    }

    /// Folds each episode's success into its task's running estimate.
    pub fn update(&mut self, rollouts: &[Rollout]) {
        for r in rollouts {
            let e = self.reward_estimates.entry(r.task_id).or_insert(0.0);
            *e = ESTIMATE_DECAY * *e + (1.0 - ESTIMATE_DECAY) * r.total_reward;
            *self.episode_counts.entry(r.task_id).or_insert(0) += 1;
        }
    }

    /// `min_{τ ∈ T'} Êr_τ`, or `-∞` if no task is admitted.
    pub fn r_min(&self, tasks: &[Task]) -> f64 {
        let active = self.active(tasks);
        if active.is_empty() {
            return f64::NEG_INFINITY;
        }
        active.iter().map(|t| self.estimate(t.id)).fold(f64::INFINITY, f64::min)
    }
}

pub fn max_sketch_len(tasks: &[Task]) -> usize {
    tasks.iter().map(|t| t.sketch.len()).max().unwrap_or(0)
}

/// Index drawn from `probs` by inverting the CDF at `u ∈ [0, 1)`.
pub fn pick(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}
