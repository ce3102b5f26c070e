//! Curriculum-driven actor–critic training loop.
//!
//! Each update draws a batch of episodes from the curriculum, takes one
//! clipped RMSProp ascent step per policy module and per critic block, then
//! refreshes the per-task success estimates. The loop is a resumable state
//! machine: [`Trainer::tick`] performs exactly one unit of work and every
//! piece of state it touches is plain data that can be checkpointed.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::critic::{CriticParams, CriticVariant};
use crate::curriculum::{max_sketch_len, pick, CurriculumMode, CurriculumState};
use crate::env::{Task, DEFAULT_STEP_CAP};
use crate::error::{Error, Result};
use crate::nn::{DenseNet, GradientBundle, RmsPropState};
use crate::policy::{run_family_episode, PolicyFamily, Rollout, Transition};

/// A trainable policy made of independently optimised networks ("modules").
pub trait ActorModel: Send + Sync {
    /// Module ids, in a fixed order.
    fn modules(&self) -> Vec<usize>;
    /// Module that produced `transition`.
    fn module_of(&self, transition: &Transition) -> Result<usize>;
    fn net(&self, module: usize) -> Result<&DenseNet>;
    fn net_mut(&mut self, module: usize) -> Result<&mut DenseNet>;
    /// Network input for `transition`; defaults to the logged features.
    fn policy_input<'a>(&self, transition: &'a Transition) -> Result<Cow<'a, [f64]>> {
        Ok(Cow::Borrowed(&transition.features))
    }
    /// Fails if the model cannot act on `task`.
    fn check_task(&self, task: &Task) -> Result<()>;
    fn rollout(&self, task: &Task, seed: u64, step_cap: usize, gamma: f64) -> Result<Rollout>;
}

impl ActorModel for PolicyFamily {
    fn modules(&self) -> Vec<usize> {
        self.symbols().map(|s| s.0).collect()
    }

    fn module_of(&self, transition: &Transition) -> Result<usize> {
        transition
            .symbol
            .map(|s| s.0)
            .ok_or_else(|| Error::Config("modular transition without a symbol".into()))
    }

    fn net(&self, module: usize) -> Result<&DenseNet> {
        Ok(&self.get(crate::env::SymbolId(module))?.net)
    }

    fn net_mut(&mut self, module: usize) -> Result<&mut DenseNet> {
        Ok(&mut self.get_mut(crate::env::SymbolId(module))?.net)
    }

    fn check_task(&self, task: &Task) -> Result<()> {
        self.check_covers(task)
    }

    fn rollout(&self, task: &Task, seed: u64, step_cap: usize, gamma: f64) -> Result<Rollout> {
        run_family_episode(self, task, seed, step_cap, gamma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    /// Minimum number of transitions per update.
    pub batch_size: usize,
    pub gamma: f64,
    /// Success estimate every admitted task must reach before `l_max` grows.
    pub r_good: f64,
    pub policy_step: f64,
    pub critic_step: f64,
    pub step_cap: usize,
    pub curriculum: CurriculumMode,
    pub critic: CriticVariant,
    pub hidden_dim: usize,
    pub seed: u64,
    /// Training stops once this many episodes have been collected.
    pub max_episodes: u64,
    /// Stop as soon as every task is mastered at full length.
    pub stop_when_mastered: bool,
    /// Rollout threads; results do not depend on this.
    pub workers: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            batch_size: 2000,
            gamma: 0.9,
            r_good: 0.8,
            policy_step: 0.001,
            critic_step: 0.001,
            step_cap: DEFAULT_STEP_CAP,
            curriculum: CurriculumMode::LengthAndWeight,
            critic: CriticVariant::StateAndTask,
            hidden_dim: DenseNet::DEFAULT_HIDDEN,
            seed: 0,
            max_episodes: 2_000_000,
            stop_when_mastered: true,
            workers: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !self.r_good.is_finite() {
            return bad("r_good must be finite");
        }
        if !(self.policy_step > 0.0 && self.critic_step > 0.0) {
            return bad("step sizes must be positive");
        }
        if self.step_cap == 0 {
            return bad("step_cap must be positive");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be positive");
        }
        Ok(())
    }
}

/// Networks plus critic plus optimiser state.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner<M> {
    pub model: M,
    pub critic: CriticParams,
    pub policy_optim: BTreeMap<usize, RmsPropState>,
    pub critic_optim: Vec<RmsPropState>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub transitions: usize,
    pub modules_updated: usize,
    pub blocks_updated: usize,
}

impl<M: ActorModel> Learner<M> {
    pub fn new(model: M, critic: CriticParams, policy_step: f64, critic_step: f64) -> Result<Self> {
        let mut policy_optim = BTreeMap::new();
        for m in model.modules() {
            policy_optim.insert(m, RmsPropState::new(model.net(m)?, policy_step));
        }
        let critic_optim = critic.blocks().iter().map(|b| RmsPropState::new(b, critic_step)).collect();
        Ok(Self { model, critic, policy_optim, critic_optim })
    }

    /// `(1/D) Σ ∇ log π(a|s) (q - c_τ(s))` per module that acted in the batch.
    pub fn policy_gradients(&self, rollouts: &[Rollout], batch_size: usize) -> Result<BTreeMap<usize, GradientBundle>> {
        let scale = 1.0 / batch_size as f64;
        let mut grads: BTreeMap<usize, GradientBundle> = BTreeMap::new();
        for r in rollouts {
            for t in &r.transitions {
                let m = self.model.module_of(t)?;
                let net = self.model.net(m)?;
                let advantage = t.return_to_go - self.critic.value(t.task_id, &t.features)?;
                let g = grads.entry(m).or_insert_with(|| GradientBundle::zeros_like(net));
                let input = self.model.policy_input(t)?;
                net.accumulate_logprob_gradient(&input, t.action, scale * advantage, g)?;
            }
        }
        Ok(grads)
    }

    /// `(1/D) Σ (q - c_τ(s)) ∇c_τ(s)` per critic block, `None` for blocks
    /// without samples.
    pub fn critic_gradients(&self, rollouts: &[Rollout], batch_size: usize) -> Result<Vec<Option<GradientBundle>>> {
        let scale = 1.0 / batch_size as f64;
        let mut grads = self.critic.zero_gradients();
        let mut touched = vec![false; grads.len()];
        for r in rollouts {
            for t in &r.transitions {
                touched[self.critic.block_index(t.task_id)?] = true;
                self.critic.accumulate_gradient(t.task_id, &t.features, t.return_to_go, scale, &mut grads)?;
            }
        }
        Ok(grads.into_iter().zip(touched).map(|(g, hit)| hit.then_some(g)).collect())
    }

    /// One clipped RMSProp step on every module and critic block with samples.
    pub fn update(&mut self, rollouts: &[Rollout], batch_size: usize) -> Result<UpdateStats> {
        let policy = self.policy_gradients(rollouts, batch_size)?;
        let critic = self.critic_gradients(rollouts, batch_size)?;
        let modules_updated = policy.len();
        for (m, mut g) in policy {
            g.clip_to_unit_norm();
            let net = self.model.net_mut(m)?;
            let opt = self
                .policy_optim
                .get_mut(&m)
                .ok_or_else(|| Error::Config(format!("no optimiser state for module {m}")))?;
            opt.apply(net, &g)?;
            if !crate::nn::Parameters::all_finite(net) {
                return Err(Error::NonFinite("policy parameters"));
            }
        }
        let mut blocks_updated = 0;
        for (b, g) in critic.into_iter().enumerate() {
            if let Some(mut g) = g {
                g.clip_to_unit_norm();
                self.critic_optim[b].apply(&mut self.critic.blocks_mut()[b], &g)?;
                blocks_updated += 1;
            }
        }
        Ok(UpdateStats {
            transitions: rollouts.iter().map(|r| r.transitions.len()).sum(),
            modules_updated,
            blocks_updated,
        })
    }
}

/// Task index and environment seed of episode `index` of a run.
pub fn episode_plan(run_seed: u64, index: u64, distribution: &[f64]) -> (usize, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(index);
    let u: f64 = rng.gen();
    (pick(distribution, u), rng.gen())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRow {
    pub task_name: String,
    pub reward_estimate: f64,
    pub curriculum_weight: f64,
}

/// Snapshot written after every update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub update: u64,
    pub episodes_elapsed: u64,
    pub l_max: usize,
    pub batch_episodes: usize,
    pub batch_transitions: usize,
    pub batch_success_rate: f64,
    pub rows: Vec<TaskRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Mastered,
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Running,
    Finished(StopReason),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tick {
    /// No admitted task was ready; `l_max` moved to the given value.
    Advanced(usize),
    Updated(UpdateRecord),
    Finished(StopReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<M> {
    pub config: TrainerConfig,
    pub tasks: Vec<Task>,
    pub learner: Learner<M>,
    pub curriculum: CurriculumState,
    /// Task distribution for the next batch, aligned with `tasks`.
    pub distribution: Vec<f64>,
    /// The next batch starts a new `l_max` phase.
    pub phase_fresh: bool,
    pub episodes: u64,
    pub updates: u64,
    pub status: Status,
}

impl<M: ActorModel> Trainer<M> {
    pub fn new(model: M, tasks: Vec<Task>, config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        if tasks.is_empty() {
            return Err(Error::Config("no training tasks".into()));
        }
        for t in &tasks {
            model.check_task(t)?;
        }
        let critic = CriticParams::new(config.critic, &tasks)?;
        let learner = Learner::new(model, critic, config.policy_step, config.critic_step)?;
        let curriculum = CurriculumState::new(&tasks, config.curriculum);
        Ok(Self {
            distribution: vec![0.0; tasks.len()],
            config,
            tasks,
            learner,
            curriculum,
            phase_fresh: true,
            episodes: 0,
            updates: 0,
            status: Status::Running,
        })
    }

    pub fn model(&self) -> &M {
        &self.learner.model
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.status, Status::Finished(_))
    }

    fn max_len(&self) -> usize {
        max_sketch_len(&self.tasks)
    }

    /// Runs episodes from `self.episodes` on until the batch holds at least
    /// `batch_size` transitions.
    pub fn collect_batch(&self) -> Result<Vec<Rollout>> {
        let cfg = &self.config;
        let mut out = Vec::new();
        let mut transitions = 0;
        let mut next = self.episodes;
        let chunk = cfg.workers.max(1) as u64;
        while transitions < cfg.batch_size {
            let results = self.run_range(next, chunk)?;
            next += chunk;
            for r in results {
                if transitions >= cfg.batch_size {
                    break;
                }
                transitions += r.transitions.len();
                out.push(r);
            }
        }
        Ok(out)
    }

    fn run_one(&self, index: u64) -> Result<Rollout> {
        let (task, seed) = episode_plan(self.config.seed, index, &self.distribution);
        self.learner
            .model
            .rollout(&self.tasks[task], seed, self.config.step_cap, self.config.gamma)
    }

    fn run_range(&self, start: u64, count: u64) -> Result<Vec<Rollout>> {
        if count == 1 {
            return Ok(vec![self.run_one(start)?]);
        }
        std::thread::scope(|scope| {
            let handles: Vec<_> = (start..start + count)
                .map(|i| scope.spawn(move || self.run_one(i)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Config("rollout worker panicked".into()))))
                .collect()
        })
    }

    /// Performs one unit of work: a length advance, one update, or the
    /// transition to finished.
    pub fn tick(&mut self) -> Result<Tick> {
        if let Status::Finished(reason) = self.status {
            return Ok(Tick::Finished(reason));
        }
        if self.episodes >= self.config.max_episodes {
            self.status = Status::Finished(StopReason::BudgetExhausted);
            return Ok(Tick::Finished(StopReason::BudgetExhausted));
        }
        if self.curriculum.active(&self.tasks).is_empty() {
            self.curriculum.l_max += 1;
            self.phase_fresh = true;
            return Ok(Tick::Advanced(self.curriculum.l_max));
        }
        if self.phase_fresh {
            self.distribution = if self.config.curriculum.gates_length() {
                self.curriculum.uniform(&self.tasks)?
            } else {
                vec![1.0 / self.tasks.len() as f64; self.tasks.len()]
            };
            self.phase_fresh = false;
        }

        let batch = self.collect_batch()?;
        let stats = self.learner.update(&batch, self.config.batch_size)?;
        self.curriculum.update(&batch);
        self.distribution = self.curriculum.distribution(&self.tasks, self.config.curriculum)?;
        self.episodes += batch.len() as u64;
        self.updates += 1;

        let successes = batch.iter().filter(|r| r.completed).count();
        let record = UpdateRecord {
            update: self.updates,
            episodes_elapsed: self.episodes,
            l_max: self.curriculum.l_max,
            batch_episodes: batch.len(),
            batch_transitions: stats.transitions,
            batch_success_rate: successes as f64 / batch.len() as f64,
            rows: self
                .tasks
                .iter()
                .zip(&self.distribution)
                .map(|(t, &w)| TaskRow {
                    task_name: t.name.clone(),
                    reward_estimate: self.curriculum.estimate(t.id),
                    curriculum_weight: w,
                })
                .collect(),
        };

        if self.curriculum.r_min(&self.tasks) >= self.config.r_good {
            if self.curriculum.l_max >= self.max_len() {
                if self.config.stop_when_mastered {
                    self.status = Status::Finished(StopReason::Mastered);
                }
            } else {
                self.curriculum.l_max += 1;
                self.phase_fresh = true;
            }
        }
        Ok(Tick::Updated(record))
    }

    /// Ticks until finished, handing every update record to `on_update`.
    pub fn run<F>(&mut self, mut on_update: F) -> Result<StopReason>
    where
        F: FnMut(&Self, &UpdateRecord) -> Result<()>,
    {
        loop {
            match self.tick()? {
                Tick::Finished(reason) => return Ok(reason),
                Tick::Updated(record) => on_update(self, &record)?,
                Tick::Advanced(_) => {}
            }
        }
    }
}

/// Mean over tasks of the reward estimate, integrated over episodes up to
/// `budget` (held constant between records) and divided by `budget`.
pub fn learning_curve_area(records: &[UpdateRecord], budget: u64) -> f64 {
    if budget == 0 {
        return 0.0;
    }
    let mut area = 0.0;
    let mut prev_episodes = 0;
    let mut prev_value = 0.0;
    for r in records {
        let e = r.episodes_elapsed.min(budget);
        area += prev_value * (e - prev_episodes) as f64;
        prev_episodes = e;
        prev_value = r.rows.iter().map(|t| t.reward_estimate).sum::<f64>() / r.rows.len().max(1) as f64;
    }
    area += prev_value * (budget - prev_episodes) as f64;
    area / budget as f64
}

/// Episodes elapsed at the first record where every task's estimate is at
/// least `threshold`.
pub fn episodes_to_threshold(records: &[UpdateRecord], threshold: f64) -> Option<u64> {
    records
        .iter()
        .find(|r| r.rows.iter().all(|t| t.reward_estimate >= threshold))
        .map(|r| r.episodes_elapsed)
}
