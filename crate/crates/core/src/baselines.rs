//! Comparison models and the generalisation protocols.
//!
//! * [`IndependentPolicy`]: one flat network per task, no sharing.
//! * [`JointPolicy`]: one flat network for all tasks, conditioned on an
//!   encoding of the whole sketch.
//! * [`MetaPolicy`]: picks which frozen subpolicy to run next, for tasks that
//!   come without a sketch.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Action, EnvKind, EnvState, Sketch, SymbolId, Task, TaskId, Vocabulary, STOP};
use crate::error::{Error, Result};
use crate::nn::{sample_index, softmax, DenseNet};
use crate::policy::{run_family_episode, sampling_rng, PolicyFamily, Rollout, Transition};
use crate::trainer::ActorModel;

/// Longest sketch the joint encoding can represent.
pub const MAX_SKETCH_LEN: usize = 5;

/// High-level decisions allowed per adaptation episode.
pub const META_DECISION_CAP: usize = 10;

/// Runs a flat policy over `A` until the environment ends or `step_cap`.
fn run_flat_episode<F>(net: &DenseNet, input: F, task: &Task, seed: u64, step_cap: usize, gamma: f64) -> Result<Rollout>
where
    F: Fn(&[f64]) -> Cow<'_, [f64]>,
{
    let mut env = EnvState::reset(task, seed)?;
    let mut rng = sampling_rng(seed);
    let mut transitions = Vec::new();
    for step_index in 0..step_cap {
        let features = env.features();
        let probs = softmax(&net.logits(&input(&features))?)?;
        let action = sample_index(&probs, &mut rng);
        let low = Action::from_index(action).ok_or(Error::DimensionMismatch {
            context: "flat action index",
            expected: Action::COUNT,
            got: action,
        })?;
        let outcome = env.step(low);
        transitions.push(Transition {
            features,
            action,
            symbol: None,
            reward: outcome.reward,
            return_to_go: 0.0,
            task_id: task.id,
            step_index,
        });
        if outcome.done {
            break;
        }
    }
    Ok(Rollout::finish(task.id, transitions, Vec::new(), gamma))
}

/// One network over `A` per task.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentPolicy {
    nets: BTreeMap<TaskId, DenseNet>,
}

impl IndependentPolicy {
    pub fn new(tasks: &[Task], hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let nets = tasks
            .iter()
            .map(|t| (t.id, DenseNet::random(t.env.feature_dim(), hidden_dim, Action::COUNT, rng)))
            .collect();
        Self { nets }
    }

    fn get(&self, task: TaskId) -> Result<&DenseNet> {
        self.nets
            .get(&task)
            .ok_or_else(|| Error::UnknownTask(format!("no independent policy for task #{}", task.0)))
    }
}

impl ActorModel for IndependentPolicy {
    fn modules(&self) -> Vec<usize> {
        self.nets.keys().map(|t| t.0).collect()
    }

    fn module_of(&self, transition: &Transition) -> Result<usize> {
        Ok(transition.task_id.0)
    }

    fn net(&self, module: usize) -> Result<&DenseNet> {
        self.get(TaskId(module))
    }

    fn net_mut(&mut self, module: usize) -> Result<&mut DenseNet> {
        self.nets
            .get_mut(&TaskId(module))
            .ok_or_else(|| Error::UnknownTask(format!("no independent policy for task #{module}")))
    }

    fn check_task(&self, task: &Task) -> Result<()> {
        self.get(task.id).map(|_| ())
    }

    fn rollout(&self, task: &Task, seed: u64, step_cap: usize, gamma: f64) -> Result<Rollout> {
        run_flat_episode(self.get(task.id)?, |f| Cow::Borrowed(f), task, seed, step_cap, gamma)
    }
}

/// Positional one-hots for the first [`MAX_SKETCH_LEN`] symbols followed by
/// per-symbol counts divided by [`MAX_SKETCH_LEN`].
pub fn sketch_encoding(sketch: &Sketch) -> Result<Vec<f64>> {
    let vocab = Vocabulary.len();
    if sketch.len() > MAX_SKETCH_LEN {
        return Err(Error::Config(format!(
            "sketch of length {} exceeds the joint encoding limit {MAX_SKETCH_LEN}",
            sketch.len()
        )));
    }
    let mut out = vec![0.0; (MAX_SKETCH_LEN + 1) * vocab];
    for (pos, s) in sketch.symbols().iter().enumerate() {
        out[pos * vocab + s.0] = 1.0;
        out[MAX_SKETCH_LEN * vocab + s.0] += 1.0 / MAX_SKETCH_LEN as f64;
    }
    Ok(out)
}

pub fn sketch_encoding_dim() -> usize {
    (MAX_SKETCH_LEN + 1) * Vocabulary.len()
}

/// A single network over `A` whose input is features plus sketch encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPolicy {
    net: DenseNet,
    env: EnvKind,
    encodings: BTreeMap<TaskId, Vec<f64>>,
}

impl JointPolicy {
    pub fn new(tasks: &[Task], hidden_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let env = tasks.first().ok_or_else(|| Error::Config("no tasks for joint policy".into()))?.env;
        if tasks.iter().any(|t| t.env != env) {
            return Err(Error::Config("joint policy needs tasks from a single environment".into()));
        }
        let encodings = tasks
            .iter()
            .map(|t| Ok((t.id, sketch_encoding(&t.sketch)?)))
            .collect::<Result<_>>()?;
        let input = env.feature_dim() + sketch_encoding_dim();
        Ok(Self { net: DenseNet::random(input, hidden_dim, Action::COUNT, rng), env, encodings })
    }

    pub fn input(features: &[f64], encoding: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(features.len() + encoding.len());
        x.extend_from_slice(features);
        x.extend_from_slice(encoding);
        x
    }
}

impl ActorModel for JointPolicy {
    fn modules(&self) -> Vec<usize> {
        vec![0]
    }

    fn module_of(&self, _transition: &Transition) -> Result<usize> {
        Ok(0)
    }

    fn net(&self, _module: usize) -> Result<&DenseNet> {
        Ok(&self.net)
    }

    fn net_mut(&mut self, _module: usize) -> Result<&mut DenseNet> {
        Ok(&mut self.net)
    }

    fn policy_input<'a>(&self, transition: &'a Transition) -> Result<Cow<'a, [f64]>> {
        let enc = self
            .encodings
            .get(&transition.task_id)
            .ok_or_else(|| Error::UnknownTask(format!("task #{} was not a joint training task", transition.task_id.0)))?;
        Ok(Cow::Owned(Self::input(&transition.features, enc)))
    }

    fn check_task(&self, task: &Task) -> Result<()> {
        if task.env != self.env {
            return Err(Error::Config(format!("joint policy acts in {}, not {}", self.env, task.env)));
        }
        sketch_encoding(&task.sketch).map(|_| ())
    }

    /// Works for any task of the right environment, trained on or not.
    fn rollout(&self, task: &Task, seed: u64, step_cap: usize, gamma: f64) -> Result<Rollout> {
        self.check_task(task)?;
        let enc = sketch_encoding(&task.sketch)?;
        run_flat_episode(&self.net, |f| Cow::Owned(Self::input(f, &enc)), task, seed, step_cap, gamma)
    }
}

/// Picks an index into the meta-policy's symbol choices, or `None` to end.
pub trait SymbolChooser {
    fn choose(&mut self, features: &[f64], decision: usize, rng: &mut ChaCha8Rng) -> Result<Option<usize>>;
}

/// Replays a fixed symbol sequence, then ends the episode.
#[derive(Debug, Clone)]
pub struct ReplayChooser {
    pub sequence: Vec<usize>,
}

impl SymbolChooser for ReplayChooser {
    fn choose(&mut self, _features: &[f64], decision: usize, _rng: &mut ChaCha8Rng) -> Result<Option<usize>> {
        Ok(self.sequence.get(decision).copied())
    }
}

struct NetChooser<'a> {
    net: &'a DenseNet,
}

impl SymbolChooser for NetChooser<'_> {
    fn choose(&mut self, features: &[f64], _decision: usize, rng: &mut ChaCha8Rng) -> Result<Option<usize>> {
        Ok(Some(sample_index(&softmax(&self.net.logits(features)?)?, rng)))
    }
}

/// Episode in which each decision runs a frozen subpolicy from `family` until
/// it emits STOP. `step_cap` bounds low-level decisions (STOP included) across
/// the whole episode; one transition is logged per high-level decision.
#[allow(clippy::too_many_arguments)]
pub fn run_meta_episode<C: SymbolChooser>(
    chooser: &mut C,
    choices: &[SymbolId],
    family: &PolicyFamily,
    task: &Task,
    seed: u64,
    step_cap: usize,
    decision_cap: usize,
    gamma: f64,
) -> Result<Rollout> {
    let mut env = EnvState::reset(task, seed)?;
    let mut low_rng = sampling_rng(seed);
    let mut meta_rng = ChaCha8Rng::seed_from_u64(seed);
    meta_rng.set_stream(2);
    let mut low_steps = 0;
    let mut transitions = Vec::new();
    let mut boundaries = Vec::new();

    for decision in 0..decision_cap {
        if low_steps >= step_cap {
            break;
        }
        let features = env.features();
        let Some(choice) = chooser.choose(&features, decision, &mut meta_rng)? else {
            break;
        };
        let symbol = *choices.get(choice).ok_or(Error::DimensionMismatch {
            context: "meta choice",
            expected: choices.len(),
            got: choice,
        })?;
        let mut reward = 0.0;
        let mut done = false;
        while low_steps < step_cap {
            let probs = family.action_distribution(symbol, &env.features())?;
            let action = sample_index(&probs, &mut low_rng);
            low_steps += 1;
            if action == STOP {
                break;
            }
            let outcome = env.step(Action::from_index(action).expect("non-STOP index is a low-level action"));
            reward += outcome.reward;
            if outcome.done {
                done = true;
                break;
            }
        }
        boundaries.push(decision);
        transitions.push(Transition {
            features,
            action: choice,
            symbol: None,
            reward,
            return_to_go: 0.0,
            task_id: task.id,
            step_index: decision,
        });
        if done {
            break;
        }
    }
    Ok(Rollout::finish(task.id, transitions, boundaries, gamma))
}

/// High-level learner over the frozen subpolicies of one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaPolicy {
    net: DenseNet,
    choices: Vec<SymbolId>,
    family: PolicyFamily,
    env: EnvKind,
    pub decision_cap: usize,
}

impl MetaPolicy {
    /// Choices are the family's symbols that act in `env`.
    pub fn new(family: PolicyFamily, env: EnvKind, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let choices: Vec<SymbolId> = family.symbols().filter(|&s| Vocabulary.env(s) == env).collect();
        if choices.is_empty() {
            return Err(Error::Config(format!("no trained subpolicy acts in {env}")));
        }
        let net = DenseNet::random(env.feature_dim(), hidden_dim, choices.len(), rng);
        Ok(Self { net, choices, family, env, decision_cap: META_DECISION_CAP })
    }

    pub fn choices(&self) -> &[SymbolId] {
        &self.choices
    }

    pub fn family(&self) -> &PolicyFamily {
        &self.family
    }

    /// Indices into [`Self::choices`] that spell out `sketch`.
    pub fn encode_sketch(&self, sketch: &Sketch) -> Result<Vec<usize>> {
        sketch
            .symbols()
            .iter()
            .map(|s| {
                self.choices
                    .iter()
                    .position(|c| c == s)
                    .ok_or_else(|| Error::UnknownSymbol(s.name().to_string()))
            })
            .collect()
    }
}

impl ActorModel for MetaPolicy {
    fn modules(&self) -> Vec<usize> {
        vec![0]
    }

    fn module_of(&self, _transition: &Transition) -> Result<usize> {
        Ok(0)
    }

    fn net(&self, _module: usize) -> Result<&DenseNet> {
        Ok(&self.net)
    }

    fn net_mut(&mut self, _module: usize) -> Result<&mut DenseNet> {
        Ok(&mut self.net)
    }

    fn check_task(&self, task: &Task) -> Result<()> {
        if task.env != self.env {
            return Err(Error::Config(format!("meta-policy acts in {}, not {}", self.env, task.env)));
        }
        Ok(())
    }

    fn rollout(&self, task: &Task, seed: u64, step_cap: usize, gamma: f64) -> Result<Rollout> {
        self.check_task(task)?;
        let mut chooser = NetChooser { net: &self.net };
        run_meta_episode(&mut chooser, &self.choices, &self.family, task, seed, step_cap, self.decision_cap, gamma)
    }
}

/// Seeds for `episodes` evaluation episodes, disjoint in practice from the
/// seeds drawn during training.
pub fn evaluation_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    (0..episodes).map(|_| rng.next_u64()).collect()
}

/// Fraction of `episodes` frozen-parameter episodes that complete `task`.
pub fn completion_rate<M: ActorModel + ?Sized>(
    model: &M,
    task: &Task,
    episodes: usize,
    seed: u64,
    step_cap: usize,
) -> Result<f64> {
    model.check_task(task)?;
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut done = 0;
    for s in evaluation_seeds(seed, episodes) {
        done += model.rollout(task, s, step_cap, 1.0)?.completed as usize;
    }
    Ok(done as f64 / episodes as f64)
}

/// Executes `task`'s sketch with the frozen family; fails if a symbol of the
/// sketch has no subpolicy.
pub fn zero_shot_eval(family: &PolicyFamily, task: &Task, episodes: usize, seed: u64, step_cap: usize) -> Result<f64> {
    family.check_covers(task)?;
    completion_rate(family, task, episodes, seed, step_cap)
}

/// Same as [`zero_shot_eval`] but through the meta-episode runner, replaying
/// the sketch as high-level choices.
pub fn replay_eval(meta: &MetaPolicy, task: &Task, episodes: usize, seed: u64, step_cap: usize) -> Result<f64> {
    let sequence = meta.encode_sketch(&task.sketch)?;
    let mut done = 0;
    for s in evaluation_seeds(seed, episodes) {
        let mut chooser = ReplayChooser { sequence: sequence.clone() };
        let r = run_meta_episode(&mut chooser, meta.choices(), meta.family(), task, s, step_cap, meta.decision_cap, 1.0)?;
        done += r.completed as usize;
    }
    Ok(done as f64 / episodes.max(1) as f64)
}

/// Same seeds and controller draws as [`run_family_episode`].
pub fn family_episode(family: &PolicyFamily, task: &Task, seed: u64, step_cap: usize) -> Result<Rollout> {
    run_family_episode(family, task, seed, step_cap, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Multitask,
    ZeroShot,
    Adaptation,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::Multitask => "multitask",
            Condition::ZeroShot => "zero_shot",
            Condition::Adaptation => "adaptation",
        }
    }
}

/// One row of the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub condition: Condition,
    pub task: String,
    pub completion_rate: f64,
    pub episodes: usize,
}

/// Uniform random action, for sanity baselines.
pub fn random_completion(task: &Task, episodes: usize, seed: u64, step_cap: usize) -> Result<f64> {
    let mut done = 0;
    for s in evaluation_seeds(seed, episodes) {
        let mut env = EnvState::reset(task, s)?;
        let mut rng = sampling_rng(s);
        for _ in 0..step_cap {
            let a = Action::ALL[rng.gen_range(0..Action::COUNT)];
            let o = env.step(a);
            if o.done {
                done += (o.reward > 0.0) as usize;
                break;
            }
        }
    }
    Ok(done as f64 / episodes.max(1) as f64)
}
