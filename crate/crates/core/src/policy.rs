//! Subpolicy families and sketch-driven rollouts.
//!
//! A task policy is the concatenation of the subpolicies named by its sketch.
//! The active subpolicy picks from `A⁺ = A ∪ {STOP}`; a low-level action
//! advances the environment, while STOP hands control to the next symbol
//! without touching the environment. STOP from the last symbol ends the
//! episode. STOP decisions are logged and count toward the step cap like any
//! other decision.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::oracle::Oracle;
use crate::env::{augmented_action_name, Action, EnvState, SymbolId, Task, TaskId, Vocabulary, STOP};
use crate::error::{Error, Result};
use crate::nn::{sample_index, softmax, DenseNet};

/// Size of the augmented action set.
pub const AUGMENTED_ACTIONS: usize = Action::COUNT + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SubpolicyParams {
    pub net: DenseNet,
}

impl SubpolicyParams {
    pub fn new(net: DenseNet) -> Result<Self> {
        if net.output_dim() != AUGMENTED_ACTIONS {
            return Err(Error::DimensionMismatch {
                context: "subpolicy output",
                expected: AUGMENTED_ACTIONS,
                got: net.output_dim(),
            });
        }
        Ok(Self { net })
    }
}

/// One subpolicy per symbol used by the registered tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyFamily {
    subpolicies: BTreeMap<SymbolId, SubpolicyParams>,
}

impl PolicyFamily {
    /// Randomly initialised subpolicies for every symbol in `tasks`' sketches.
    pub fn new(tasks: &[Task], hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut symbols: BTreeMap<SymbolId, usize> = BTreeMap::new();
        for t in tasks {
            for &s in t.sketch.symbols() {
                symbols.insert(s, t.env.feature_dim());
            }
        }
        let subpolicies = symbols
            .into_iter()
            .map(|(s, input)| {
                let net = DenseNet::random(input, hidden_dim, AUGMENTED_ACTIONS, rng);
                (s, SubpolicyParams { net })
            })
            .collect();
        Self { subpolicies }
    }

    pub fn from_subpolicies(subpolicies: BTreeMap<SymbolId, SubpolicyParams>) -> Self {
        Self { subpolicies }
    }

    pub fn get(&self, symbol: SymbolId) -> Result<&SubpolicyParams> {
        self.subpolicies
            .get(&symbol)
            .ok_or_else(|| Error::UnknownSymbol(Vocabulary.name(symbol).to_string()))
    }

    pub fn get_mut(&mut self, symbol: SymbolId) -> Result<&mut SubpolicyParams> {
        self.subpolicies
            .get_mut(&symbol)
            .ok_or_else(|| Error::UnknownSymbol(Vocabulary.name(symbol).to_string()))
    }

    pub fn symbols(&self) -> impl Iterator<Item = SymbolId> + '_ {
        self.subpolicies.keys().copied()
    }

    pub fn contains(&self, symbol: SymbolId) -> bool {
        self.subpolicies.contains_key(&symbol)
    }

    pub fn iter(&self) -> impl Iterator<Item = (SymbolId, &SubpolicyParams)> {
        self.subpolicies.iter().map(|(k, v)| (*k, v))
    }

    /// Fails if `task` names a symbol without a subpolicy.
    pub fn check_covers(&self, task: &Task) -> Result<()> {
        for &s in task.sketch.symbols() {
            self.get(s)?;
        }
        Ok(())
    }

    /// `π_b(· | features)` over `A⁺`.
    pub fn action_distribution(&self, symbol: SymbolId, features: &[f64]) -> Result<Vec<f64>> {
        softmax(&self.get(symbol)?.net.logits(features)?)
    }
}

/// One logged decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub features: Vec<f64>,
    /// Index into the acting network's output (into `A⁺` for subpolicies).
    pub action: usize,
    /// Active sketch symbol; `None` for policies that do not follow a sketch.
    pub symbol: Option<SymbolId>,
    pub reward: f64,
    pub return_to_go: f64,
    pub task_id: TaskId,
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub task_id: TaskId,
    pub transitions: Vec<Transition>,
    pub total_reward: f64,
    pub completed: bool,
    /// Transition indices at which STOP fired.
    pub subpolicy_boundaries: Vec<usize>,
}

impl Rollout {
    /// Builds a rollout from logged transitions, filling in returns.
    pub fn finish(task_id: TaskId, mut transitions: Vec<Transition>, boundaries: Vec<usize>, gamma: f64) -> Self {
        let rewards: Vec<f64> = transitions.iter().map(|t| t.reward).collect();
        for (t, q) in transitions.iter_mut().zip(empirical_returns(&rewards, gamma)) {
            t.return_to_go = q;
        }
        let total_reward: f64 = rewards.iter().sum();
        Self {
            task_id,
            transitions,
            total_reward,
            completed: total_reward > 0.0,
            subpolicy_boundaries: boundaries,
        }
    }

    /// One line per transition: step, symbol, action, reward, return-to-go.
    pub fn trace(&self) -> String {
        let mut out = String::new();
        for t in &self.transitions {
            let symbol = t.symbol.map_or("-", |s| s.name());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.6}",
                t.step_index,
                symbol,
                augmented_action_name(t.action),
                t.reward,
                t.return_to_go
            );
        }
        out
    }
}

/// `q_i = Σ_{j ≥ i} γ^{j-i} r_j`, where `r_j` is the reward received after
/// decision `j`.
pub fn empirical_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (q, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *q = acc;
    }
    out
}

/// Chooses indices into `A⁺` while following a sketch.
pub trait Controller {
    fn choose(
        &mut self,
        state: &EnvState,
        features: &[f64],
        position: usize,
        symbol: SymbolId,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize>;
}

impl Controller for &PolicyFamily {
    fn choose(
        &mut self,
        _state: &EnvState,
        features: &[f64],
        _position: usize,
        symbol: SymbolId,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize> {
        Ok(sample_index(&self.action_distribution(symbol, features)?, rng))
    }
}

impl Controller for Oracle {
    fn choose(
        &mut self,
        state: &EnvState,
        _features: &[f64],
        position: usize,
        symbol: SymbolId,
        _rng: &mut ChaCha8Rng,
    ) -> Result<usize> {
        Ok(self.act(state, position, symbol))
    }
}

/// RNG for action sampling in the episode seeded by `seed`; the environment
/// layout uses a different stream of the same seed.
pub fn sampling_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Runs `task`'s sketch with `controller` until completion, a final STOP,
/// environment termination or `step_cap` decisions.
pub fn run_episode<C: Controller>(
    controller: &mut C,
    task: &Task,
    seed: u64,
    step_cap: usize,
    gamma: f64,
) -> Result<Rollout> {
    let mut env = EnvState::reset(task, seed)?;
    let mut rng = sampling_rng(seed);
    let symbols = task.sketch.symbols();
    let mut position = 0;
    let mut transitions = Vec::new();
    let mut boundaries = Vec::new();

    for step_index in 0..step_cap {
        let features = env.features();
        let symbol = symbols[position];
        let action = controller.choose(&env, &features, position, symbol, &mut rng)?;
        let mut transition = Transition {
            features,
            action,
            symbol: Some(symbol),
            reward: 0.0,
            return_to_go: 0.0,
            task_id: task.id,
            step_index,
        };
        if action == STOP {
            transitions.push(transition);
            boundaries.push(step_index);
            position += 1;
            if position == symbols.len() {
                break;
            }
            continue;
        }
        let low = Action::from_index(action).ok_or(Error::DimensionMismatch {
            context: "action index",
            expected: AUGMENTED_ACTIONS,
            got: action,
        })?;
        let outcome = env.step(low);
        transition.reward = outcome.reward;
        transitions.push(transition);
        if outcome.done {
            break;
        }
    }
    Ok(Rollout::finish(task.id, transitions, boundaries, gamma))
}

/// Rolls out the modular policy for `task` with frozen parameters.
pub fn run_family_episode(
    family: &PolicyFamily,
    task: &Task,
    seed: u64,
    step_cap: usize,
    gamma: f64,
) -> Result<Rollout> {
    family.check_covers(task)?;
    let mut controller = family;
    run_episode(&mut controller, task, seed, step_cap, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::registry::{find_task, task_registry};
    use crate::env::DEFAULT_STEP_CAP;
    use rand::Rng;

    fn family(tasks: &[Task], seed: u64) -> PolicyFamily {
        PolicyFamily::new(tasks, 16, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn returns_of_terminal_reward() {
        let q = empirical_returns(&[0.0, 0.0, 1.0], 0.9);
        assert!((q[0] - 0.81).abs() < 1e-15);
        assert!((q[1] - 0.9).abs() < 1e-15);
        assert_eq!(q[2], 1.0);
        assert_eq!(empirical_returns(&[0.0; 4], 0.9), vec![0.0; 4]);
    }

    #[test]
    fn returns_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rewards: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = empirical_returns(&rewards, 0.9);
        for i in 0..rewards.len() {
            let brute: f64 = (i..rewards.len()).map(|j| 0.9f64.powi((j - i) as i32) * rewards[j]).sum();
            assert!((q[i] - brute).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_output_layer_gives_uniform_distribution() {
        let tasks = task_registry();
        let plank = find_task(&tasks, "make plank").unwrap();
        let mut fam = family(std::slice::from_ref(plank), 0);
        let sym = plank.sketch.symbols()[0];
        let net = &mut fam.get_mut(sym).unwrap().net;
        for o in 0..net.output_dim() {
            for h in 0..net.hidden_dim() {
                net.set_w2(o, h, 0.0);
            }
        }
        let f = EnvState::reset(plank, 1).unwrap().features();
        for p in fam.action_distribution(sym, &f).unwrap() {
            assert!((p - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn distribution_is_softmax_of_forward() {
        let tasks = task_registry();
        let fam = family(&tasks[..10], 3);
        let sym = tasks[0].sketch.symbols()[1];
        let f = EnvState::reset(&tasks[0], 9).unwrap().features();
        let (logits, _) = fam.get(sym).unwrap().net.forward(&f).unwrap();
        let expected = softmax(&logits).unwrap();
        let got = fam.action_distribution(sym, &f).unwrap();
        assert_eq!(got, expected);
        assert_eq!(got, fam.action_distribution(sym, &f).unwrap());
        assert!(got.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn unknown_symbol_is_error() {
        let tasks = task_registry();
        let fam = family(&tasks[..1], 0);
        let gold = find_task(&tasks, "get gold").unwrap();
        assert!(matches!(
            fam.action_distribution(gold.sketch.symbols()[3], &[0.0; 292]),
            Err(Error::UnknownSymbol(_))
        ));
        assert!(run_family_episode(&fam, gold, 0, 10, 0.9).is_err());
    }

    struct AlwaysStop;
    impl Controller for AlwaysStop {
        fn choose(&mut self, _: &EnvState, _: &[f64], _: usize, _: SymbolId, _: &mut ChaCha8Rng) -> Result<usize> {
            Ok(STOP)
        }
    }

    #[test]
    fn immediate_stop_on_single_symbol_sketch() {
        let tasks = task_registry();
        let mut task = find_task(&tasks, "make plank").unwrap().clone();
        task.sketch = crate::env::Sketch::new(vec![task.sketch.symbols()[0]]).unwrap();
        let r = run_episode(&mut AlwaysStop, &task, 0, 100, 0.9).unwrap();
        assert_eq!(r.transitions.len(), 1);
        assert_eq!(r.total_reward, 0.0);
        assert!(!r.completed);
        assert_eq!(r.subpolicy_boundaries, vec![0]);
    }

    #[test]
    fn oracle_completes_make_plank() {
        let tasks = task_registry();
        let plank = find_task(&tasks, "make plank").unwrap();
        let r = run_episode(&mut Oracle::new(), plank, 5, DEFAULT_STEP_CAP, 0.9).unwrap();
        assert!(r.completed);
        assert_eq!(r.transitions.last().unwrap().reward, 1.0);
        assert_eq!(r.subpolicy_boundaries.len(), 1);
    }

    #[test]
    fn episodes_respect_cap_and_are_reproducible() {
        let tasks = task_registry();
        let fam = family(&tasks, 1);
        for (i, t) in tasks.iter().enumerate() {
            let a = run_family_episode(&fam, t, i as u64, 30, 0.9).unwrap();
            assert!(a.transitions.len() <= 30);
            assert_eq!(a, run_family_episode(&fam, t, i as u64, 30, 0.9).unwrap());
        }
    }

    #[test]
    fn trace_has_one_line_per_transition() {
        let tasks = task_registry();
        let r = run_episode(&mut Oracle::new(), &tasks[0], 2, 100, 0.9).unwrap();
        let trace = r.trace();
        assert_eq!(trace.lines().count(), r.transitions.len());
        assert!(trace.contains("STOP"));
    }
}
