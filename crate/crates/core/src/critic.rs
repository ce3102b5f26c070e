//! Linear state-value baselines, one per task, plus the ablated variants.

use std::collections::BTreeMap;

use crate::env::{Task, TaskId};
use crate::error::{Error, Result};
use crate::nn::{GradientBundle, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CriticVariant {
    /// One scalar shared by every task.
    Constant,
    /// One linear function of the state shared by every task.
    StateOnly,
    /// One scalar per task.
    TaskOnly,
    /// One linear function of the state per task.
    StateAndTask,
}

impl CriticVariant {
    pub const ALL: [CriticVariant; 4] = [
        CriticVariant::Constant,
        CriticVariant::StateOnly,
        CriticVariant::TaskOnly,
        CriticVariant::StateAndTask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CriticVariant::Constant => "constant",
            CriticVariant::StateOnly => "state_only",
            CriticVariant::TaskOnly => "task_only",
            CriticVariant::StateAndTask => "state_and_task",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown critic variant `{name}`")))
    }

    fn per_task(self) -> bool {
        matches!(self, CriticVariant::TaskOnly | CriticVariant::StateAndTask)
    }

    fn uses_state(self) -> bool {
        matches!(self, CriticVariant::StateOnly | CriticVariant::StateAndTask)
    }
}

/// `w · features + bias`; `w` is empty for state-independent variants.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBlock {
    pub weights: Vec<f64>,
    pub bias: [f64; 1],
}

impl LinearBlock {
    fn zeros(dim: usize) -> Self {
        Self { weights: vec![0.0; dim], bias: [0.0] }
    }

    fn value(&self, features: &[f64]) -> f64 {
        self.bias[0] + self.weights.iter().zip(features).map(|(w, x)| w * x).sum::<f64>()
    }
}

impl Parameters for LinearBlock {
    fn arrays(&self) -> Vec<&[f64]> {
        vec![&self.weights, &self.bias]
    }

    fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    variant: CriticVariant,
    blocks: Vec<LinearBlock>,
    block_of: BTreeMap<TaskId, usize>,
}

impl CriticParams {
    /// Zero-initialised critic covering `tasks`.
    pub fn new(variant: CriticVariant, tasks: &[Task]) -> Result<Self> {
        let dims: Vec<(TaskId, usize)> = tasks.iter().map(|t| (t.id, t.env.feature_dim())).collect();
        Self::with_dims(variant, &dims)
    }

    /// Critic over tasks whose feature dimensions are given explicitly.
    pub fn with_dims(variant: CriticVariant, dims: &[(TaskId, usize)]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Config("critic needs at least one task".into()));
        }
        let mut block_of = BTreeMap::new();
        let mut blocks = Vec::new();
        if variant.per_task() {
            for &(id, dim) in dims {
                block_of.insert(id, blocks.len());
                blocks.push(LinearBlock::zeros(if variant.uses_state() { dim } else { 0 }));
            }
        } else {
            let dim = dims[0].1;
            if variant.uses_state() && dims.iter().any(|&(_, d)| d != dim) {
                return Err(Error::Config(
                    "a shared state critic needs tasks with equal feature dimensions".into(),
                ));
            }
            blocks.push(LinearBlock::zeros(if variant.uses_state() { dim } else { 0 }));
            for &(id, _) in dims {
                block_of.insert(id, 0);
            }
        }
        Ok(Self { variant, blocks, block_of })
    }

    pub fn variant(&self) -> CriticVariant {
        self.variant
    }

    pub fn blocks(&self) -> &[LinearBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [LinearBlock] {
        &mut self.blocks
    }

    pub fn block_index(&self, task: TaskId) -> Result<usize> {
        self.block_of
            .get(&task)
            .copied()
            .ok_or_else(|| Error::UnknownTask(format!("task #{}", task.0)))
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.block_of.keys().copied()
    }

    fn check_features(&self, block: usize, features: &[f64]) -> Result<()> {
        let dim = self.blocks[block].weights.len();
        if dim > 0 && features.len() != dim {
            return Err(Error::DimensionMismatch { context: "critic features", expected: dim, got: features.len() });
        }
        Ok(())
    }

    /// `c_τ(features)`.
    pub fn value(&self, task: TaskId, features: &[f64]) -> Result<f64> {
        let b = self.block_index(task)?;
        self.check_features(b, features)?;
        Ok(self.blocks[b].value(features))
    }

    /// Adds `scale · (q - c) · ∇c` into the gradient of the task's block.
    pub fn accumulate_gradient(
        &self,
        task: TaskId,
        features: &[f64],
        q: f64,
        scale: f64,
        grads: &mut [GradientBundle],
    ) -> Result<()> {
        let b = self.block_index(task)?;
        self.check_features(b, features)?;
        let err = scale * (q - self.blocks[b].value(features));
        let g = &mut grads[b];
        for (gw, x) in g.arrays[0].iter_mut().zip(features) {
            *gw += err * x;
        }
        g.arrays[1][0] += err;
        Ok(())
    }

    /// Gradient of `-½ (q - c_τ(features))²`, one bundle per parameter block.
    pub fn gradient(&self, task: TaskId, features: &[f64], q: f64) -> Result<Vec<GradientBundle>> {
        let mut grads = self.zero_gradients();
        self.accumulate_gradient(task, features, q, 1.0, &mut grads)?;
        Ok(grads)
    }

    pub fn zero_gradients(&self) -> Vec<GradientBundle> {
        self.blocks.iter().map(GradientBundle::zeros_like).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> Vec<(TaskId, usize)> {
        vec![(TaskId(0), 3), (TaskId(4), 3)]
    }

    #[test]
    fn zero_weights_give_zero_value() {
        for v in CriticVariant::ALL {
            let c = CriticParams::with_dims(v, &dims()).unwrap();
            assert_eq!(c.value(TaskId(4), &[0.3, 0.2, 0.9]).unwrap(), 0.0);
        }
    }

    #[test]
    fn unknown_task_is_error() {
        let c = CriticParams::with_dims(CriticVariant::StateAndTask, &dims()).unwrap();
        assert!(matches!(c.value(TaskId(1), &[0.0; 3]), Err(Error::UnknownTask(_))));
    }

    #[test]
    fn constant_variant_ignores_task_and_state() {
        let mut c = CriticParams::with_dims(CriticVariant::Constant, &dims()).unwrap();
        c.blocks_mut()[0].bias[0] = 0.25;
        assert_eq!(c.value(TaskId(0), &[1.0, 0.0, 0.0]).unwrap(), 0.25);
        assert_eq!(c.value(TaskId(4), &[0.0, 0.5, 1.0]).unwrap(), 0.25);
        let g = c.gradient(TaskId(0), &[1.0, 1.0, 1.0], 0.75).unwrap();
        assert_eq!(g[0].arrays[1][0], 0.5);
    }

    #[test]
    fn constant_gradient_from_zero() {
        let c = CriticParams::with_dims(CriticVariant::Constant, &dims()).unwrap();
        let g = c.gradient(TaskId(0), &[0.1, 0.1, 0.1], 0.5).unwrap();
        assert_eq!(g[0].arrays[1][0], 0.5);
        assert!(g[0].arrays[0].is_empty());
    }

    #[test]
    fn per_task_weights_are_separate() {
        let mut c = CriticParams::with_dims(CriticVariant::StateAndTask, &dims()).unwrap();
        c.blocks_mut()[0].weights = vec![1.0, 0.0, 0.0];
        c.blocks_mut()[1].weights = vec![0.0, 1.0, 0.0];
        let f = [0.2, 0.7, 0.0];
        assert_ne!(c.value(TaskId(0), &f).unwrap(), c.value(TaskId(4), &f).unwrap());
        c.blocks_mut()[1].weights = vec![1.0, 0.0, 0.0];
        assert_eq!(c.value(TaskId(0), &f).unwrap(), c.value(TaskId(4), &f).unwrap());
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let mut c = CriticParams::with_dims(CriticVariant::StateAndTask, &dims()).unwrap();
        c.blocks_mut()[1].weights = vec![0.5, -0.25, 1.0];
        c.blocks_mut()[1].bias = [0.1];
        let f = [0.4, 0.4, 0.2];
        let q = c.value(TaskId(4), &f).unwrap();
        let g = c.gradient(TaskId(4), &f, q).unwrap();
        assert!(g.iter().all(|b| b.is_zero()));
    }

    #[test]
    fn only_active_task_block_gets_gradient() {
        let c = CriticParams::with_dims(CriticVariant::TaskOnly, &dims()).unwrap();
        let g = c.gradient(TaskId(4), &[0.0; 3], 1.0).unwrap();
        assert!(g[0].is_zero());
        assert_eq!(g[1].arrays[1][0], 1.0);
    }

    #[test]
    fn shared_state_critic_rejects_mixed_dims() {
        let mixed = [(TaskId(0), 3), (TaskId(1), 5)];
        assert!(CriticParams::with_dims(CriticVariant::StateOnly, &mixed).is_err());
        assert!(CriticParams::with_dims(CriticVariant::StateAndTask, &mixed).is_ok());
        assert!(CriticParams::with_dims(CriticVariant::StateAndTask, &[]).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in CriticVariant::ALL {
            assert_eq!(CriticVariant::parse(v.name()).unwrap(), v);
        }
        assert!(CriticVariant::parse("oracle").is_err());
    }
}
