//! Seeded gridworlds: the crafting world and the room maze.
//!
//! Both worlds share the low-level action set [`Action`] (four moves plus
//! `use`), hand out a sparse reward of exactly 1 on task completion, and
//! expose observations as fixed-length feature vectors in `[0, 1]`.

pub mod craft;
pub mod maze;
pub mod oracle;
pub mod registry;

use std::fmt;

pub use craft::{CraftState, Item, CRAFT_FEATURE_DIM};
pub use maze::{MazeState, MAZE_FEATURE_DIM};
pub use registry::{task_registry, Goal, Sketch, SymbolId, Task, TaskId, Vocabulary};

use crate::error::Result;

/// Default episode length bound for both worlds.
pub const DEFAULT_STEP_CAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::Up => (0, -1),
            Direction::Down => (0, 1),
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

/// Low-level action set `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Use,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Use];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            Action::Up => Some(Direction::Up),
            Action::Down => Some(Direction::Down),
            Action::Left => Some(Direction::Left),
            Action::Right => Some(Direction::Right),
            Action::Use => None,
        }
    }

    pub fn toward(dir: Direction) -> Self {
        match dir {
            Direction::Up => Action::Up,
            Direction::Down => Action::Down,
            Direction::Left => Action::Left,
            Direction::Right => Action::Right,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Use => "use",
        }
    }
}

/// Index of STOP in the augmented action set `A⁺`.
pub const STOP: usize = Action::COUNT;

/// Name of an index into `A⁺`.
pub fn augmented_action_name(index: usize) -> &'static str {
    match Action::from_index(index) {
        Some(a) => a.name(),
        None if index == STOP => "STOP",
        None => "?",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnvKind {
    Craft,
    Maze,
}

impl EnvKind {
    pub fn feature_dim(self) -> usize {
        match self {
            EnvKind::Craft => CRAFT_FEATURE_DIM,
            EnvKind::Maze => MAZE_FEATURE_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Craft => "craft",
            EnvKind::Maze => "maze",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

/// State of either world.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvState {
    Craft(CraftState),
    Maze(MazeState),
}

impl EnvState {
    pub fn reset(task: &Task, seed: u64) -> Result<Self> {
        match task.env {
            EnvKind::Craft => Ok(EnvState::Craft(CraftState::reset(task, seed)?)),
            EnvKind::Maze => Ok(EnvState::Maze(MazeState::reset(task, seed)?)),
        }
    }

    pub fn step(&mut self, action: Action) -> StepOutcome {
        match self {
            EnvState::Craft(s) => s.step(action),
            EnvState::Maze(s) => s.step(action),
        }
    }

    pub fn features(&self) -> Vec<f64> {
        match self {
            EnvState::Craft(s) => s.features(),
            EnvState::Maze(s) => s.features(),
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            EnvState::Craft(_) => EnvKind::Craft,
            EnvState::Maze(_) => EnvKind::Maze,
        }
    }

    pub fn render(&self) -> String {
        match self {
            EnvState::Craft(s) => s.render(),
            EnvState::Maze(s) => s.render(),
        }
    }
}
