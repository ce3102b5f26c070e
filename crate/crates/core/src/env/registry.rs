//! Task inventory: every crafting and maze task with its sketch.

use std::fmt;

use super::craft::Item;
use super::{Direction, EnvKind};
use crate::error::{Error, Result};

/// Index into the global symbol vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolId(pub usize);

/// Index into [`task_registry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskId(pub usize);

const SYMBOLS: [(&str, EnvKind); 12] = [
    ("get wood", EnvKind::Craft),
    ("get grass", EnvKind::Craft),
    ("get iron", EnvKind::Craft),
    ("use toolshed", EnvKind::Craft),
    ("use workbench", EnvKind::Craft),
    ("use factory", EnvKind::Craft),
    ("use bridge", EnvKind::Craft),
    ("use axe", EnvKind::Craft),
    ("left", EnvKind::Maze),
    ("right", EnvKind::Maze),
    ("up", EnvKind::Maze),
    ("down", EnvKind::Maze),
];

/// The symbol vocabulary shared by all tasks.
#[derive(Debug, Clone, Copy, Default)]
pub struct Vocabulary;

impl Vocabulary {
    pub fn len(&self) -> usize {
        SYMBOLS.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn name(&self, id: SymbolId) -> &'static str {
        SYMBOLS[id.0].0
    }

    pub fn env(&self, id: SymbolId) -> EnvKind {
        SYMBOLS[id.0].1
    }

    pub fn lookup(&self, name: &str) -> Result<SymbolId> {
        SYMBOLS
            .iter()
            .position(|(n, _)| *n == name)
            .map(SymbolId)
            .ok_or_else(|| Error::UnknownSymbol(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = SymbolId> {
        (0..SYMBOLS.len()).map(SymbolId)
    }
}

impl SymbolId {
    pub fn name(self) -> &'static str {
        Vocabulary.name(self)
    }
}

impl fmt::Display for SymbolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sketch(Vec<SymbolId>);

impl Sketch {
    pub fn new(symbols: Vec<SymbolId>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Config("sketch must be nonempty".into()));
        }
        Ok(Self(symbols))
    }

    pub fn parse(names: &[&str]) -> Result<Self> {
        Self::new(names.iter().map(|n| Vocabulary.lookup(n)).collect::<Result<_>>()?)
    }

    pub fn symbols(&self) -> &[SymbolId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Sketch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|s| s.name()).collect();
        write!(f, "{}", names.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Goal {
    /// The task succeeds when this item enters the inventory.
    Item(Item),
    /// The task succeeds on entering the room reached by following `path`.
    Room { path: Vec<Direction> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub id: TaskId,
    pub name: String,
    pub sketch: Sketch,
    pub env: EnvKind,
    pub goal: Goal,
    pub held_out: bool,
}

const CRAFT_TASKS: [(&str, Item, &[&str]); 10] = [
    ("make plank", Item::Plank, &["get wood", "use toolshed"]),
    ("make stick", Item::Stick, &["get wood", "use workbench"]),
    ("make cloth", Item::Cloth, &["get grass", "use factory"]),
    ("make rope", Item::Rope, &["get grass", "use toolshed"]),
    ("make bridge", Item::Bridge, &["get iron", "get wood", "use factory"]),
    ("make bed", Item::Bed, &["get wood", "use toolshed", "get grass", "use workbench"]),
    ("make axe", Item::Axe, &["get wood", "use workbench", "get iron", "use toolshed"]),
    ("make shears", Item::Shears, &["get wood", "use workbench", "get iron", "use workbench"]),
    ("get gold", Item::Gold, &["get iron", "get wood", "use factory", "use bridge"]),
    ("get gem", Item::Gem, &["get wood", "use workbench", "get iron", "use toolshed", "use axe"]),
];

const MAZE_TASKS: [(&str, &[&str]); 10] = [
    ("room 1", &["left", "left"]),
    ("room 2", &["left", "down"]),
    ("room 3", &["right", "down"]),
    ("room 4", &["up", "left"]),
    ("room 5", &["up", "right"]),
    ("room 6", &["up", "right", "up"]),
    ("room 7", &["down", "right", "up"]),
    ("room 8", &["left", "left", "down"]),
    ("room 9", &["right", "down", "down"]),
    ("room 10", &["left", "up", "right"]),
];

const HELD_OUT: [&str; 2] = ["make bed", "make axe"];

fn direction_of(name: &str) -> Direction {
    match name {
        "up" => Direction::Up,
        "down" => Direction::Down,
        "left" => Direction::Left,
        "right" => Direction::Right,
        other => unreachable!("not a maze direction: {other}"),
    }
}

/// All ten crafting tasks followed by all ten maze tasks.
pub fn task_registry() -> Vec<Task> {
    let craft = CRAFT_TASKS.iter().map(|(name, item, sketch)| (name, EnvKind::Craft, Goal::Item(*item), *sketch));
    let maze = MAZE_TASKS.iter().map(|(name, sketch)| {
        let path = sketch.iter().map(|s| direction_of(s)).collect();
        (name, EnvKind::Maze, Goal::Room { path }, *sketch)
    });
    craft
        .chain(maze)
        .enumerate()
        .map(|(i, (name, env, goal, sketch))| Task {
            id: TaskId(i),
            name: name.to_string(),
            sketch: Sketch::parse(sketch).expect("registry sketches use known symbols"),
            env,
            goal,
            held_out: HELD_OUT.contains(name),
        })
        .collect()
}

/// Looks up a registry task by name.
pub fn find_task<'a>(tasks: &'a [Task], name: &str) -> Result<&'a Task> {
    tasks
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::UnknownTask(name.to_string()))
}

/// Text table of the registry (goal, environment, sketch).
pub fn registry_table(tasks: &[Task]) -> String {
    let mut out = format!("{:<12} {:<6} {}\n", "goal", "env", "sketch");
    for t in tasks {
        let star = if t.held_out { "*" } else { "" };
        out.push_str(&format!(
            "{:<12} {:<6} {}\n",
            format!("{}{}", t.name, star),
            t.env,
            t.sketch
        ));
    }
    out
}
