//! Crafting world: a 10×10 grid of raw materials and crafting stations.
//!
//! The agent collects materials by facing them and pressing `use`, and turns
//! inventory into new items by using a station. Gold sits in a corner sealed
//! by water (crossed by using a bridge on it) and gems sit in a corner sealed
//! by stone (broken by using an axe on it).
//!
//! Observations concatenate a 5×5 window centred on the agent (one-hot over
//! the non-empty cell kinds; cells off the map read as boundary), inventory
//! counts divided by [`INVENTORY_CAP`] and clipped to 1, and the one-hot
//! heading.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::registry::{Goal, Task};
use super::{Action, Direction, EnvKind, StepOutcome, DEFAULT_STEP_CAP};
use crate::error::{Error, Result};

pub const WIDTH: usize = 10;
pub const HEIGHT: usize = 10;
pub const WINDOW: usize = 5;
pub const INVENTORY_CAP: f64 = 2.0;

/// Number of non-empty cell kinds encoded in the observation window.
pub const CELL_KINDS: usize = 11;
pub const CRAFT_FEATURE_DIM: usize = WINDOW * WINDOW * CELL_KINDS + Item::COUNT + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Empty,
    Boundary,
    Water,
    Stone,
    Wood,
    Grass,
    Iron,
    Gold,
    Gem,
    Toolshed,
    Workbench,
    Factory,
}

impl Cell {
    /// Position in the one-hot window encoding; `None` for empty cells.
    pub fn feature_slot(self) -> Option<usize> {
        match self {
            Cell::Empty => None,
            other => Some(other as usize - 1),
        }
    }

    pub fn raw_material(self) -> Option<Item> {
        match self {
            Cell::Wood => Some(Item::Wood),
            Cell::Grass => Some(Item::Grass),
            Cell::Iron => Some(Item::Iron),
            Cell::Gold => Some(Item::Gold),
            Cell::Gem => Some(Item::Gem),
            _ => None,
        }
    }

    pub fn is_station(self) -> bool {
        matches!(self, Cell::Toolshed | Cell::Workbench | Cell::Factory)
    }

    fn glyph(self) -> char {
        match self {
            Cell::Empty => '.',
            Cell::Boundary => '#',
            Cell::Water => '~',
            Cell::Stone => 'O',
            Cell::Wood => 'w',
            Cell::Grass => 'g',
            Cell::Iron => 'i',
            Cell::Gold => '$',
            Cell::Gem => '*',
            Cell::Toolshed => 'T',
            Cell::Workbench => 'B',
            Cell::Factory => 'F',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Item {
    Wood,
    Grass,
    Iron,
    Gold,
    Gem,
    Plank,
    Stick,
    Cloth,
    Rope,
    Bridge,
    Bed,
    Axe,
    Shears,
}

impl Item {
    pub const COUNT: usize = 13;
    pub const ALL: [Item; 13] = [
        Item::Wood,
        Item::Grass,
        Item::Iron,
        Item::Gold,
        Item::Gem,
        Item::Plank,
        Item::Stick,
        Item::Cloth,
        Item::Rope,
        Item::Bridge,
        Item::Bed,
        Item::Axe,
        Item::Shears,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Item::Wood => "wood",
            Item::Grass => "grass",
            Item::Iron => "iron",
            Item::Gold => "gold",
            Item::Gem => "gem",
            Item::Plank => "plank",
            Item::Stick => "stick",
            Item::Cloth => "cloth",
            Item::Rope => "rope",
            Item::Bridge => "bridge",
            Item::Bed => "bed",
            Item::Axe => "axe",
            Item::Shears => "shears",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Recipe {
    pub output: Item,
    pub station: Cell,
    pub inputs: &'static [Item],
}

/// Recipes in priority order for breaking ties between equally specific matches.
pub const RECIPES: [Recipe; 8] = [
    Recipe { output: Item::Plank, station: Cell::Toolshed, inputs: &[Item::Wood] },
    Recipe { output: Item::Stick, station: Cell::Workbench, inputs: &[Item::Wood] },
    Recipe { output: Item::Cloth, station: Cell::Factory, inputs: &[Item::Grass] },
    Recipe { output: Item::Rope, station: Cell::Toolshed, inputs: &[Item::Grass] },
    Recipe { output: Item::Bridge, station: Cell::Factory, inputs: &[Item::Wood, Item::Iron] },
    Recipe { output: Item::Bed, station: Cell::Workbench, inputs: &[Item::Plank, Item::Grass] },
    Recipe { output: Item::Axe, station: Cell::Toolshed, inputs: &[Item::Stick, Item::Iron] },
    Recipe { output: Item::Shears, station: Cell::Workbench, inputs: &[Item::Stick, Item::Iron] },
];

/// Number of each placed object per layout.
const LAYOUT: [(Cell, usize); 6] = [
    (Cell::Wood, 3),
    (Cell::Grass, 3),
    (Cell::Iron, 3),
    (Cell::Toolshed, 2),
    (Cell::Workbench, 2),
    (Cell::Factory, 2),
];

pub type Pos = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct CraftState {
    grid: Vec<Cell>,
    agent: Pos,
    dir: Direction,
    inventory: [u32; Item::COUNT],
    steps: usize,
    goal: Item,
    step_cap: usize,
}

pub fn offset(pos: Pos, dir: Direction) -> Option<Pos> {
    let (dx, dy) = dir.delta();
    let x = pos.0 as i32 + dx;
    let y = pos.1 as i32 + dy;
    if x < 0 || y < 0 || x >= WIDTH as i32 || y >= HEIGHT as i32 {
        None
    } else {
        Some((x as usize, y as usize))
    }
}

impl CraftState {
    /// Samples a solvable layout for `task`. Deterministic in `seed`.
    pub fn reset(task: &Task, seed: u64) -> Result<Self> {
        let goal = match (&task.goal, task.env) {
            (Goal::Item(item), EnvKind::Craft) => *item,
            _ => {
                return Err(Error::Config(format!("task `{}` is not a crafting task", task.name)));
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let state = Self::generate(goal, &mut rng);
            if state.is_solvable_layout() {
                return Ok(state);
            }
        }
    }

    fn generate(goal: Item, rng: &mut ChaCha8Rng) -> Self {
        let mut grid = vec![Cell::Empty; WIDTH * HEIGHT];
        for y in 0..HEIGHT {
            for x in 0..WIDTH {
                if x == 0 || y == 0 || x == WIDTH - 1 || y == HEIGHT - 1 {
                    grid[y * WIDTH + x] = Cell::Boundary;
                }
            }
        }
        let mut corners = [(1, 1), (WIDTH - 2, 1), (1, HEIGHT - 2), (WIDTH - 2, HEIGHT - 2)];
        corners.shuffle(rng);
        for (corner, (treasure, seal)) in corners.iter().zip([(Cell::Gold, Cell::Water), (Cell::Gem, Cell::Stone)]) {
            grid[corner.1 * WIDTH + corner.0] = treasure;
            for d in Direction::ALL {
                if let Some((x, y)) = offset(*corner, d) {
                    if grid[y * WIDTH + x] == Cell::Empty {
                        grid[y * WIDTH + x] = seal;
                    }
                }
            }
        }
        let mut free: Vec<Pos> = (0..HEIGHT)
            .flat_map(|y| (0..WIDTH).map(move |x| (x, y)))
            .filter(|&(x, y)| grid[y * WIDTH + x] == Cell::Empty)
            .collect();
        free.shuffle(rng);
        let mut free = free.into_iter();
        for (kind, count) in LAYOUT {
            for _ in 0..count {
                let (x, y) = free.next().expect("grid has room for every object");
                grid[y * WIDTH + x] = kind;
            }
        }
        let agent = free.next().expect("grid has room for the agent");
        let dir = Direction::ALL[rng.gen_range(0..4)];
        Self {
            grid,
            agent,
            dir,
            inventory: [0; Item::COUNT],
            steps: 0,
            goal,
            step_cap: DEFAULT_STEP_CAP,
        }
    }

    /// Every object outside the sealed corners touches the agent's region.
    fn is_solvable_layout(&self) -> bool {
        let reachable = self.reachable_from_agent();
        (0..HEIGHT).flat_map(|y| (0..WIDTH).map(move |x| (x, y))).all(|p| {
            let c = self.cell(p);
            if matches!(c, Cell::Empty | Cell::Boundary | Cell::Gold | Cell::Gem) {
                return true;
            }
            Direction::ALL
                .iter()
                .any(|&d| offset(p, d).is_some_and(|q| reachable[q.1 * WIDTH + q.0]))
        })
    }

    /// Cells reachable by walking from the agent over empty cells.
    pub fn reachable_from_agent(&self) -> Vec<bool> {
        let mut seen = vec![false; WIDTH * HEIGHT];
        let mut queue = VecDeque::from([self.agent]);
        seen[self.agent.1 * WIDTH + self.agent.0] = true;
        while let Some(p) = queue.pop_front() {
            for d in Direction::ALL {
                if let Some(q) = offset(p, d) {
                    let i = q.1 * WIDTH + q.0;
                    if !seen[i] && self.grid[i] == Cell::Empty {
                        seen[i] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        seen
    }

    pub fn with_step_cap(mut self, cap: usize) -> Self {
        self.step_cap = cap;
        self
    }

    /// Builds a state from an explicit grid; used for fixtures and tests.
    pub fn from_parts(grid: Vec<Cell>, agent: Pos, dir: Direction, goal: Item) -> Result<Self> {
        if grid.len() != WIDTH * HEIGHT {
            return Err(Error::DimensionMismatch { context: "craft grid", expected: WIDTH * HEIGHT, got: grid.len() });
        }
        if grid[agent.1 * WIDTH + agent.0] != Cell::Empty {
            return Err(Error::Config("agent must start on an empty cell".into()));
        }
        Ok(Self { grid, agent, dir, inventory: [0; Item::COUNT], steps: 0, goal, step_cap: DEFAULT_STEP_CAP })
    }

    pub fn cell(&self, pos: Pos) -> Cell {
        self.grid[pos.1 * WIDTH + pos.0]
    }

    pub fn set_cell(&mut self, pos: Pos, cell: Cell) {
        self.grid[pos.1 * WIDTH + pos.0] = cell;
    }

    pub fn grid(&self) -> &[Cell] {
        &self.grid
    }

    pub fn agent(&self) -> Pos {
        self.agent
    }

    pub fn dir(&self) -> Direction {
        self.dir
    }

    pub fn goal(&self) -> Item {
        self.goal
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn count(&self, item: Item) -> u32 {
        self.inventory[item.index()]
    }

    pub fn inventory(&self) -> &[u32; Item::COUNT] {
        &self.inventory
    }

    pub fn set_count(&mut self, item: Item, n: u32) {
        self.inventory[item.index()] = n;
    }

    pub fn facing(&self) -> Option<Pos> {
        offset(self.agent, self.dir)
    }

    pub fn step(&mut self, action: Action) -> StepOutcome {
        let before = self.count(self.goal);
        match action.direction() {
            Some(dir) => {
                self.dir = dir;
                if let Some(next) = offset(self.agent, dir) {
                    if self.cell(next) == Cell::Empty {
                        self.agent = next;
                    }
                }
            }
            None => self.use_faced_cell(),
        }
        self.steps += 1;
        let achieved = self.count(self.goal) > before;
        StepOutcome {
            reward: if achieved { 1.0 } else { 0.0 },
            done: achieved || self.steps >= self.step_cap,
        }
    }

    fn use_faced_cell(&mut self) {
        let Some(target) = self.facing() else { return };
        let cell = self.cell(target);
        if let Some(item) = cell.raw_material() {
            self.inventory[item.index()] += 1;
            self.set_cell(target, Cell::Empty);
        } else if cell.is_station() {
            if let Some(recipe) = self.matching_recipe(cell) {
                for input in recipe.inputs {
                    self.inventory[input.index()] -= 1;
                }
                self.inventory[recipe.output.index()] += 1;
            }
        } else if cell == Cell::Water && self.count(Item::Bridge) > 0 {
            self.inventory[Item::Bridge.index()] -= 1;
            self.set_cell(target, Cell::Empty);
        } else if cell == Cell::Stone && self.count(Item::Axe) > 0 {
            self.set_cell(target, Cell::Empty);
        }
    }

    /// The applicable recipe with the most inputs; ties go to the earlier recipe.
    pub fn matching_recipe(&self, station: Cell) -> Option<&'static Recipe> {
        let mut best: Option<&'static Recipe> = None;
        for r in RECIPES.iter().filter(|r| r.station == station) {
            if r.inputs.iter().all(|i| self.count(*i) > 0)
                && best.is_none_or(|b| r.inputs.len() > b.inputs.len())
            {
                best = Some(r);
            }
        }
        best
    }

    pub fn features(&self) -> Vec<f64> {
        let mut f = vec![0.0; CRAFT_FEATURE_DIM];
        let half = (WINDOW / 2) as i32;
        for wy in 0..WINDOW as i32 {
            for wx in 0..WINDOW as i32 {
                let x = self.agent.0 as i32 + wx - half;
                let y = self.agent.1 as i32 + wy - half;
                let cell = if x < 0 || y < 0 || x >= WIDTH as i32 || y >= HEIGHT as i32 {
                    Cell::Boundary
                } else {
                    self.cell((x as usize, y as usize))
                };
                if let Some(slot) = cell.feature_slot() {
                    f[((wy as usize) * WINDOW + wx as usize) * CELL_KINDS + slot] = 1.0;
                }
            }
        }
        let inv = WINDOW * WINDOW * CELL_KINDS;
        for (i, &n) in self.inventory.iter().enumerate() {
            f[inv + i] = (n as f64 / INVENTORY_CAP).min(1.0);
        }
        f[inv + Item::COUNT + self.dir.index()] = 1.0;
        f
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for y in 0..HEIGHT {
            for x in 0..WIDTH {
                let c = if (x, y) == self.agent {
                    match self.dir {
                        Direction::Up => '^',
                        Direction::Down => 'v',
                        Direction::Left => '<',
                        Direction::Right => '>',
                    }
                } else {
                    self.cell((x, y)).glyph()
                };
                out.push(c);
            }
            out.push('\n');
        }
        let held: Vec<String> = Item::ALL
            .iter()
            .filter(|i| self.count(**i) > 0)
            .map(|i| format!("{}:{}", i.name(), self.count(*i)))
            .collect();
        out.push_str(&format!("inventory {{{}}} goal {}\n", held.join(", "), self.goal.name()));
        out
    }
}
