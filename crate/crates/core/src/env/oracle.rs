//! Scripted subpolicies that follow a sketch by planning on the true state.
//!
//! Used to check that generated layouts are solvable and as a reference
//! controller when debugging rollouts.

use std::collections::VecDeque;

use super::craft::{self, Cell, CraftState, Item};
use super::maze::{self, Edge, MazeState};
use super::registry::SymbolId;
use super::{Action, Direction, EnvState, STOP};

#[derive(Debug, Clone, PartialEq)]
enum Snapshot {
    Craft([u32; Item::COUNT]),
    Maze(maze::Room),
}

/// Scripted controller; emits STOP once the active symbol's subgoal is met.
#[derive(Debug, Clone, Default)]
pub struct Oracle {
    position: Option<usize>,
    snapshot: Option<Snapshot>,
}

impl Oracle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Next index into `A⁺` for sketch position `position` labelled `symbol`.
    pub fn act(&mut self, state: &EnvState, position: usize, symbol: SymbolId) -> usize {
        if self.position != Some(position) {
            self.position = Some(position);
            self.snapshot = Some(match state {
                EnvState::Craft(s) => Snapshot::Craft(*s.inventory()),
                EnvState::Maze(s) => Snapshot::Maze(maze::room_of(s.agent())),
            });
        }
        match (state, self.snapshot.as_ref().unwrap()) {
            (EnvState::Craft(s), Snapshot::Craft(inv)) => craft_act(s, inv, symbol.name()),
            (EnvState::Maze(s), Snapshot::Maze(room)) => maze_act(s, *room, symbol.name()),
            _ => unreachable!("environment kind changed within an episode"),
        }
    }
}

fn craft_done(s: &CraftState, start: &[u32; Item::COUNT], symbol: &str) -> bool {
    let gained = |item: Item| s.count(item) > start[item.index()];
    match symbol {
        "get wood" => gained(Item::Wood),
        "get grass" => gained(Item::Grass),
        "get iron" => gained(Item::Iron),
        "use bridge" => gained(Item::Gold),
        "use axe" => gained(Item::Gem),
        _ => s.inventory() != start,
    }
}

fn cells_of(s: &CraftState, kind: Cell) -> Vec<craft::Pos> {
    (0..craft::HEIGHT)
        .flat_map(|y| (0..craft::WIDTH).map(move |x| (x, y)))
        .filter(|&p| s.cell(p) == kind)
        .collect()
}

fn touches_reachable(p: craft::Pos, reachable: &[bool]) -> bool {
    Direction::ALL
        .iter()
        .any(|&d| craft::offset(p, d).is_some_and(|q| reachable[q.1 * craft::WIDTH + q.0]))
}

fn craft_targets(s: &CraftState, symbol: &str) -> Vec<craft::Pos> {
    let sealed = |treasure: Cell, seal: Cell| {
        let reachable = s.reachable_from_agent();
        let open: Vec<_> = cells_of(s, treasure)
            .into_iter()
            .filter(|&p| touches_reachable(p, &reachable))
            .collect();
        if !open.is_empty() {
            return open;
        }
        let treasures = cells_of(s, treasure);
        cells_of(s, seal)
            .into_iter()
            .filter(|&w| {
                Direction::ALL
                    .iter()
                    .any(|&d| craft::offset(w, d).is_some_and(|q| treasures.contains(&q)))
            })
            .collect()
    };
    match symbol {
        "get wood" => cells_of(s, Cell::Wood),
        "get grass" => cells_of(s, Cell::Grass),
        "get iron" => cells_of(s, Cell::Iron),
        "use toolshed" => cells_of(s, Cell::Toolshed),
        "use workbench" => cells_of(s, Cell::Workbench),
        "use factory" => cells_of(s, Cell::Factory),
        "use bridge" => sealed(Cell::Gold, Cell::Water),
        "use axe" => sealed(Cell::Gem, Cell::Stone),
        _ => Vec::new(),
    }
}

fn craft_act(s: &CraftState, start: &[u32; Item::COUNT], symbol: &str) -> usize {
    if craft_done(s, start, symbol) {
        return STOP;
    }
    let targets = craft_targets(s, symbol);
    let is_target = |p: craft::Pos| targets.contains(&p);

    // Adjacent target: face it, then use it.
    for d in Direction::ALL {
        if craft::offset(s.agent(), d).is_some_and(is_target) {
            if s.dir() == d {
                return Action::Use.index();
            }
            if craft::offset(s.agent(), s.dir()).is_some_and(is_target) {
                return Action::Use.index();
            }
            return Action::toward(d).index();
        }
    }

    // Breadth-first search over empty cells for a cell adjacent to a target.
    let idx = |p: craft::Pos| p.1 * craft::WIDTH + p.0;
    let mut first_move: Vec<Option<Direction>> = vec![None; craft::WIDTH * craft::HEIGHT];
    let mut seen = vec![false; craft::WIDTH * craft::HEIGHT];
    seen[idx(s.agent())] = true;
    let mut queue = VecDeque::new();
    for d in Direction::ALL {
        if let Some(q) = craft::offset(s.agent(), d) {
            if s.cell(q) == Cell::Empty && !seen[idx(q)] {
                seen[idx(q)] = true;
                first_move[idx(q)] = Some(d);
                queue.push_back(q);
            }
        }
    }
    while let Some(p) = queue.pop_front() {
        if Direction::ALL.iter().any(|&d| craft::offset(p, d).is_some_and(is_target)) {
            return Action::toward(first_move[idx(p)].unwrap()).index();
        }
        for d in Direction::ALL {
            if let Some(q) = craft::offset(p, d) {
                if s.cell(q) == Cell::Empty && !seen[idx(q)] {
                    seen[idx(q)] = true;
                    first_move[idx(q)] = first_move[idx(p)];
                    queue.push_back(q);
                }
            }
        }
    }
    Action::Use.index()
}

fn maze_act(s: &MazeState, start_room: maze::Room, symbol: &str) -> usize {
    let room = maze::room_of(s.agent());
    if room != start_room {
        return STOP;
    }
    let dir = match symbol {
        "up" => Direction::Up,
        "down" => Direction::Down,
        "left" => Direction::Left,
        "right" => Direction::Right,
        _ => return Action::Use.index(),
    };
    let edge = s.edge(room, dir);
    let goto = |target: maze::Pos| -> Option<usize> {
        let (ax, ay) = s.agent();
        if ax < target.0 {
            Some(Action::Right.index())
        } else if ax > target.0 {
            Some(Action::Left.index())
        } else if ay < target.1 {
            Some(Action::Down.index())
        } else if ay > target.1 {
            Some(Action::Up.index())
        } else {
            None
        }
    };
    if edge == Some(Edge::Locked) && !s.has_key() {
        if let Some(&key) = s.keys().iter().find(|&&k| maze::room_of(k) == room) {
            return goto(key).unwrap_or(Action::Use.index());
        }
    }
    let door = maze::door_cell(room, dir);
    if let Some(a) = goto(door) {
        return a;
    }
    if edge == Some(Edge::Locked) && s.dir() == dir {
        return Action::Use.index();
    }
    Action::toward(dir).index()
}
