//! Room maze: a 3×3 grid of 5×5 rooms joined by doors.
//!
//! Adjacent rooms are separated by a wall, an open door or a locked door.
//! Doors sit at the middle of each shared wall. Locked doors open when the
//! agent faces them holding a key and presses `use`, which consumes the key.
//! The goal room lies at the end of the path named by the task's sketch; every
//! locked door on that path has a key placed in the room just before it.
//!
//! Observations come from four sensors, one per side of the agent, each
//! reporting the nearest key, closed door and open door on that side of the
//! current room as `1 - (d - 1) / SENSOR_RANGE` (1 when adjacent, 0 when
//! absent), followed by a has-key flag and an on-key flag.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::registry::{Goal, Task};
use super::{Action, Direction, EnvKind, StepOutcome, DEFAULT_STEP_CAP};
use crate::error::{Error, Result};

pub const ROOMS: usize = 3;
pub const ROOM_SIZE: usize = 5;
pub const SIDE: usize = ROOMS * ROOM_SIZE;
pub const SENSOR_RANGE: f64 = 8.0;
pub const MAZE_FEATURE_DIM: usize = 4 * 3 + 2;
const EDGE_COUNT: usize = 2 * ROOMS * (ROOMS - 1);

pub type Pos = (usize, usize);
pub type Room = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Edge {
    Wall,
    Door,
    Locked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MazeState {
    edges: [Edge; EDGE_COUNT],
    keys: Vec<Pos>,
    agent: Pos,
    dir: Direction,
    has_key: bool,
    start_room: Room,
    goal_room: Room,
    steps: usize,
    step_cap: usize,
}

pub fn room_of(pos: Pos) -> Room {
    (pos.0 / ROOM_SIZE, pos.1 / ROOM_SIZE)
}

/// Room reached by leaving `room` through its `dir` wall, if inside the grid.
pub fn neighbor_room(room: Room, dir: Direction) -> Option<Room> {
    let (dx, dy) = dir.delta();
    let x = room.0 as i32 + dx;
    let y = room.1 as i32 + dy;
    if x < 0 || y < 0 || x >= ROOMS as i32 || y >= ROOMS as i32 {
        None
    } else {
        Some((x as usize, y as usize))
    }
}

fn edge_index(room: Room, dir: Direction) -> Option<usize> {
    let (rx, ry) = room;
    let horizontal = ROOMS * (ROOMS - 1);
    match dir {
        Direction::Right if rx + 1 < ROOMS => Some(ry * (ROOMS - 1) + rx),
        Direction::Left if rx > 0 => Some(ry * (ROOMS - 1) + rx - 1),
        Direction::Down if ry + 1 < ROOMS => Some(horizontal + ry * ROOMS + rx),
        Direction::Up if ry > 0 => Some(horizontal + (ry - 1) * ROOMS + rx),
        _ => None,
    }
}

/// Cell inside `room` from which the `dir` door is crossed.
pub fn door_cell(room: Room, dir: Direction) -> Pos {
    let (x0, y0) = (room.0 * ROOM_SIZE, room.1 * ROOM_SIZE);
    let mid = ROOM_SIZE / 2;
    match dir {
        Direction::Up => (x0 + mid, y0),
        Direction::Down => (x0 + mid, y0 + ROOM_SIZE - 1),
        Direction::Left => (x0, y0 + mid),
        Direction::Right => (x0 + ROOM_SIZE - 1, y0 + mid),
    }
}

fn step_pos(pos: Pos, dir: Direction) -> Option<Pos> {
    let (dx, dy) = dir.delta();
    let x = pos.0 as i32 + dx;
    let y = pos.1 as i32 + dy;
    if x < 0 || y < 0 || x >= SIDE as i32 || y >= SIDE as i32 {
        None
    } else {
        Some((x as usize, y as usize))
    }
}

/// Rooms visited when following `path` from `start`, or `None` if the walk
/// leaves the grid or revisits a room.
pub fn walk_rooms(start: Room, path: &[Direction]) -> Option<Vec<Room>> {
    let mut rooms = vec![start];
    for &d in path {
        let next = neighbor_room(*rooms.last().unwrap(), d)?;
        if rooms.contains(&next) {
            return None;
        }
        rooms.push(next);
    }
    Some(rooms)
}

impl MazeState {
    pub fn reset(task: &Task, seed: u64) -> Result<Self> {
        let path = match (&task.goal, task.env) {
            (Goal::Room { path }, EnvKind::Maze) => path.clone(),
            _ => return Err(Error::Config(format!("task `{}` is not a maze task", task.name))),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let starts: Vec<(Room, Vec<Room>)> = (0..ROOMS)
            .flat_map(|y| (0..ROOMS).map(move |x| (x, y)))
            .filter_map(|r| walk_rooms(r, &path).map(|rooms| (r, rooms)))
            .collect();
        let (start_room, rooms) = starts
            .choose(&mut rng)
            .cloned()
            .ok_or_else(|| Error::Config(format!("path of `{}` does not fit the maze", task.name)))?;

        let mut edges = [Edge::Wall; EDGE_COUNT];
        for e in edges.iter_mut() {
            let u: f64 = rng.gen();
            *e = if u < 0.5 {
                Edge::Wall
            } else if u < 0.75 {
                Edge::Door
            } else {
                Edge::Locked
            };
        }
        let agent = (
            start_room.0 * ROOM_SIZE + rng.gen_range(0..ROOM_SIZE),
            start_room.1 * ROOM_SIZE + rng.gen_range(0..ROOM_SIZE),
        );
        let mut keys = Vec::new();
        for (room, &d) in rooms.iter().zip(&path) {
            let idx = edge_index(*room, d).expect("walk stays inside the grid");
            edges[idx] = if rng.gen_bool(0.5) { Edge::Door } else { Edge::Locked };
            if edges[idx] == Edge::Locked {
                loop {
                    let key = (
                        room.0 * ROOM_SIZE + rng.gen_range(0..ROOM_SIZE),
                        room.1 * ROOM_SIZE + rng.gen_range(0..ROOM_SIZE),
                    );
                    if key != agent {
                        keys.push(key);
                        break;
                    }
                }
            }
        }
        let dir = Direction::ALL[rng.gen_range(0..4)];
        Ok(Self {
            edges,
            keys,
            agent,
            dir,
            has_key: false,
            start_room,
            goal_room: *rooms.last().unwrap(),
            steps: 0,
            step_cap: DEFAULT_STEP_CAP,
        })
    }

    /// Builds a state from explicit parts; edges default to walls.
    pub fn from_parts(agent: Pos, dir: Direction, goal_room: Room) -> Self {
        Self {
            edges: [Edge::Wall; EDGE_COUNT],
            keys: Vec::new(),
            agent,
            dir,
            has_key: false,
            start_room: room_of(agent),
            goal_room,
            steps: 0,
            step_cap: DEFAULT_STEP_CAP,
        }
    }

    pub fn with_step_cap(mut self, cap: usize) -> Self {
        self.step_cap = cap;
        self
    }

    pub fn set_edge(&mut self, room: Room, dir: Direction, edge: Edge) -> Result<()> {
        let idx = edge_index(room, dir).ok_or_else(|| Error::Config("no edge on the outer wall".into()))?;
        self.edges[idx] = edge;
        Ok(())
    }

    pub fn edge(&self, room: Room, dir: Direction) -> Option<Edge> {
        edge_index(room, dir).map(|i| self.edges[i])
    }

    pub fn add_key(&mut self, pos: Pos) {
        self.keys.push(pos);
    }

    pub fn keys(&self) -> &[Pos] {
        &self.keys
    }

    pub fn agent(&self) -> Pos {
        self.agent
    }

    pub fn dir(&self) -> Direction {
        self.dir
    }

    pub fn has_key(&self) -> bool {
        self.has_key
    }

    pub fn set_has_key(&mut self, has_key: bool) {
        self.has_key = has_key;
    }

    pub fn start_room(&self) -> Room {
        self.start_room
    }

    pub fn goal_room(&self) -> Room {
        self.goal_room
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Where a move in `dir` from `pos` lands; `None` when blocked.
    pub fn move_target(&self, pos: Pos, dir: Direction) -> Option<Pos> {
        let next = step_pos(pos, dir)?;
        let room = room_of(pos);
        if room_of(next) == room {
            return Some(next);
        }
        (pos == door_cell(room, dir) && self.edge(room, dir) == Some(Edge::Door)).then_some(next)
    }

    pub fn step(&mut self, action: Action) -> StepOutcome {
        let mut reward = 0.0;
        match action.direction() {
            Some(dir) => {
                self.dir = dir;
                if let Some(next) = self.move_target(self.agent, dir) {
                    self.agent = next;
                    if room_of(next) == self.goal_room {
                        reward = 1.0;
                    }
                }
            }
            None => {
                if let Some(i) = self.keys.iter().position(|&k| k == self.agent) {
                    self.keys.remove(i);
                    self.has_key = true;
                } else if self.has_key {
                    let room = room_of(self.agent);
                    if self.agent == door_cell(room, self.dir) && self.edge(room, self.dir) == Some(Edge::Locked) {
                        let idx = edge_index(room, self.dir).unwrap();
                        self.edges[idx] = Edge::Door;
                        self.has_key = false;
                    }
                }
            }
        }
        self.steps += 1;
        StepOutcome { reward, done: reward > 0.0 || self.steps >= self.step_cap }
    }

    pub fn features(&self) -> Vec<f64> {
        let mut f = vec![0.0; MAZE_FEATURE_DIM];
        let room = room_of(self.agent);
        let (ax, ay) = (self.agent.0 as i32, self.agent.1 as i32);
        let reading = |d: i32| 1.0 - (d as f64 - 1.0) / SENSOR_RANGE;
        for side in Direction::ALL {
            let base = side.index() * 3;
            let nearest_key = self
                .keys
                .iter()
                .filter(|&&k| room_of(k) == room && k != self.agent)
                .filter_map(|&(kx, ky)| {
                    let (dx, dy) = (kx as i32 - ax, ky as i32 - ay);
                    let in_sector = match side {
                        Direction::Up => dy < 0 && dx.abs() <= -dy,
                        Direction::Down => dy > 0 && dx.abs() <= dy,
                        Direction::Left => dx < 0 && dy.abs() <= -dx,
                        Direction::Right => dx > 0 && dy.abs() <= dx,
                    };
                    in_sector.then_some(dx.abs() + dy.abs())
                })
                .min();
            if let Some(d) = nearest_key {
                f[base] = reading(d);
            }
            if let Some(edge) = self.edge(room, side) {
                let (cx, cy) = door_cell(room, side);
                let (ddx, ddy) = side.delta();
                let d = (cx as i32 + ddx - ax).abs() + (cy as i32 + ddy - ay).abs();
                match edge {
                    Edge::Locked => f[base + 1] = reading(d),
                    Edge::Door => f[base + 2] = reading(d),
                    Edge::Wall => {}
                }
            }
        }
        f[12] = if self.has_key { 1.0 } else { 0.0 };
        f[13] = if self.keys.contains(&self.agent) { 1.0 } else { 0.0 };
        f
    }

    pub fn render(&self) -> String {
        // Each room is drawn as a 5×5 block with one-character walls between rooms.
        let size = ROOMS * (ROOM_SIZE + 1) + 1;
        let mut canvas = vec![vec!['#'; size]; size];
        for y in 0..SIDE {
            for x in 0..SIDE {
                let cx = x + x / ROOM_SIZE + 1;
                let cy = y + y / ROOM_SIZE + 1;
                canvas[cy][cx] = if (x, y) == self.agent {
                    match self.dir {
                        Direction::Up => '^',
                        Direction::Down => 'v',
                        Direction::Left => '<',
                        Direction::Right => '>',
                    }
                } else if self.keys.contains(&(x, y)) {
                    'k'
                } else if room_of((x, y)) == self.goal_room {
                    ','
                } else {
                    '.'
                };
            }
        }
        for ry in 0..ROOMS {
            for rx in 0..ROOMS {
                for dir in [Direction::Right, Direction::Down] {
                    let Some(edge) = self.edge((rx, ry), dir) else { continue };
                    let (x, y) = door_cell((rx, ry), dir);
                    let (dx, dy) = dir.delta();
                    let cx = (x + x / ROOM_SIZE + 1) as i32 + dx;
                    let cy = (y + y / ROOM_SIZE + 1) as i32 + dy;
                    canvas[cy as usize][cx as usize] = match edge {
                        Edge::Wall => '#',
                        Edge::Door => '/',
                        Edge::Locked => '+',
                    };
                }
            }
        }
        let mut out: String = canvas.into_iter().map(|row| row.into_iter().collect::<String>() + "\n").collect();
        out.push_str(&format!("has_key {} goal room {:?}\n", self.has_key, self.goal_room));
        out
    }
}
