//! 9×9 pit mazes with sparse terminal rewards.
//!
//! Rows grow downward, so `Action::Up` decreases the row index. Mazes are
//! immutable once generated; [`step`] is a pure function of its inputs.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

pub const SIZE: usize = 9;
pub const CELLS: usize = SIZE * SIZE;
pub const MAX_STEPS: usize = 100;
pub const GOAL_REWARD: f64 = 100.0;
pub const PIT_REWARD: f64 = -100.0;
pub const GENERATION_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Empty,
    Pit,
    Start,
    Goal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    fn index(self) -> usize {
        self.row * SIZE + self.col
    }

    /// Neighbor in direction `a`, or `self` when that would leave the grid.
    pub fn moved(self, a: Action) -> Pos {
        let Pos { row, col } = self;
        match a {
            Action::Up if row > 0 => Pos::new(row - 1, col),
            Action::Down if row + 1 < SIZE => Pos::new(row + 1, col),
            Action::Left if col > 0 => Pos::new(row, col - 1),
            Action::Right if col + 1 < SIZE => Pos::new(row, col + 1),
            _ => self,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl TryFrom<usize> for Action {
    type Error = Error;

    fn try_from(i: usize) -> Result<Self> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Contract(format!("action index {i} out of range 0..4")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Goal,
    Pit,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub agent: Pos,
    pub steps: usize,
    pub terminal: Option<Termination>,
}

impl EpisodeState {
    pub fn is_terminal(&self) -> bool {
        self.terminal.is_some()
    }
}

/// Number of pits for a difficulty level.
pub fn pits_for_level(level: u8) -> Result<usize> {
    match level {
        1 => Ok(7),
        2 => Ok(10),
        3 => Ok(13),
        _ => Err(Error::Config(format!("maze level must be 1, 2 or 3, got {level}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MazeInstance {
    grid: Vec<Cell>,
    level: u8,
    start: Pos,
    goal: Pos,
}

impl MazeInstance {
    /// Builds a maze from explicit pit positions, enforcing every invariant
    /// except the level-specific pit count.
    pub fn from_parts(level: u8, start: Pos, goal: Pos, pits: &[Pos]) -> Result<Self> {
        let in_grid = |p: Pos| p.row < SIZE && p.col < SIZE;
        if !in_grid(start) || !in_grid(goal) || pits.iter().any(|&p| !in_grid(p)) {
            return Err(Error::Contract("maze coordinates outside the 9x9 grid".into()));
        }
        if start == goal {
            return Err(Error::Contract("start and goal coincide".into()));
        }
        let mut grid = vec![Cell::Empty; CELLS];
        for &p in pits {
            if p == start || p == goal {
                return Err(Error::Contract(format!("pit placed on start or goal at {p:?}")));
            }
            grid[p.index()] = Cell::Pit;
        }
        grid[start.index()] = Cell::Start;
        grid[goal.index()] = Cell::Goal;
        let maze = Self {
            grid,
            level,
            start,
            goal,
        };
        if maze.shortest_path_len().is_none() {
            return Err(Error::Contract("goal unreachable from start".into()));
        }
        Ok(maze)
    }

    pub fn cell(&self, p: Pos) -> Cell {
        self.grid[p.index()]
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn start(&self) -> Pos {
        self.start
    }

    pub fn goal(&self) -> Pos {
        self.goal
    }

    pub fn pit_count(&self) -> usize {
        self.grid.iter().filter(|&&c| c == Cell::Pit).count()
    }

    pub fn initial_state(&self) -> EpisodeState {
        EpisodeState {
            agent: self.start,
            steps: 0,
            terminal: None,
        }
    }

    /// Pit-free BFS distance to the goal for every cell; `None` for pits and
    /// cells that cannot reach it.
    pub fn distances_to_goal(&self) -> Vec<Option<usize>> {
        let mut dist = vec![None; CELLS];
        dist[self.goal.index()] = Some(0);
        let mut queue = VecDeque::from([self.goal]);
        while let Some(p) = queue.pop_front() {
            let d = dist[p.index()].unwrap_or(0);
            for a in Action::ALL {
                let q = p.moved(a);
                if self.cell(q) != Cell::Pit && dist[q.index()].is_none() {
                    dist[q.index()] = Some(d + 1);
                    queue.push_back(q);
                }
            }
        }
        dist
    }

    pub fn shortest_path_len(&self) -> Option<usize> {
        self.distances_to_goal()[self.start.index()]
    }

    pub fn render(&self, state: Option<&EpisodeState>) -> String {
        let mut out = String::with_capacity(CELLS + SIZE);
        for row in 0..SIZE {
            for col in 0..SIZE {
                let p = Pos::new(row, col);
                let ch = if state.is_some_and(|s| s.agent == p) {
                    'A'
                } else {
                    match self.cell(p) {
                        Cell::Empty => '.',
                        Cell::Pit => 'P',
                        Cell::Start => 'S',
                        Cell::Goal => 'G',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for MazeInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(None))
    }
}

/// Start in column 0 and goal in column 8 on uniform rows, pits uniform on
/// the remaining cells, resampled until the goal is reachable.
pub fn generate_maze(level: u8, seed: u64) -> Result<MazeInstance> {
    generate_maze_with(level, &mut stream(seed, Stream::Maze))
}

pub fn generate_maze_with<R: Rng>(level: u8, rng: &mut R) -> Result<MazeInstance> {
    let pits = pits_for_level(level)?;
    for _ in 0..GENERATION_ATTEMPTS {
        let start = Pos::new(rng.gen_range(0..SIZE), 0);
        let goal = Pos::new(rng.gen_range(0..SIZE), SIZE - 1);
        let free: Vec<Pos> = (0..CELLS)
            .map(|i| Pos::new(i / SIZE, i % SIZE))
            .filter(|&p| p != start && p != goal)
            .collect();
        let chosen: Vec<Pos> = sample(rng, free.len(), pits).iter().map(|i| free[i]).collect();
        match MazeInstance::from_parts(level, start, goal, &chosen) {
            Ok(m) => return Ok(m),
            Err(Error::Contract(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::BudgetExhausted {
        attempts: GENERATION_ATTEMPTS,
        what: format!("generating a solvable level-{level} maze"),
    })
}

/// Advances one step. Off-grid moves leave the agent in place.
pub fn step(maze: &MazeInstance, state: &EpisodeState, a: Action) -> Result<(EpisodeState, f64)> {
    if state.is_terminal() {
        return Err(Error::Contract("step called on a terminal episode state".into()));
    }
    let agent = state.agent.moved(a);
    let steps = state.steps + 1;
    let (terminal, reward) = match maze.cell(agent) {
        Cell::Goal => (Some(Termination::Goal), GOAL_REWARD),
        Cell::Pit => (Some(Termination::Pit), PIT_REWARD),
        _ if steps >= MAX_STEPS => (Some(Termination::Timeout), 0.0),
        _ => (None, 0.0),
    };
    Ok((EpisodeState { agent, steps, terminal }, reward))
}

/// `(col, row)` of the agent.
pub fn encode_coordinates(state: &EpisodeState) -> [f64; 2] {
    [state.agent.col as f64, state.agent.row as f64]
}

pub const CODE_EMPTY: f64 = 0.0;
pub const CODE_PIT: f64 = 1.0;
pub const CODE_GOAL: f64 = 2.0;
pub const CODE_START: f64 = 3.0;
pub const CODE_AGENT: f64 = 4.0;

/// Row-major category codes; the agent overrides whatever it stands on.
pub fn encode_matrix(maze: &MazeInstance, state: &EpisodeState) -> Vec<f64> {
    let mut out: Vec<f64> = maze
        .grid
        .iter()
        .map(|c| match c {
            Cell::Empty => CODE_EMPTY,
            Cell::Pit => CODE_PIT,
            Cell::Goal => CODE_GOAL,
            Cell::Start => CODE_START,
        })
        .collect();
    out[state.agent.index()] = CODE_AGENT;
    out
}

/// Greedy descent on the BFS distance field, ties to the lowest action.
#[derive(Debug, Clone)]
pub struct BfsPolicy {
    dist: Vec<Option<usize>>,
}

impl BfsPolicy {
    pub fn new(maze: &MazeInstance) -> Self {
        Self {
            dist: maze.distances_to_goal(),
        }
    }

    pub fn action(&self, p: Pos) -> Action {
        Action::ALL
            .into_iter()
            .min_by_key(|&a| self.dist[p.moved(a).index()].unwrap_or(usize::MAX))
            .unwrap_or(Action::Up)
    }
}

/// Plays one episode with `policy`, returning the final state and return.
pub fn rollout(maze: &MazeInstance, mut policy: impl FnMut(&EpisodeState) -> Action) -> Result<(EpisodeState, f64)> {
    let mut state = maze.initial_state();
    let mut ret = 0.0;
    while !state.is_terminal() {
        let (next, r) = step(maze, &state, policy(&state))?;
        state = next;
        ret += r;
    }
    Ok((state, ret))
}
