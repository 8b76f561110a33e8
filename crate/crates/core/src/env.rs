//! Episodic gridworld for the sample-based agents.
//!
//! Layouts are plain text, one character per cell:
//!
//! ```text
//! S  start cell (several allowed; episodes start uniformly among them)
//! G  goal cell (terminal, entering it pays the goal reward)
//! #  wall
//! .  free cell
//! ```
//!
//! States index the non-wall cells in row-major order. Actions are
//! `0 = up`, `1 = right`, `2 = down`, `3 = left`; a move into a wall or off
//! the grid leaves the agent in place. With probability `slip` the chosen
//! action is replaced by a uniformly random one. Reaching the horizon also
//! sets the terminal flag of the transition.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;

/// Default layout. The shortest path from `S` to `G` takes 8 moves.
pub const DEFAULT_GRID: &str = "\
#######
#S..#.#
#.#.#.#
#.#...#
#.###.#
#....G#
#######
";

pub const N_ACTIONS: usize = 4;
pub const GOAL_REWARD: f64 = 1.0;
pub const DEFAULT_HORIZON: usize = 200;
pub const DEFAULT_GAMMA: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Free,
    Wall,
    Start,
    Goal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

impl GridLayout {
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.trim().is_empty())
            .collect();
        if rows.is_empty() {
            return Err(Error::Empty);
        }
        let width = rows[0].chars().count();
        let mut cells = Vec::with_capacity(width * rows.len());
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::arg(format!("grid row {} has width {}, expected {width}", r + 1, row.chars().count())));
            }
            for (c, ch) in row.chars().enumerate() {
                cells.push(match ch {
                    '.' => Cell::Free,
                    '#' => Cell::Wall,
                    'S' => Cell::Start,
                    'G' => Cell::Goal,
                    other => {
                        return Err(Error::arg(format!("unknown grid character {other:?} at row {}, column {}", r + 1, c + 1)))
                    }
                });
            }
        }
        let layout = GridLayout {
            width,
            height: rows.len(),
            cells,
        };
        if !layout.cells.contains(&Cell::Start) {
            return Err(Error::arg("grid has no start cell"));
        }
        if !layout.cells.contains(&Cell::Goal) {
            return Err(Error::arg("grid has no goal cell"));
        }
        Ok(layout)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(match self.cell(r, c) {
                    Cell::Free => '.',
                    Cell::Wall => '#',
                    Cell::Start => 'S',
                    Cell::Goal => 'G',
                });
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct ControlEnv {
    layout: GridLayout,
    positions: Vec<(usize, usize)>,
    moves: Vec<[usize; N_ACTIONS]>,
    goal: Vec<bool>,
    starts: Vec<usize>,
    horizon: usize,
    slip: f64,
    elapsed: usize,
}

impl ControlEnv {
    pub fn new(layout: GridLayout, horizon: usize, slip: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::arg("horizon must be positive"));
        }
        if !(0.0..=1.0).contains(&slip) {
            return Err(Error::arg(format!("slip must lie in [0, 1], got {slip}")));
        }
        let mut index = vec![usize::MAX; layout.width * layout.height];
        let mut positions = Vec::new();
        for r in 0..layout.height {
            for c in 0..layout.width {
                if layout.cell(r, c) != Cell::Wall {
                    index[r * layout.width + c] = positions.len();
                    positions.push((r, c));
                }
            }
        }
        let open = |r: isize, c: isize| -> Option<usize> {
            if r < 0 || c < 0 || r as usize >= layout.height || c as usize >= layout.width {
                return None;
            }
            let i = index[r as usize * layout.width + c as usize];
            (i != usize::MAX).then_some(i)
        };
        let deltas = [(-1isize, 0isize), (0, 1), (1, 0), (0, -1)];
        let moves = positions
            .iter()
            .enumerate()
            .map(|(s, &(r, c))| {
                let mut m = [s; N_ACTIONS];
                for (a, (dr, dc)) in deltas.iter().enumerate() {
                    if let Some(t) = open(r as isize + dr, c as isize + dc) {
                        m[a] = t;
                    }
                }
                m
            })
            .collect();
        let goal = positions.iter().map(|&(r, c)| layout.cell(r, c) == Cell::Goal).collect();
        let starts = positions
            .iter()
            .enumerate()
            .filter(|(_, &(r, c))| layout.cell(r, c) == Cell::Start)
            .map(|(s, _)| s)
            .collect();
        Ok(ControlEnv {
            layout,
            positions,
            moves,
            goal,
            starts,
            horizon,
            slip,
            elapsed: 0,
        })
    }

    pub fn default_grid() -> Self {
        ControlEnv::new(GridLayout::parse(DEFAULT_GRID).expect("default grid parses"), DEFAULT_HORIZON, 0.0)
            .expect("default grid is valid")
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn n_states(&self) -> usize {
        self.positions.len()
    }

    pub fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn slip(&self) -> f64 {
        self.slip
    }

    pub fn start_states(&self) -> &[usize] {
        &self.starts
    }

    pub fn position(&self, s: usize) -> (usize, usize) {
        self.positions[s]
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.goal[s]
    }

    pub fn elapsed(&self) -> usize {
        self.elapsed
    }

    /// Deterministic start state for `seed`.
    pub fn reset(&mut self, seed: u64) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.reset_with(&mut rng)
    }

    pub fn reset_with<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        self.elapsed = 0;
        if self.starts.len() == 1 {
            self.starts[0]
        } else {
            self.starts[rng.gen_range(0..self.starts.len())]
        }
    }

    /// Successor distribution of `(state, action)` as `(next, probability)`,
    /// merged over duplicate successors.
    pub fn kernel(&self, state: usize, action: usize) -> Result<Vec<(usize, f64)>> {
        self.check(state, action)?;
        let mut out: Vec<(usize, f64)> = Vec::new();
        let mut add = |t: usize, p: f64| {
            if p == 0.0 {
                return;
            }
            match out.iter_mut().find(|(s, _)| *s == t) {
                Some(e) => e.1 += p,
                None => out.push((t, p)),
            }
        };
        add(self.moves[state][action], 1.0 - self.slip);
        for b in 0..N_ACTIONS {
            add(self.moves[state][b], self.slip / N_ACTIONS as f64);
        }
        Ok(out)
    }

    pub fn reward(&self, next: usize) -> f64 {
        if self.goal[next] {
            GOAL_REWARD
        } else {
            0.0
        }
    }

    /// Advance the running episode by one step from `state`.
    pub fn step<R: Rng + ?Sized>(&mut self, state: usize, action: usize, rng: &mut R) -> Result<Transition> {
        self.check(state, action)?;
        if self.goal[state] {
            return Err(Error::State(format!("state {state} is terminal")));
        }
        if self.elapsed >= self.horizon {
            return Err(Error::State(format!("episode already reached the horizon of {}", self.horizon)));
        }
        let effective = if self.slip > 0.0 && rng.gen::<f64>() < self.slip {
            rng.gen_range(0..N_ACTIONS)
        } else {
            action
        };
        let next = self.moves[state][effective];
        self.elapsed += 1;
        Ok(Transition {
            state,
            action,
            reward: self.reward(next),
            next_state: next,
            terminal: self.goal[next] || self.elapsed >= self.horizon,
        })
    }

    /// Optimal state values by value iteration (goal states are absorbing
    /// with value 0; the horizon is ignored).
    pub fn optimal_values(&self, gamma: f64, tol: f64) -> Vec<f64> {
        let n = self.n_states();
        let kernels: Vec<Vec<Vec<(usize, f64)>>> = (0..n)
            .map(|s| (0..N_ACTIONS).map(|a| self.kernel(s, a).expect("valid indices")).collect())
            .collect();
        let mut v = vec![0.0; n];
        loop {
            let mut delta: f64 = 0.0;
            let mut next = vec![0.0; n];
            for s in 0..n {
                if self.goal[s] {
                    continue;
                }
                let mut best = f64::NEG_INFINITY;
                for ker in &kernels[s] {
                    let q: f64 = ker
                        .iter()
                        .map(|&(t, p)| p * (self.reward(t) + if self.goal[t] { 0.0 } else { gamma * v[t] }))
                        .sum();
                    best = best.max(q);
                }
                next[s] = best;
                delta = delta.max(math::abs(best - v[s]));
            }
            v = next;
            if delta < tol {
                return v;
            }
        }
    }

    /// Mean optimal value over the start distribution.
    pub fn optimal_start_value(&self, gamma: f64) -> f64 {
        let v = self.optimal_values(gamma, 1e-13);
        self.starts.iter().map(|&s| v[s]).sum::<f64>() / self.starts.len() as f64
    }

    fn check(&self, state: usize, action: usize) -> Result<()> {
        if state >= self.n_states() {
            return Err(Error::arg(format!("state {state} out of range (n_states = {})", self.n_states())));
        }
        if action >= N_ACTIONS {
            return Err(Error::arg(format!("action {action} out of range (n_actions = {N_ACTIONS})")));
        }
        Ok(())
    }
}
