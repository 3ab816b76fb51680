//! Grid task: pick up the key, then open the door.
//!
//! The agent only walks. Stepping onto the key cell picks the key up;
//! stepping onto the door cell while holding it opens the door and ends the
//! episode with reward 1. The door cell is passable without the key.
//! Walking into the wall is well formed and leaves the world unchanged at no
//! cost, the way text games answer "nothing happens"; only unparseable
//! output is penalized.
//!
//! Observations give the direction words toward the current target relative
//! to the agent, so one task layout maps each (cell, holding-key) pair to a
//! distinct observation.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EnvConfig, Outcome, World};
use crate::trajectory::Termination;

const INSTRUCTION: &str = "task: take key then open door";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct Cell {
    row: usize,
    col: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(super) struct KeyDoorWorld {
    size: usize,
    agent: Cell,
    key: Cell,
    door: Cell,
    holding_key: bool,
}

pub(super) fn vocab_words() -> Vec<String> {
    [
        "go", "north", "south", "east", "west", "take", "key", "open", "door", "task:", "then",
        "|", "seek", "invalid",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

pub(super) const COMMANDS: [&str; 4] = ["go north", "go south", "go east", "go west"];

const MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, 1), (0, -1)];

fn dist(a: Cell, b: Cell) -> usize {
    a.row.abs_diff(b.row) + a.col.abs_diff(b.col)
}

impl KeyDoorWorld {
    /// Agent, key and door occupy three distinct cells drawn from the seed.
    pub(super) fn new(config: &EnvConfig, task_seed: u64) -> Self {
        let size = config.grid_size;
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
        let cells = sample(&mut rng, size * size, 3);
        let cell = |i: usize| Cell {
            row: i / size,
            col: i % size,
        };
        KeyDoorWorld {
            size,
            agent: cell(cells.index(0)),
            key: cell(cells.index(1)),
            door: cell(cells.index(2)),
            holding_key: false,
        }
    }

    fn target(&self) -> (&'static str, Cell) {
        if self.holding_key {
            ("door", self.door)
        } else {
            ("key", self.key)
        }
    }

    /// The agent never rests on its current target, so at least one
    /// direction word is always present.
    pub(super) fn observe(&self) -> String {
        let (name, target) = self.target();
        let mut words = vec![INSTRUCTION, "|", "seek", name];
        let dr = target.row as isize - self.agent.row as isize;
        let dc = target.col as isize - self.agent.col as isize;
        let vertical = if dr < 0 { "north" } else { "south" };
        let horizontal = if dc < 0 { "west" } else { "east" };
        words.extend(std::iter::repeat(vertical).take(dr.unsigned_abs()));
        words.extend(std::iter::repeat(horizontal).take(dc.unsigned_abs()));
        words.join(" ")
    }

    fn moved(&self, (dr, dc): (isize, isize)) -> Option<Cell> {
        let row = self.agent.row.checked_add_signed(dr)?;
        let col = self.agent.col.checked_add_signed(dc)?;
        (row < self.size && col < self.size).then_some(Cell { row, col })
    }

    /// Moves that stay on the grid.
    pub(super) fn commands(&self) -> Vec<String> {
        COMMANDS
            .iter()
            .zip(MOVES)
            .filter(|(_, mv)| self.moved(*mv).is_some())
            .map(|(c, _)| c.to_string())
            .collect()
    }

    pub(super) fn apply(&self, command: &str) -> Outcome {
        let i = COMMANDS
            .iter()
            .position(|c| *c == command)
            .unwrap_or_else(|| unreachable!("malformed keydoor command {command:?}"));
        let mut next = self.clone();
        let mut terminal = None;
        if let Some(to) = self.moved(MOVES[i]) {
            next.agent = to;
            if to == self.key && !self.holding_key {
                next.holding_key = true;
            } else if to == self.door && self.holding_key {
                terminal = Some(Termination::Success);
            }
        }
        Outcome {
            reward: if terminal.is_some() { 1.0 } else { 0.0 },
            world: World::KeyDoor(next),
            terminal,
        }
    }

    /// Length of the shortest successful command sequence.
    pub(super) fn shortest_solution(&self) -> usize {
        if self.holding_key {
            dist(self.agent, self.door)
        } else {
            dist(self.agent, self.key) + dist(self.key, self.door)
        }
    }

    /// A shortest command script: rows first, then columns, for each leg.
    pub(super) fn optimal_script(&self) -> Vec<String> {
        fn walk(from: Cell, to: Cell, out: &mut Vec<String>) {
            let v = if to.row < from.row { "go north" } else { "go south" };
            let h = if to.col < from.col { "go west" } else { "go east" };
            out.extend(std::iter::repeat(v.to_string()).take(from.row.abs_diff(to.row)));
            out.extend(std::iter::repeat(h.to_string()).take(from.col.abs_diff(to.col)));
        }
        let mut out = Vec::new();
        let mut at = self.agent;
        if !self.holding_key {
            walk(at, self.key, &mut out);
            at = self.key;
        }
        walk(at, self.door, &mut out);
        out
    }
}

impl super::Environment {
    /// Shortest solution length of the key-door task behind `state`.
    pub fn keydoor_shortest_solution(&self, state: &super::EnvState) -> Option<usize> {
        match &state.world {
            World::KeyDoor(w) => Some(w.shortest_solution()),
            _ => None,
        }
    }

    /// A shortest command script for the key-door task behind `state`.
    pub fn keydoor_optimal_script(&self, state: &super::EnvState) -> Option<Vec<String>> {
        match &state.world {
            World::KeyDoor(w) => Some(w.optimal_script()),
            _ => None,
        }
    }
}
