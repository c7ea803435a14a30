//! Procedurally generated multi-room gridworld.
//!
//! An 11×11 grid holds one to three rectangular rooms chained through shared
//! walls, each pair joined by a coloured door. The agent moves with four
//! actions and must reach the goal in the last room. Cells outside every room
//! are wall. Doors start closed.
//!
//! Coordinates are `(x, y)` with `y` growing downwards, so `N` is `y − 1`.

mod generate;
mod vecenv;

pub use generate::{generate_level, MAX_ATTEMPTS};
pub use vecenv::{EpisodeEnd, VecEnv, VecStep};

use serde::{Deserialize, Serialize};

pub const GRID: usize = 11;
pub const OBS_LEN: usize = GRID * GRID * 3;
pub const N_ACTIONS: usize = 4;
pub const N_COLORS: u8 = 6;
/// Colour id of the goal (`green` in [`COLOR_NAMES`]).
pub const GOAL_COLOR: u8 = 2;
pub const COLOR_NAMES: [&str; 6] = ["red", "green", "blue", "purple", "yellow", "grey"];

/// Observation vocabulary.
pub mod vocab {
    pub const KIND_EMPTY: u8 = 0;
    pub const KIND_WALL: u8 = 1;
    pub const KIND_DOOR: u8 = 2;
    pub const KIND_GOAL: u8 = 3;
    pub const KIND_AGENT: u8 = 4;
    pub const KIND_MAX: f64 = 4.0;
    pub const COLOR_MAX: f64 = 6.0;
    pub const STATUS_DOOR_OPEN: u8 = 1;
    pub const STATUS_DOOR_CLOSED: u8 = 2;
    /// Agent direction codes are `1 + Direction as u8` (N 1, E 2, S 3, W 4).
    pub const STATUS_MAX: f64 = 4.0;
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GridError {
    #[error("n_rooms must be 1, 2 or 3, got {0}")]
    InvalidRooms(u8),
    #[error("episode is done; reset before stepping")]
    StepAfterDone,
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("action index {0} out of range")]
    BadAction(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Empty,
    Wall,
    Door,
    Goal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub kind: CellKind,
    /// 0 for none, otherwise `1..=6`.
    pub color: u8,
    pub door_open: bool,
}

impl Cell {
    pub const EMPTY: Cell = Cell { kind: CellKind::Empty, color: 0, door_open: false };
    pub const WALL: Cell = Cell { kind: CellKind::Wall, color: 0, door_open: false };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    N,
    E,
    S,
    W,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::N, Direction::E, Direction::S, Direction::W];

    pub fn right(self) -> Self {
        Self::ALL[(self as usize + 1) % 4]
    }

    pub fn left(self) -> Self {
        Self::ALL[(self as usize + 3) % 4]
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::N => (0, -1),
            Direction::E => (1, 0),
            Direction::S => (0, 1),
            Direction::W => (-1, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Left,
    Right,
    Forward,
    Toggle,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Left, Action::Right, Action::Forward, Action::Toggle];

    pub fn from_index(i: usize) -> Result<Self, GridError> {
        Self::ALL.get(i).copied().ok_or(GridError::BadAction(i))
    }
}

/// Outer bounds of a room, walls included (inclusive on both ends).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Room {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Room {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    pub fn interior_contains(&self, x: usize, y: usize) -> bool {
        x > self.x0 && x < self.x1 && y > self.y0 && y < self.y1
    }

    pub fn interior_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in self.y0 + 1..self.y1 {
            for x in self.x0 + 1..self.x1 {
                out.push((x, y));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: usize,
    pub y: usize,
    pub dir: Direction,
}

/// An immutable generated layout.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelSpec {
    /// Row-major, `grid[y * GRID + x]`.
    pub grid: Vec<Cell>,
    pub n_rooms: u8,
    pub rooms: Vec<Room>,
    /// Door positions; door `i` joins rooms `i` and `i + 1`.
    pub doors: Vec<(usize, usize)>,
    pub agent_start: AgentPose,
    pub goal_pos: (usize, usize),
    pub seed: u64,
}

impl LevelSpec {
    pub fn cell(&self, x: usize, y: usize) -> Cell {
        self.grid[y * GRID + x]
    }

    pub fn max_steps(&self) -> usize {
        20 * self.n_rooms as usize
    }

    /// One character per cell: `#` wall, `.` empty, `G` goal, door colour
    /// initial, agent as `^ > v <`.
    pub fn render_ascii(&self, agent: Option<AgentPose>) -> String {
        let mut s = String::with_capacity(GRID * (GRID + 1));
        for y in 0..GRID {
            for x in 0..GRID {
                let c = match agent {
                    Some(a) if a.x == x && a.y == y => ['^', '>', 'v', '<'][a.dir as usize],
                    _ => {
                        let cell = self.cell(x, y);
                        match cell.kind {
                            CellKind::Empty => '.',
                            CellKind::Wall => '#',
                            CellKind::Goal => 'G',
                            CellKind::Door => COLOR_NAMES[cell.color as usize - 1].chars().next().unwrap().to_ascii_uppercase(),
                        }
                    }
                };
                s.push(c);
            }
            s.push('\n');
        }
        s
    }
}

/// Outcome of one environment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Mutable episode state over a level.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub level: LevelSpec,
    pub agent: AgentPose,
    /// Open flag per door, in `level.doors` order.
    pub doors_open: Vec<bool>,
    pub step_count: usize,
    pub done: bool,
}

impl GridState {
    pub fn new(level: LevelSpec) -> Self {
        let doors_open = level.doors.iter().map(|&(x, y)| level.cell(x, y).door_open).collect();
        Self { agent: level.agent_start, doors_open, step_count: 0, done: false, level }
    }

    pub fn max_steps(&self) -> usize {
        self.level.max_steps()
    }

    fn door_index(&self, x: usize, y: usize) -> Option<usize> {
        self.level.doors.iter().position(|&d| d == (x, y))
    }

    /// Whether the agent may stand on `(x, y)`.
    pub fn passable(&self, x: usize, y: usize) -> bool {
        match self.level.cell(x, y).kind {
            CellKind::Wall => false,
            CellKind::Door => self.door_index(x, y).map(|i| self.doors_open[i]).unwrap_or(false),
            CellKind::Empty | CellKind::Goal => true,
        }
    }

    /// The cell in front of the agent, if inside the grid.
    pub fn front(&self) -> Option<(usize, usize)> {
        let (dx, dy) = self.agent.dir.delta();
        let x = self.agent.x as i32 + dx;
        let y = self.agent.y as i32 + dy;
        ((0..GRID as i32).contains(&x) && (0..GRID as i32).contains(&y)).then_some((x as usize, y as usize))
    }

    pub fn step(&mut self, action: Action) -> Result<Transition, GridError> {
        if self.done {
            return Err(GridError::StepAfterDone);
        }
        let k = self.step_count;
        let mut t = Transition { reward: 0.0, done: false, success: false };
        match action {
            Action::Left => self.agent.dir = self.agent.dir.left(),
            Action::Right => self.agent.dir = self.agent.dir.right(),
            Action::Forward => {
                if let Some((x, y)) = self.front() {
                    if self.passable(x, y) {
                        self.agent.x = x;
                        self.agent.y = y;
                        if self.level.goal_pos == (x, y) {
                            t.reward = 1.0 - 0.9 * (k as f64 / self.max_steps() as f64);
                            t.done = true;
                            t.success = true;
                        }
                    }
                }
            }
            Action::Toggle => {
                if let Some((x, y)) = self.front() {
                    if let Some(i) = self.door_index(x, y) {
                        self.doors_open[i] = !self.doors_open[i];
                    }
                }
            }
        }
        self.step_count += 1;
        if !t.done && self.step_count >= self.max_steps() {
            t.done = true;
        }
        self.done = t.done;
        Ok(t)
    }

    /// Step followed by the new observation.
    pub fn step_observe(&mut self, action: Action) -> Result<(Vec<f64>, Transition), GridError> {
        let t = self.step(action)?;
        Ok((encode_obs(self), t))
    }
}

/// Raw integer codes `(kind, color, status)` at a cell.
pub fn cell_codes(state: &GridState, x: usize, y: usize) -> (u8, u8, u8) {
    use vocab::*;
    if state.agent.x == x && state.agent.y == y {
        return (KIND_AGENT, 0, 1 + state.agent.dir as u8);
    }
    let cell = state.level.cell(x, y);
    match cell.kind {
        CellKind::Empty => (KIND_EMPTY, 0, 0),
        CellKind::Wall => (KIND_WALL, 0, 0),
        CellKind::Goal => (KIND_GOAL, GOAL_COLOR, 0),
        CellKind::Door => {
            let open = state.door_index(x, y).map(|i| state.doors_open[i]).unwrap_or(false);
            (KIND_DOOR, cell.color, if open { STATUS_DOOR_OPEN } else { STATUS_DOOR_CLOSED })
        }
    }
}

/// Writes the `[11, 11, 3]` channel-last observation into `out`.
pub fn encode_obs_into(state: &GridState, out: &mut [f64]) {
    assert_eq!(out.len(), OBS_LEN);
    for y in 0..GRID {
        for x in 0..GRID {
            let (k, c, s) = cell_codes(state, x, y);
            let o = (y * GRID + x) * 3;
            out[o] = k as f64 / vocab::KIND_MAX;
            out[o + 1] = c as f64 / vocab::COLOR_MAX;
            out[o + 2] = s as f64 / vocab::STATUS_MAX;
        }
    }
}

pub fn encode_obs(state: &GridState) -> Vec<f64> {
    let mut out = vec![0.0; OBS_LEN];
    encode_obs_into(state, &mut out);
    out
}

/// A level plus an action sequence, for dumping and replaying episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub level: LevelSpec,
    pub actions: Vec<Action>,
}

/// One replayed step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayStep {
    pub action: Action,
    pub agent: AgentPose,
    pub reward: f64,
    pub done: bool,
}

/// Replays `trace`, stopping at the end of the episode.
pub fn replay(trace: &LevelTrace) -> Vec<ReplayStep> {
    let mut s = GridState::new(trace.level.clone());
    let mut out = Vec::new();
    for &a in &trace.actions {
        let Ok(t) = s.step(a) else { break };
        out.push(ReplayStep { action: a, agent: s.agent, reward: t.reward, done: t.done });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_room() -> GridState {
        GridState::new(generate_level(7, Some(1)).unwrap())
    }

    #[test]
    fn facing_wall_forward_is_noop() {
        let mut s = one_room();
        let room = s.level.rooms[0];
        s.agent = AgentPose { x: room.x0 + 1, y: room.y0 + 1, dir: Direction::N };
        let before = s.agent;
        let t = s.step(Action::Forward).unwrap();
        assert_eq!(s.agent, before);
        assert_eq!((t.reward, t.done), (0.0, false));
    }

    #[test]
    fn reaching_goal_rewards_by_step_count() {
        let mut s = one_room();
        let (gx, gy) = s.level.goal_pos;
        let room = s.level.rooms[0];
        let (x, dir) = if gx > room.x0 + 1 { (gx - 1, Direction::E) } else { (gx + 1, Direction::W) };
        s.agent = AgentPose { x, y: gy, dir };
        s.step_count = 5;
        let t = s.step(Action::Forward).unwrap();
        assert!(t.done && t.success);
        assert!((t.reward - (1.0 - 0.9 * 5.0 / 20.0)).abs() < 1e-15);
        assert_eq!(s.step(Action::Left), Err(GridError::StepAfterDone));
    }

    #[test]
    fn timeout_ends_with_zero_reward() {
        let mut s = one_room();
        for i in 0..20 {
            let t = s.step(Action::Left).unwrap();
            assert_eq!(t.reward, 0.0);
            assert_eq!(t.done, i == 19);
        }
        assert_eq!(s.step_count, s.max_steps());
    }

    #[test]
    fn toggle_is_an_involution() {
        let level = generate_level(3, Some(2)).unwrap();
        let (dx, dy) = level.doors[0];
        let mut s = GridState::new(level);
        // stand next to the door on an interior cell, facing it
        let (pose, _) = Direction::ALL
            .iter()
            .filter_map(|&d| {
                let (ddx, ddy) = d.delta();
                let x = dx as i32 - ddx;
                let y = dy as i32 - ddy;
                let (x, y) = (x as usize, y as usize);
                s.level.rooms[0].interior_contains(x, y).then_some((AgentPose { x, y, dir: d }, ()))
            })
            .next()
            .unwrap();
        s.agent = pose;
        assert!(!s.doors_open[0]);
        s.step(Action::Toggle).unwrap();
        assert!(s.doors_open[0]);
        s.step(Action::Toggle).unwrap();
        assert!(!s.doors_open[0]);
    }

    #[test]
    fn rotations_cancel() {
        let mut s = one_room();
        let before = s.agent;
        s.step(Action::Left).unwrap();
        s.step(Action::Right).unwrap();
        assert_eq!(s.agent, before);
    }

    #[test]
    fn direction_only_changes_agent_status_channel() {
        let s = one_room();
        let mut t = s.clone();
        t.agent.dir = t.agent.dir.right();
        let (a, b) = (encode_obs(&s), encode_obs(&t));
        let diff: Vec<usize> = (0..OBS_LEN).filter(|&i| a[i] != b[i]).collect();
        assert_eq!(diff, vec![(s.agent.y * GRID + s.agent.x) * 3 + 2]);
    }

    #[test]
    fn empty_cell_is_zero_and_codes_are_scaled() {
        let s = one_room();
        let obs = encode_obs(&s);
        assert!(obs.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let (x, y) = s.level.rooms[0].interior_cells().into_iter().find(|&c| c != s.level.goal_pos && c != (s.agent.x, s.agent.y)).unwrap();
        let o = (y * GRID + x) * 3;
        assert_eq!(&obs[o..o + 3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn replay_matches_direct_stepping() {
        let level = generate_level(11, None).unwrap();
        let actions = vec![Action::Forward, Action::Left, Action::Forward, Action::Toggle, Action::Forward];
        let steps = replay(&LevelTrace { level: level.clone(), actions: actions.clone() });
        let mut s = GridState::new(level);
        for (a, r) in actions.iter().zip(&steps) {
            let t = s.step(*a).unwrap();
            assert_eq!((t.reward, t.done, s.agent), (r.reward, r.done, r.agent));
        }
    }
}
