//! Deterministic MiniGrid-compatible navigation simulator.
//!
//! Three layouts are supported: an empty 5x5 room, an empty 16x16 room and a
//! 9x9 room split by a single wall with one gap. Coordinates are `(x, y)` with
//! `x` the column and `y` the row, origin at the top-left outer wall; East is
//! `+x` and South is `+y`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Step limit used by the LLM evaluation rows.
pub const DEFAULT_MAX_STEPS: u32 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown environment configuration `{0}`")]
    UnknownConfig(String),
    #[error("cannot step an episode that has already terminated")]
    Terminated,
    #[error("step count {step} outside 1..={max_steps}")]
    StepOutOfRange { step: u32, max_steps: u32 },
    #[error("start cell ({0}, {1}) is a wall")]
    StartOnWall(i32, i32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConfigId {
    #[serde(rename = "empty-5x5-random")]
    Empty5x5Random,
    #[serde(rename = "empty-16x16")]
    Empty16x16,
    #[serde(rename = "crossing-9x9")]
    Crossing9x9,
}

impl ConfigId {
    pub const ALL: [ConfigId; 3] = [
        ConfigId::Empty5x5Random,
        ConfigId::Empty16x16,
        ConfigId::Crossing9x9,
    ];

    /// Side length including the border walls.
    pub fn size(self) -> i32 {
        match self {
            ConfigId::Empty5x5Random => 5,
            ConfigId::Empty16x16 => 16,
            ConfigId::Crossing9x9 => 9,
        }
    }

    pub fn goal(self) -> (i32, i32) {
        let s = self.size();
        (s - 2, s - 2)
    }

    /// MiniGrid's default episode horizon for the environment, `4 * size^2`.
    pub fn native_max_steps(self) -> u32 {
        let s = self.size() as u32;
        4 * s * s
    }

    pub fn name(self) -> &'static str {
        match self {
            ConfigId::Empty5x5Random => "empty-5x5-random",
            ConfigId::Empty16x16 => "empty-16x16",
            ConfigId::Crossing9x9 => "crossing-9x9",
        }
    }

    pub fn minigrid_id(self) -> &'static str {
        match self {
            ConfigId::Empty5x5Random => "MiniGrid-Empty-Random-5x5-v0",
            ConfigId::Empty16x16 => "MiniGrid-Empty-16x16-v0",
            ConfigId::Crossing9x9 => "MiniGrid-SimpleCrossingS9N1-v0",
        }
    }

    pub fn has_randomized_layout(self) -> bool {
        matches!(self, ConfigId::Crossing9x9)
    }
}

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConfigId {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        ConfigId::ALL
            .into_iter()
            .find(|c| {
                t.eq_ignore_ascii_case(c.name()) || t.eq_ignore_ascii_case(c.minigrid_id())
            })
            .or(match t {
                "1" => Some(ConfigId::Empty5x5Random),
                "2" => Some(ConfigId::Empty16x16),
                "3" => Some(ConfigId::Crossing9x9),
                _ => None,
            })
            .ok_or_else(|| EnvError::UnknownConfig(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i % 4]
    }

    pub fn left(self) -> Self {
        Self::from_index(self.index() + 3)
    }

    pub fn right(self) -> Self {
        Self::from_index(self.index() + 1)
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::North => (0, -1),
            Direction::East => (1, 0),
            Direction::South => (0, 1),
            Direction::West => (-1, 0),
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Direction::North => '^',
            Direction::East => '>',
            Direction::South => 'v',
            Direction::West => '<',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.symbol() == c)
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::North => "north",
            Direction::East => "east",
            Direction::South => "south",
            Direction::West => "west",
        }
    }
}

/// The agent-facing action vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    TurnLeft,
    TurnRight,
    MoveForward,
}

impl Action {
    /// Expansion and tie-break order.
    pub const ALL: [Action; 3] = [Action::TurnLeft, Action::TurnRight, Action::MoveForward];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::TurnLeft => "turn_left",
            Action::TurnRight => "turn_right",
            Action::MoveForward => "move_forward",
        }
    }

    pub fn letter(self) -> char {
        match self {
            Action::TurnLeft => 'L',
            Action::TurnRight => 'R',
            Action::MoveForward => 'F',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.letter() == c)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The simulator's full discrete action set, index-compatible with MiniGrid.
///
/// `Pickup`, `Drop`, `Toggle` and `Done` have no effect in these layouts but
/// still consume a step. Only the random baseline draws them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvAction {
    Left,
    Right,
    Forward,
    Pickup,
    Drop,
    Toggle,
    Done,
}

impl EnvAction {
    pub const ALL: [EnvAction; 7] = [
        EnvAction::Left,
        EnvAction::Right,
        EnvAction::Forward,
        EnvAction::Pickup,
        EnvAction::Drop,
        EnvAction::Toggle,
        EnvAction::Done,
    ];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_action(self) -> Option<Action> {
        match self {
            EnvAction::Left => Some(Action::TurnLeft),
            EnvAction::Right => Some(Action::TurnRight),
            EnvAction::Forward => Some(Action::MoveForward),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvAction::Left => Action::TurnLeft.name(),
            EnvAction::Right => Action::TurnRight.name(),
            EnvAction::Forward => Action::MoveForward.name(),
            EnvAction::Pickup => "pickup",
            EnvAction::Drop => "drop",
            EnvAction::Toggle => "toggle",
            EnvAction::Done => "done",
        }
    }
}

impl From<Action> for EnvAction {
    fn from(a: Action) -> Self {
        match a {
            Action::TurnLeft => EnvAction::Left,
            Action::TurnRight => EnvAction::Right,
            Action::MoveForward => EnvAction::Forward,
        }
    }
}

impl fmt::Display for EnvAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// A horizontal wall along one row.
    Row,
    /// A vertical wall along one column.
    Column,
}

/// The internal wall of a crossing layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    pub orientation: Orientation,
    /// Row (or column) index of the wall, in `2..=size-3`.
    pub index: i32,
    /// Position of the opening along the wall, in `1..=size-2`.
    pub gap: i32,
}

impl Partition {
    pub fn gap_cell(&self) -> (i32, i32) {
        match self.orientation {
            Orientation::Row => (self.gap, self.index),
            Orientation::Column => (self.index, self.gap),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: i32,
    pub y: i32,
    pub dir: Direction,
}

impl AgentPose {
    pub fn new(x: i32, y: i32, dir: Direction) -> Self {
        Self { x, y, dir }
    }

    pub fn cell(&self) -> (i32, i32) {
        (self.x, self.y)
    }

    pub fn front(&self) -> (i32, i32) {
        let (dx, dy) = self.dir.delta();
        (self.x + dx, self.y + dy)
    }
}

impl fmt::Display for AgentPose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.dir.name())
    }
}

pub fn manhattan(a: (i32, i32), b: (i32, i32)) -> i32 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    config: ConfigId,
    width: i32,
    height: i32,
    walls: Vec<bool>,
    goal: (i32, i32),
    partition: Option<Partition>,
    layout_seed: u64,
}

impl GridLayout {
    fn bordered(config: ConfigId, layout_seed: u64) -> Self {
        let s = config.size();
        let mut walls = vec![false; (s * s) as usize];
        for y in 0..s {
            for x in 0..s {
                if x == 0 || y == 0 || x == s - 1 || y == s - 1 {
                    walls[(y * s + x) as usize] = true;
                }
            }
        }
        Self {
            config,
            width: s,
            height: s,
            walls,
            goal: config.goal(),
            partition: None,
            layout_seed,
        }
    }

    fn with_partition(mut self, p: Partition) -> Self {
        for k in 1..self.width - 1 {
            if k == p.gap {
                continue;
            }
            let (x, y) = match p.orientation {
                Orientation::Row => (k, p.index),
                Orientation::Column => (p.index, k),
            };
            let i = self.idx(x, y);
            self.walls[i] = true;
        }
        self.partition = Some(p);
        self
    }

    fn idx(&self, x: i32, y: i32) -> usize {
        (y * self.width + x) as usize
    }

    pub fn config(&self) -> ConfigId {
        self.config
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn goal(&self) -> (i32, i32) {
        self.goal
    }

    pub fn partition(&self) -> Option<Partition> {
        self.partition
    }

    pub fn layout_seed(&self) -> u64 {
        self.layout_seed
    }

    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && x < self.width && y < self.height
    }

    /// Cells outside the grid count as walls.
    pub fn is_wall(&self, x: i32, y: i32) -> bool {
        !self.in_bounds(x, y) || self.walls[self.idx(x, y)]
    }

    pub fn walls(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        (0..self.height)
            .flat_map(move |y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.walls[self.idx(x, y)])
    }

    pub fn interior_walls(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        self.walls()
            .filter(|&(x, y)| x > 0 && y > 0 && x < self.width - 1 && y < self.height - 1)
    }

    pub fn open_cells(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        (0..self.height)
            .flat_map(move |y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| !self.walls[self.idx(x, y)])
    }

    /// Canonical encoding of the interior walls: 0 for an empty room, otherwise
    /// a value unique to the partition.
    pub fn layout_key(&self) -> u32 {
        match self.partition {
            None => 0,
            Some(p) => {
                let o = match p.orientation {
                    Orientation::Row => 0,
                    Orientation::Column => 1,
                };
                1 + ((o * 64 + p.index as u32) * 64 + p.gap as u32)
            }
        }
    }

    /// Open cells reachable from `from` by 4-neighbour moves.
    pub fn flood_fill(&self, from: (i32, i32)) -> Vec<(i32, i32)> {
        let mut seen = vec![false; self.walls.len()];
        let mut out = Vec::new();
        if self.is_wall(from.0, from.1) {
            return out;
        }
        let mut queue = VecDeque::from([from]);
        seen[self.idx(from.0, from.1)] = true;
        while let Some((x, y)) = queue.pop_front() {
            out.push((x, y));
            for d in Direction::ALL {
                let (dx, dy) = d.delta();
                let (nx, ny) = (x + dx, y + dy);
                if !self.is_wall(nx, ny) && !seen[self.idx(nx, ny)] {
                    seen[self.idx(nx, ny)] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
        out
    }

    /// Checks the structural invariants of the layout, returning a description
    /// of the first violation.
    pub fn validate(&self) -> Result<(), String> {
        let (w, h) = (self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                let border = x == 0 || y == 0 || x == w - 1 || y == h - 1;
                if border && !self.is_wall(x, y) {
                    return Err(format!("border cell ({x}, {y}) is open"));
                }
            }
        }
        let (gx, gy) = self.goal;
        if gx <= 0 || gy <= 0 || gx >= w - 1 || gy >= h - 1 || self.is_wall(gx, gy) {
            return Err(format!("goal ({gx}, {gy}) is not an open interior cell"));
        }
        let interior: Vec<_> = self.interior_walls().collect();
        match (self.config, self.partition) {
            (ConfigId::Crossing9x9, Some(p)) => {
                if interior.len() as i32 != w - 3 {
                    return Err(format!("partition has {} walls", interior.len()));
                }
                let on_line = interior.iter().all(|&(x, y)| match p.orientation {
                    Orientation::Row => y == p.index,
                    Orientation::Column => x == p.index,
                });
                if !on_line {
                    return Err("interior walls off the partition line".into());
                }
                let (gapx, gapy) = p.gap_cell();
                if self.is_wall(gapx, gapy) {
                    return Err("partition gap is blocked".into());
                }
            }
            (ConfigId::Crossing9x9, None) => return Err("crossing layout without partition".into()),
            (_, Some(_)) => return Err("empty layout with a partition".into()),
            (_, None) => {
                if !interior.is_empty() {
                    return Err("empty layout has interior walls".into());
                }
            }
        }
        let reachable = self.flood_fill(self.goal).len();
        let open = self.open_cells().count();
        if reachable != open {
            return Err(format!("{} open cells cannot reach the goal", open - reachable));
        }
        Ok(())
    }
}

/// Builds the layout for `config`. Only the crossing layout consumes the seed.
pub fn generate_layout(config: ConfigId, layout_seed: u64) -> GridLayout {
    let base = GridLayout::bordered(config, layout_seed);
    match config {
        ConfigId::Empty5x5Random | ConfigId::Empty16x16 => base,
        ConfigId::Crossing9x9 => {
            let s = config.size();
            let mut r = rng::seeded(layout_seed);
            let orientation = if r.random_bool(0.5) {
                Orientation::Row
            } else {
                Orientation::Column
            };
            let index = r.random_range(2..=s - 3);
            let gap = r.random_range(1..=s - 2);
            base.with_partition(Partition {
                orientation,
                index,
                gap,
            })
        }
    }
}

/// How the starting pose of an episode is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartRule {
    /// `(1, 1)` facing East.
    #[default]
    Corner,
    /// Uniform over open, non-goal cells with a uniform direction.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub layout: Arc<GridLayout>,
    pub pose: AgentPose,
    pub step_count: u32,
    pub max_steps: u32,
    pub terminated: bool,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    GoalReached,
    StepLimit,
    Ongoing,
}

/// What a single step did to the pose. Exactly one applies per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEffect {
    Moved,
    Turned,
    Blocked,
    Idle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: GridState,
    pub reward: f64,
    pub terminated: bool,
    pub reason: EndReason,
    pub effect: StepEffect,
}

/// Success reward for reaching the goal on step `step_count` of `max_steps`.
pub fn compute_reward(step_count: u32, max_steps: u32) -> Result<f64, EnvError> {
    if step_count == 0 || step_count > max_steps {
        return Err(EnvError::StepOutOfRange {
            step: step_count,
            max_steps,
        });
    }
    Ok(1.0 - 0.9 * (step_count as f64 / max_steps as f64))
}

pub fn reset(
    layout: Arc<GridLayout>,
    episode_seed: u64,
    start: StartRule,
    max_steps: u32,
) -> GridState {
    let pose = match start {
        StartRule::Corner => AgentPose::new(1, 1, Direction::East),
        StartRule::Uniform => {
            let goal = layout.goal();
            let cells: Vec<_> = layout.open_cells().filter(|&c| c != goal).collect();
            let mut r = rng::seeded(episode_seed);
            let (x, y) = cells[r.random_range(0..cells.len())];
            AgentPose::new(x, y, Direction::from_index(r.random_range(0..4)))
        }
    };
    GridState {
        layout,
        pose,
        step_count: 0,
        max_steps: max_steps.max(1),
        terminated: false,
        success: false,
    }
}

impl GridState {
    /// A fresh, non-terminated state at an explicit pose.
    pub fn at_pose(layout: Arc<GridLayout>, pose: AgentPose, max_steps: u32) -> Result<Self, EnvError> {
        if layout.is_wall(pose.x, pose.y) {
            return Err(EnvError::StartOnWall(pose.x, pose.y));
        }
        Ok(Self {
            layout,
            pose,
            step_count: 0,
            max_steps: max_steps.max(1),
            terminated: false,
            success: false,
        })
    }

    pub fn on_goal(&self) -> bool {
        self.pose.cell() == self.layout.goal()
    }

    pub fn distance_to_goal(&self) -> i32 {
        manhattan(self.pose.cell(), self.layout.goal())
    }

    pub fn step(&self, action: Action) -> Result<StepOutcome, EnvError> {
        self.apply(action.into())
    }

    pub fn apply(&self, action: EnvAction) -> Result<StepOutcome, EnvError> {
        if self.terminated {
            return Err(EnvError::Terminated);
        }
        let mut pose = self.pose;
        let effect = match action {
            EnvAction::Left => {
                pose.dir = pose.dir.left();
                StepEffect::Turned
            }
            EnvAction::Right => {
                pose.dir = pose.dir.right();
                StepEffect::Turned
            }
            EnvAction::Forward => {
                let (fx, fy) = pose.front();
                if self.layout.is_wall(fx, fy) {
                    StepEffect::Blocked
                } else {
                    pose.x = fx;
                    pose.y = fy;
                    StepEffect::Moved
                }
            }
            _ => StepEffect::Idle,
        };
        let step_count = self.step_count + 1;
        let mut next = GridState {
            layout: Arc::clone(&self.layout),
            pose,
            step_count,
            max_steps: self.max_steps,
            terminated: false,
            success: false,
        };
        let (reward, reason) = if next.on_goal() {
            next.terminated = true;
            next.success = true;
            (compute_reward(step_count, self.max_steps)?, EndReason::GoalReached)
        } else if step_count >= self.max_steps {
            next.terminated = true;
            (0.0, EndReason::StepLimit)
        } else {
            (0.0, EndReason::Ongoing)
        };
        Ok(StepOutcome {
            terminated: next.terminated,
            state: next,
            reward,
            reason,
            effect,
        })
    }
}
