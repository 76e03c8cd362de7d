//! The 30x30 goal-reaching navigation task and its offline datasets.
//!
//! Coordinates are `(x, y)` with `y` growing upwards, so `Up` moves from
//! `(5, 5)` to `(5, 6)`. Moves that would leave the grid keep the agent in
//! place and still cost the step reward.

use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl From<[i32; 2]> for Cell {
    fn from([x, y]: [i32; 2]) -> Self {
        Cell { x, y }
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Action {
    Up = 0,
    Right = 1,
    Down = 2,
    Left = 3,
}

impl Action {
    /// Canonical order, also used for every tie-break.
    pub const ALL: [Action; 4] = [Action::Up, Action::Right, Action::Down, Action::Left];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, 1),
            Action::Right => (1, 0),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
        }
    }
}

impl TryFrom<u8> for Action {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Action::from_index(v as usize).ok_or_else(|| format!("action code {v} not in 0..4"))
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalCell {
    pub cell: Cell,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: i32,
    pub height: i32,
    pub start: Cell,
    pub goals: Vec<GoalCell>,
    pub step_reward: f64,
    pub slip_prob: f64,
    pub max_episode_len: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::toy(10.0, 5.0)
    }
}

impl GridSpec {
    /// The 30x30 toy task with a top goal band (`x` in 10..=19, `y` = 29) and
    /// a right goal band (`x` = 29, `y` in 10..=19).
    pub fn toy(top_reward: f64, right_reward: f64) -> Self {
        let mut goals = Vec::with_capacity(20);
        goals.extend((10..20).map(|x| GoalCell {
            cell: Cell::new(x, 29),
            reward: top_reward,
        }));
        goals.extend((10..20).map(|y| GoalCell {
            cell: Cell::new(29, y),
            reward: right_reward,
        }));
        GridSpec {
            width: 30,
            height: 30,
            start: Cell::new(0, 0),
            goals,
            step_reward: -1.0,
            slip_prob: 0.05,
            max_episode_len: 120,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::contract("grid must be at least 2x2"));
        }
        if !self.contains(self.start) {
            return Err(Error::contract(format!("start {} outside grid", self.start)));
        }
        if self.goals.is_empty() {
            return Err(Error::contract("grid needs at least one goal cell"));
        }
        for g in &self.goals {
            if !self.contains(g.cell) {
                return Err(Error::contract(format!("goal {} outside grid", g.cell)));
            }
            if !(g.reward > 0.0 && g.reward.is_finite()) {
                return Err(Error::contract(format!(
                    "goal {} reward {} must be positive",
                    g.cell, g.reward
                )));
            }
            if g.cell == self.start {
                return Err(Error::contract("start cell cannot be a goal"));
            }
        }
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return Err(Error::contract(format!(
                "slip_prob {} outside [0, 1]",
                self.slip_prob
            )));
        }
        if !self.step_reward.is_finite() {
            return Err(Error::contract("step_reward must be finite"));
        }
        if self.max_episode_len == 0 {
            return Err(Error::contract("max_episode_len must be >= 1"));
        }
        Ok(())
    }

    pub fn contains(&self, c: Cell) -> bool {
        (0..self.width).contains(&c.x) && (0..self.height).contains(&c.y)
    }

    pub fn goal_reward(&self, c: Cell) -> Option<f64> {
        self.goals.iter().find(|g| g.cell == c).map(|g| g.reward)
    }

    pub fn is_goal(&self, c: Cell) -> bool {
        self.goal_reward(c).is_some()
    }

    pub fn n_cells(&self) -> usize {
        (self.width * self.height) as usize
    }

    /// Row-major index with `y` as the row.
    pub fn cell_index(&self, c: Cell) -> usize {
        (c.y * self.width + c.x) as usize
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Cell::new(x, y)))
    }

    /// Destination after border clipping, ignoring goals.
    pub fn clipped_move(&self, s: Cell, a: Action) -> Cell {
        let (dx, dy) = a.delta();
        Cell::new(
            (s.x + dx).clamp(0, self.width - 1),
            (s.y + dy).clamp(0, self.height - 1),
        )
    }

    fn check_cell(&self, s: Cell) -> Result<()> {
        if !self.contains(s) {
            return Err(Error::contract(format!(
                "cell {s} outside {}x{} grid",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub s_next: Cell,
    pub r: f64,
    pub done: bool,
}

pub fn step(spec: &GridSpec, s: Cell, a: Action) -> Result<StepOutcome> {
    spec.check_cell(s)?;
    if spec.is_goal(s) {
        return Err(Error::contract(format!("cannot step from goal cell {s}")));
    }
    let s_next = spec.clipped_move(s, a);
    Ok(match spec.goal_reward(s_next) {
        Some(r) => StepOutcome {
            s_next,
            r,
            done: true,
        },
        None => StepOutcome {
            s_next,
            r: spec.step_reward,
            done: false,
        },
    })
}

/// Greedy goal-reaching action: head for the Manhattan-nearest goal cell
/// (earliest in `spec.goals` on ties) with the first action, in
/// [`Action::ALL`] order, that shortens the distance.
pub fn greedy_goal_action(spec: &GridSpec, s: Cell) -> Action {
    let target = spec
        .goals
        .iter()
        .min_by_key(|g| s.manhattan(g.cell))
        .map(|g| g.cell)
        .unwrap_or(s);
    let here = s.manhattan(target);
    Action::ALL
        .into_iter()
        .find(|&a| spec.clipped_move(s, a).manhattan(target) < here)
        .unwrap_or(Action::Up)
}

/// Applies the slip: with probability `slip_prob` the intended action is
/// replaced by a uniformly random one.
///
/// Exactly one uniform draw is consumed when no slip happens and two when
/// it does.
pub fn slip<R: Rng + ?Sized>(spec: &GridSpec, intended: Action, rng: &mut R) -> Action {
    let u: f64 = rng.random();
    if u < spec.slip_prob {
        Action::ALL[rng.random_range(0..4)]
    } else {
        intended
    }
}

pub fn behavior_action<R: Rng + ?Sized>(spec: &GridSpec, s: Cell, rng: &mut R) -> Result<Action> {
    spec.check_cell(s)?;
    Ok(slip(spec, greedy_goal_action(spec, s), rng))
}

/// Normalised `(x / (width - 1), y / (height - 1))` network input.
pub fn encode(spec: &GridSpec, s: Cell) -> [f64; 2] {
    [
        s.x as f64 / (spec.width - 1) as f64,
        s.y as f64 / (spec.height - 1) as f64,
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Cell,
    pub a: Action,
    pub r: f64,
    pub s_next: Cell,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: GridSpec,
    pub seed: u64,
    pub transitions: Vec<Transition>,
    /// Index of the first transition of each trajectory.
    pub trajectory_starts: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    seed: u64,
    n_transitions: usize,
    trajectory_starts: Vec<usize>,
    spec: GridSpec,
}

const DATASET_FORMAT: &str = "odice-gridworld-dataset";
const DATASET_VERSION: u32 = 1;

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn n_trajectories(&self) -> usize {
        self.trajectory_starts.len()
    }

    /// Transition ranges, one per trajectory.
    pub fn trajectories(&self) -> impl Iterator<Item = &[Transition]> + '_ {
        let ends = self
            .trajectory_starts
            .iter()
            .skip(1)
            .copied()
            .chain(std::iter::once(self.transitions.len()));
        self.trajectory_starts
            .iter()
            .zip(ends)
            .map(|(&a, b)| &self.transitions[a..b])
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let n = self.transitions.len();
        let mut prev = None;
        for &start in &self.trajectory_starts {
            if start >= n || prev.is_some_and(|p| start <= p) {
                return Err(Error::contract("trajectory boundaries do not partition the data"));
            }
            prev = Some(start);
        }
        if n > 0 && self.trajectory_starts.first() != Some(&0) {
            return Err(Error::contract("first trajectory must start at index 0"));
        }
        for traj in self.trajectories() {
            if traj[0].s != self.spec.start {
                return Err(Error::contract(format!(
                    "trajectory starts at {} instead of {}",
                    traj[0].s, self.spec.start
                )));
            }
        }
        for (i, t) in self.transitions.iter().enumerate() {
            if !self.spec.contains(t.s) || !self.spec.contains(t.s_next) {
                return Err(Error::contract(format!("transition {i} leaves the grid")));
            }
            let expected = self.spec.goal_reward(t.s_next).unwrap_or(self.spec.step_reward);
            if t.r != expected {
                return Err(Error::contract(format!(
                    "transition {i} reward {} inconsistent with spec ({expected})",
                    t.r
                )));
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let header = DatasetHeader {
            format: DATASET_FORMAT.to_owned(),
            version: DATASET_VERSION,
            seed: self.seed,
            n_transitions: self.transitions.len(),
            trajectory_starts: self.trajectory_starts.clone(),
            spec: self.spec.clone(),
        };
        let mut text = serde_json::to_string(&header).expect("header serialises");
        text.push('\n');
        for t in &self.transitions {
            text.push_str(&serde_json::to_string(t).expect("transition serialises"));
            text.push('\n');
        }
        out.write_all(text.as_bytes())
            .map_err(|e| Error::io("writing dataset", e))
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Dataset> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: None,
            line,
            msg,
        };
        let mut lines = input.lines().enumerate();
        let header: DatasetHeader = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io("reading dataset", e))?;
                serde_json::from_str(&line).map_err(|e| parse_err(1, e.to_string()))?
            }
            None => return Err(parse_err(0, "empty dataset file".into())),
        };
        if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
            return Err(parse_err(
                1,
                format!("unsupported dataset format {} v{}", header.format, header.version),
            ));
        }
        let mut transitions = Vec::with_capacity(header.n_transitions);
        for (idx, line) in lines {
            let line = line.map_err(|e| Error::io("reading dataset", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Transition =
                serde_json::from_str(&line).map_err(|e| parse_err(idx + 1, e.to_string()))?;
            transitions.push(t);
        }
        if transitions.len() != header.n_transitions {
            return Err(parse_err(
                0,
                format!(
                    "header promises {} transitions, found {}",
                    header.n_transitions,
                    transitions.len()
                ),
            ));
        }
        let ds = Dataset {
            spec: header.spec,
            seed: header.seed,
            transitions,
            trajectory_starts: header.trajectory_starts,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Rolls out `n_traj` behavior-policy episodes from the start cell.
pub fn generate_dataset(spec: &GridSpec, n_traj: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n_traj == 0 {
        return Err(Error::contract("n_traj must be >= 1"));
    }
    let mut rng = seeds::rng(seed, seeds::DATASET);
    let mut transitions = Vec::new();
    let mut trajectory_starts = Vec::with_capacity(n_traj);
    for _ in 0..n_traj {
        trajectory_starts.push(transitions.len());
        let mut s = spec.start;
        for _ in 0..spec.max_episode_len {
            let a = behavior_action(spec, s, &mut rng)?;
            let out = step(spec, s, a)?;
            transitions.push(Transition {
                s,
                a,
                r: out.r,
                s_next: out.s_next,
                done: out.done,
            });
            s = out.s_next;
            if out.done {
                break;
            }
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        seed,
        transitions,
        trajectory_starts,
    })
}

/// Which cells the dataset visits, as `s` or `s_next`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SupportMask {
    pub width: i32,
    pub height: i32,
    cells: Vec<bool>,
}

impl SupportMask {
    pub fn get(&self, c: Cell) -> bool {
        self.cells[(c.y * self.width + c.x) as usize]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    /// Flags in row-major order (`y` rows, `x` columns).
    pub fn as_slice(&self) -> &[bool] {
        &self.cells
    }
}

pub fn support_mask(dataset: &Dataset) -> SupportMask {
    let spec = &dataset.spec;
    let mut cells = vec![false; spec.n_cells()];
    for t in &dataset.transitions {
        cells[spec.cell_index(t.s)] = true;
        cells[spec.cell_index(t.s_next)] = true;
    }
    SupportMask {
        width: spec.width,
        height: spec.height,
        cells,
    }
}
