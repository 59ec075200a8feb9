//! Four-connected grid maps, the five-action movement model and goal profiles.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("map must have at least one row and one column")]
    EmptyMap,
    #[error("cell {0} lies outside the {1}x{2} map")]
    OutOfBounds(Cell, usize, usize),
    #[error("map has no free cell")]
    NoFreeCell,
    #[error("cell {0} is blocked or outside the map")]
    InvalidCell(Cell),
    #[error("line {line}: expected {expected} columns, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: unexpected character {ch:?} (use '.' for free, '#' for blocked)")]
    BadCharacter { line: usize, ch: char },
    #[error("goal {0} appears more than once in the goal profile")]
    DuplicateGoal(Cell),
    #[error("cannot parse cell from {0:?}; expected (row,col)")]
    BadCellSyntax(String),
}

/// A grid coordinate. Row 0 is the top row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    pub fn chebyshev(self, other: Cell) -> usize {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }
}

impl From<(usize, usize)> for Cell {
    fn from((row, col): (usize, usize)) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

impl FromStr for Cell {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GridError::BadCellSyntax(s.to_string());
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|t| t.strip_suffix(')'))
            .ok_or_else(bad)?;
        let (r, c) = inner.split_once(',').ok_or_else(bad)?;
        let row = r.trim().parse().map_err(|_| bad())?;
        let col = c.trim().parse().map_err(|_| bad())?;
        Ok(Cell { row, col })
    }
}

/// Parses a whitespace- or `;`-separated list of `(r,c)` cells.
pub fn parse_cell_list(s: &str) -> Result<Vec<Cell>, GridError> {
    // Split on ')' so that "(0,0) (1,2)" and "(0,0);(1,2)" both work.
    s.split_inclusive(')')
        .map(|chunk| chunk.trim_start_matches(|c: char| c.is_whitespace() || c == ';' || c == ','))
        .filter(|chunk| !chunk.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// The five actions. The declaration order is the fixed tie-breaking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Nil = 4,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Nil,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    /// Row/column displacement.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Nil => (0, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "UP",
            Action::Down => "DOWN",
            Action::Left => "LEFT",
            Action::Right => "RIGHT",
            Action::Nil => "NIL",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "UP" => Ok(Action::Up),
            "DOWN" => Ok(Action::Down),
            "LEFT" => Ok(Action::Left),
            "RIGHT" => Ok(Action::Right),
            "NIL" | "STOP" => Ok(Action::Nil),
            other => Err(format!("unknown action {other:?}")),
        }
    }
}

/// A set of actions stored as a five-bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);
    pub const ALL: ActionSet = ActionSet(0b1_1111);

    pub const fn from_bits(bits: u8) -> Self {
        ActionSet(bits & 0b1_1111)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub fn single(a: Action) -> Self {
        ActionSet(1 << a.index())
    }

    pub fn contains(self, a: Action) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn insert(&mut self, a: Action) {
        self.0 |= 1 << a.index();
    }

    pub fn remove(&mut self, a: Action) {
        self.0 &= !(1 << a.index());
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersection(self, other: ActionSet) -> ActionSet {
        ActionSet(self.0 & other.0)
    }

    pub fn is_subset(self, other: ActionSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// The only member, if the set is a singleton.
    pub fn single_action(self) -> Option<Action> {
        (self.len() == 1).then(|| Action::from_index(self.0.trailing_zeros() as usize).unwrap())
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

impl FromIterator<Action> for ActionSet {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        let mut set = ActionSet::EMPTY;
        for a in iter {
            set.insert(a);
        }
        set
    }
}

impl fmt::Debug for ActionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

pub(crate) const NO_CELL: u32 = u32::MAX;

/// A rectangular grid with an obstacle mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    rows: usize,
    cols: usize,
    blocked: Vec<bool>,
    free: Vec<Cell>,
    free_index: Vec<u32>,
    // Destination free-cell index for each (free cell, action); NO_CELL when unavailable.
    moves: Vec<[u32; 5]>,
}

impl GridMap {
    pub fn new(
        rows: usize,
        cols: usize,
        blocked: impl IntoIterator<Item = Cell>,
    ) -> Result<Self, GridError> {
        if rows == 0 || cols == 0 {
            return Err(GridError::EmptyMap);
        }
        let mut mask = vec![false; rows * cols];
        for c in blocked {
            if c.row >= rows || c.col >= cols {
                return Err(GridError::OutOfBounds(c, rows, cols));
            }
            mask[c.row * cols + c.col] = true;
        }
        Self::from_mask(rows, cols, mask)
    }

    /// An obstacle-free map.
    pub fn empty(rows: usize, cols: usize) -> Result<Self, GridError> {
        Self::new(rows, cols, [])
    }

    fn from_mask(rows: usize, cols: usize, blocked: Vec<bool>) -> Result<Self, GridError> {
        let mut free = Vec::new();
        let mut free_index = vec![NO_CELL; rows * cols];
        for row in 0..rows {
            for col in 0..cols {
                if !blocked[row * cols + col] {
                    free_index[row * cols + col] = free.len() as u32;
                    free.push(Cell { row, col });
                }
            }
        }
        if free.is_empty() {
            return Err(GridError::NoFreeCell);
        }
        let mut map = GridMap {
            rows,
            cols,
            blocked,
            free,
            free_index,
            moves: Vec::new(),
        };
        map.moves = map
            .free
            .iter()
            .map(|&c| {
                let mut row = [NO_CELL; 5];
                for a in Action::ALL {
                    if let Some(dest) = map.displace(c, a) {
                        row[a.index()] = map.index_of(dest).map_or(NO_CELL, |i| i as u32);
                    }
                }
                row
            })
            .collect();
        Ok(map)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.row < self.rows && c.col < self.cols
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        !self.in_bounds(c) || self.blocked[c.row * self.cols + c.col]
    }

    pub fn is_free(&self, c: Cell) -> bool {
        !self.is_blocked(c)
    }

    /// Free cells in row-major order.
    pub fn free_cells(&self) -> &[Cell] {
        &self.free
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    pub fn blocked_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.rows * self.cols)
            .filter(|&i| self.blocked[i])
            .map(|i| Cell::new(i / self.cols, i % self.cols))
    }

    /// Dense index of a free cell.
    pub fn index_of(&self, c: Cell) -> Option<usize> {
        if !self.in_bounds(c) {
            return None;
        }
        match self.free_index[c.row * self.cols + c.col] {
            NO_CELL => None,
            i => Some(i as usize),
        }
    }

    pub fn cell(&self, index: usize) -> Cell {
        self.free[index]
    }

    /// Destination free-cell index of `action` from free cell `index`.
    pub(crate) fn move_index(&self, index: usize, action: Action) -> Option<usize> {
        match self.moves[index][action.index()] {
            NO_CELL => None,
            i => Some(i as usize),
        }
    }

    fn displace(&self, c: Cell, a: Action) -> Option<Cell> {
        let (dr, dc) = a.delta();
        let row = c.row.checked_add_signed(dr)?;
        let col = c.col.checked_add_signed(dc)?;
        let dest = Cell { row, col };
        self.is_free(dest).then_some(dest)
    }

    fn require_free(&self, c: Cell) -> Result<usize, GridError> {
        self.index_of(c).ok_or(GridError::InvalidCell(c))
    }

    /// Nil plus every move whose destination is an in-bounds free cell.
    pub fn available_actions(&self, c: Cell) -> Result<ActionSet, GridError> {
        let i = self.require_free(c)?;
        Ok(Action::ALL
            .into_iter()
            .filter(|a| self.moves[i][a.index()] != NO_CELL)
            .collect())
    }

    /// The displaced cell, or `None` when the move leaves the free area.
    pub fn apply_action(&self, c: Cell, a: Action) -> Result<Option<Cell>, GridError> {
        self.require_free(c)?;
        Ok(self.displace(c, a))
    }

    /// Free 4-neighbours of a free cell index.
    pub(crate) fn neighbours(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        self.moves[index][..4]
            .iter()
            .filter(|&&j| j != NO_CELL)
            .map(|&j| j as usize)
    }

    /// BFS hop distances from `source` through free cells that are not `forbidden`.
    pub(crate) fn bfs_from(&self, source: usize, forbidden: &[bool]) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.free.len()];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap();
            for v in self.neighbours(u) {
                if dist[v].is_none() && !forbidden[v] {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Whether every goal is reachable from every cell outside the other goals
    /// without passing through any other goal.
    pub fn is_proper(&self, goals: &GoalProfile) -> bool {
        let idx: Vec<usize> = goals
            .cells()
            .iter()
            .map(|&g| self.index_of(g).expect("goal profile validated against map"))
            .collect();
        let mut forbidden = vec![false; self.free.len()];
        for (i, &gi) in idx.iter().enumerate() {
            forbidden.iter_mut().for_each(|f| *f = false);
            for (j, &gj) in idx.iter().enumerate() {
                if j != i {
                    forbidden[gj] = true;
                }
            }
            let dist = self.bfs_from(gi, &forbidden);
            let stranded = (0..self.free.len()).any(|v| !forbidden[v] && dist[v].is_none());
            if stranded {
                return false;
            }
        }
        true
    }
}

impl FromStr for GridMap {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lines: Vec<&str> = s.lines().map(|l| l.trim_end_matches('\r')).collect();
        let lines: &[&str] = match lines.last() {
            Some(&"") => &lines[..lines.len() - 1],
            _ => &lines,
        };
        if lines.is_empty() || lines[0].is_empty() {
            return Err(GridError::EmptyMap);
        }
        let cols = lines[0].chars().count();
        let mut blocked = Vec::with_capacity(lines.len() * cols);
        for (i, line) in lines.iter().enumerate() {
            let found = line.chars().count();
            if found != cols {
                return Err(GridError::RaggedRow {
                    line: i + 1,
                    expected: cols,
                    found,
                });
            }
            for ch in line.chars() {
                match ch {
                    '.' => blocked.push(false),
                    '#' => blocked.push(true),
                    ch => return Err(GridError::BadCharacter { line: i + 1, ch }),
                }
            }
        }
        Self::from_mask(lines.len(), cols, blocked)
    }
}

impl fmt::Display for GridMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in 0..self.rows {
            for col in 0..self.cols {
                let ch = if self.blocked[row * self.cols + col] { '#' } else { '.' };
                write!(f, "{ch}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// One goal cell per agent, pairwise distinct and free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GoalProfile {
    goals: Vec<Cell>,
}

impl GoalProfile {
    pub fn new(map: &GridMap, goals: Vec<Cell>) -> Result<Self, GridError> {
        for (i, &g) in goals.iter().enumerate() {
            if !map.is_free(g) {
                return Err(GridError::InvalidCell(g));
            }
            if goals[..i].contains(&g) {
                return Err(GridError::DuplicateGoal(g));
            }
        }
        Ok(Self { goals })
    }

    pub fn cells(&self) -> &[Cell] {
        &self.goals
    }

    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }

    pub fn goal(&self, agent: usize) -> Cell {
        self.goals[agent]
    }
}

impl fmt::Display for GoalProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, g) in self.goals.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{g}")?;
        }
        Ok(())
    }
}

/// All ordered tuples of `n` distinct free cells, in lexicographic row-major order.
pub fn all_goal_profiles(map: &GridMap, n: usize) -> Vec<GoalProfile> {
    let m = map.free_count();
    let mut out = Vec::new();
    if n == 0 || n > m {
        return out;
    }
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; m];
    fn rec(
        map: &GridMap,
        n: usize,
        current: &mut Vec<usize>,
        used: &mut [bool],
        out: &mut Vec<GoalProfile>,
    ) {
        if current.len() == n {
            out.push(GoalProfile {
                goals: current.iter().map(|&i| map.cell(i)).collect(),
            });
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                current.push(i);
                rec(map, n, current, used, out);
                current.pop();
                used[i] = false;
            }
        }
    }
    rec(map, n, &mut current, &mut used, &mut out);
    out
}
