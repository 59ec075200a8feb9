//! Global and local state spaces, the observation model and the joint
//! transition function.
//!
//! A global state lists one distinct free cell per agent. A local state is what
//! one agent perceives: its own cell, one sighting slot per other agent (the
//! slot is empty when that agent is outside the square field of view) and its
//! own goal. Obstacles do not occlude sightings.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::grid::{Action, Cell, GoalProfile, GridError, GridMap};
use crate::restrict::Scenario;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatesError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{agents} agents do not fit on {free} free cells")]
    NoStates { agents: usize, free: usize },
    #[error("a configuration needs at least one agent")]
    NoAgents,
    #[error("agent index {0} out of range")]
    AgentOutOfRange(usize),
    #[error("expected {expected} entries, got {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("invalid global state: {0}")]
    InvalidState(String),
    #[error("agent {agent} cannot take {action} at {cell}")]
    InvalidAction {
        agent: usize,
        action: Action,
        cell: Cell,
    },
    #[error("state space too large: {0} global states")]
    TooLarge(u128),
    #[error("overflow while estimating local-state count")]
    Overflow,
    #[error("cannot parse local state {0:?}")]
    BadLocalState(String),
    #[error("cannot parse sensor range {0:?}")]
    BadSensor(String),
}

/// Radius of the square field of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SensorRange {
    Range(usize),
    /// Sees the whole map.
    Full,
}

impl SensorRange {
    /// Number of cells other than the centre inside the field of view on an
    /// unbounded grid, `(2r+1)^2 - 1`.
    pub fn interior_size(self, map: &GridMap) -> usize {
        match self {
            SensorRange::Range(r) => (2 * r + 1) * (2 * r + 1) - 1,
            SensorRange::Full => map.rows() * map.cols() - 1,
        }
    }
}

impl fmt::Display for SensorRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorRange::Range(r) => write!(f, "{r}"),
            SensorRange::Full => f.write_str("full"),
        }
    }
}

impl FromStr for SensorRange {
    type Err = StatesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("full") {
            return Ok(SensorRange::Full);
        }
        t.parse()
            .map(SensorRange::Range)
            .map_err(|_| StatesError::BadSensor(s.to_string()))
    }
}

/// Whether `b` is a sighting from `a`: distinct cells within Chebyshev distance `r`.
pub fn within_fov(range: SensorRange, a: Cell, b: Cell) -> bool {
    if a == b {
        return false;
    }
    match range {
        SensorRange::Full => true,
        SensorRange::Range(r) => a.chebyshev(b) <= r,
    }
}

/// A problem instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    pub map: GridMap,
    pub sensor: SensorRange,
    pub goals: GoalProfile,
    pub scenario: Scenario,
}

impl Configuration {
    pub fn new(
        map: GridMap,
        sensor: SensorRange,
        goals: Vec<Cell>,
        scenario: Scenario,
    ) -> Result<Self, StatesError> {
        if goals.is_empty() {
            return Err(StatesError::NoAgents);
        }
        let goals = GoalProfile::new(&map, goals)?;
        Ok(Self {
            map,
            sensor,
            goals,
            scenario,
        })
    }

    pub fn agents(&self) -> usize {
        self.goals.len()
    }

    pub fn with_scenario(&self, scenario: Scenario) -> Self {
        Self {
            scenario,
            ..self.clone()
        }
    }

    pub fn with_sensor(&self, sensor: SensorRange) -> Self {
        Self {
            sensor,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GlobalState {
    pub positions: Vec<Cell>,
}

impl GlobalState {
    pub fn new(positions: Vec<Cell>) -> Self {
        Self { positions }
    }

    pub fn validate(&self, cfg: &Configuration) -> Result<(), StatesError> {
        if self.positions.len() != cfg.agents() {
            return Err(StatesError::ArityMismatch {
                expected: cfg.agents(),
                found: self.positions.len(),
            });
        }
        for (i, &p) in self.positions.iter().enumerate() {
            if !cfg.map.is_free(p) {
                return Err(StatesError::InvalidState(format!("{p} is not a free cell")));
            }
            if self.positions[..i].contains(&p) {
                return Err(StatesError::InvalidState(format!(
                    "two agents share {p}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for GlobalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, p) in self.positions.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{p}")?;
        }
        f.write_str(")")
    }
}

/// One agent's observation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocalState {
    pub position: Cell,
    /// One slot per other agent, ascending agent index; `None` when unseen.
    pub others: Vec<Option<Cell>>,
    pub goal: Cell,
}

impl LocalState {
    pub fn at_goal(&self) -> bool {
        self.position == self.goal
    }

    pub fn sees_anyone(&self) -> bool {
        self.others.iter().any(Option::is_some)
    }

    pub fn visible(&self) -> impl Iterator<Item = Cell> + '_ {
        self.others.iter().flatten().copied()
    }
}

impl fmt::Display for LocalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "self={}", self.position)?;
        for (k, slot) in self.others.iter().enumerate() {
            match slot {
                Some(c) => write!(f, ";o{}={c}", k + 1)?,
                None => write!(f, ";o{}=ABS", k + 1)?,
            }
        }
        write!(f, ";goal={}", self.goal)
    }
}

impl FromStr for LocalState {
    type Err = StatesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || StatesError::BadLocalState(s.to_string());
        let fields: Vec<&str> = s.trim().split(';').collect();
        if fields.len() < 2 {
            return Err(bad());
        }
        let value = |field: &str, key: &str| -> Result<String, StatesError> {
            let (k, v) = field.split_once('=').ok_or_else(bad)?;
            if k != key {
                return Err(bad());
            }
            Ok(v.to_string())
        };
        let position: Cell = value(fields[0], "self")?.parse().map_err(|_| bad())?;
        let goal: Cell = value(fields[fields.len() - 1], "goal")?
            .parse()
            .map_err(|_| bad())?;
        let mut others = Vec::with_capacity(fields.len() - 2);
        for (k, field) in fields[1..fields.len() - 1].iter().enumerate() {
            let v = value(field, &format!("o{}", k + 1))?;
            if v == "ABS" {
                others.push(None);
            } else {
                others.push(Some(v.parse().map_err(|_| bad())?));
            }
        }
        Ok(LocalState {
            position,
            others,
            goal,
        })
    }
}

/// What agent `agent` perceives in global state `s`.
pub fn observe(
    cfg: &Configuration,
    s: &GlobalState,
    agent: usize,
) -> Result<LocalState, StatesError> {
    if agent >= s.positions.len() || agent >= cfg.agents() {
        return Err(StatesError::AgentOutOfRange(agent));
    }
    let me = s.positions[agent];
    let others = s
        .positions
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != agent)
        .map(|(_, &p)| within_fov(cfg.sensor, me, p).then_some(p))
        .collect();
    Ok(LocalState {
        position: me,
        others,
        goal: cfg.goals.goal(agent),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConflictKind {
    Vertex,
    Edge,
}

impl fmt::Display for ConflictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConflictKind::Vertex => "vertex",
            ConflictKind::Edge => "edge",
        })
    }
}

/// A collision between agents `agents.0 < agents.1`. For a vertex conflict
/// both cells are the shared destination; for an edge conflict they are the
/// two agents' cells before the swap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Conflict {
    pub kind: ConflictKind,
    pub agents: (usize, usize),
    pub cells: (Cell, Cell),
}

impl fmt::Display for Conflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ConflictKind::Vertex => write!(
                f,
                "vertex conflict between agents {} and {} at {}",
                self.agents.0, self.agents.1, self.cells.0
            ),
            ConflictKind::Edge => write!(
                f,
                "edge conflict between agents {} and {} swapping {} and {}",
                self.agents.0, self.agents.1, self.cells.0, self.cells.1
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Successor {
    Next(GlobalState),
    Conflict(Conflict),
}

/// Joint move. Vertex conflicts are reported before edge conflicts.
pub fn transition(
    cfg: &Configuration,
    s: &GlobalState,
    acts: &[Action],
) -> Result<Successor, StatesError> {
    s.validate(cfg)?;
    if acts.len() != cfg.agents() {
        return Err(StatesError::ArityMismatch {
            expected: cfg.agents(),
            found: acts.len(),
        });
    }
    let mut next = Vec::with_capacity(acts.len());
    for (agent, (&cell, &action)) in s.positions.iter().zip(acts).enumerate() {
        match cfg.map.apply_action(cell, action)? {
            Some(dest) => next.push(dest),
            None => {
                return Err(StatesError::InvalidAction {
                    agent,
                    action,
                    cell,
                })
            }
        }
    }
    let n = next.len();
    for i in 0..n {
        for j in i + 1..n {
            if next[i] == next[j] {
                return Ok(Successor::Conflict(Conflict {
                    kind: ConflictKind::Vertex,
                    agents: (i, j),
                    cells: (next[i], next[i]),
                }));
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if next[i] == s.positions[j] && next[j] == s.positions[i] {
                return Ok(Successor::Conflict(Conflict {
                    kind: ConflictKind::Edge,
                    agents: (i, j),
                    cells: (s.positions[i], s.positions[j]),
                }));
            }
        }
    }
    Ok(Successor::Next(GlobalState::new(next)))
}

const DENSE_INDEX_LIMIT: u128 = 1 << 24;

#[derive(Debug, Clone)]
enum StateIndex {
    Dense(Vec<u32>),
    Sparse(HashMap<Vec<u16>, u32>),
}

/// Every placement of `n` agents on distinct free cells, in lexicographic
/// order of free-cell indices.
#[derive(Debug, Clone)]
pub struct StateSpace {
    agents: usize,
    cells: Vec<Cell>,
    positions: Vec<u16>,
    index: StateIndex,
    goal: usize,
}

/// Index-level result of a joint move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Step {
    Next(usize),
    Conflict(ConflictKind, usize, usize),
    Invalid(usize),
}

impl StateSpace {
    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.agents
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Index of the state with every agent on its goal.
    pub fn goal_index(&self) -> usize {
        self.goal
    }

    pub(crate) fn cells_of(&self, s: usize) -> &[u16] {
        &self.positions[s * self.agents..(s + 1) * self.agents]
    }

    pub fn state(&self, s: usize) -> GlobalState {
        GlobalState::new(
            self.cells_of(s)
                .iter()
                .map(|&c| self.cells[c as usize])
                .collect(),
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = GlobalState> + '_ {
        (0..self.len()).map(|s| self.state(s))
    }

    pub(crate) fn index_of_cells(&self, cells: &[u16]) -> Option<usize> {
        match &self.index {
            StateIndex::Dense(table) => {
                let m = self.cells.len();
                let key = cells.iter().fold(0usize, |acc, &c| acc * m + c as usize);
                match table[key] {
                    u32::MAX => None,
                    i => Some(i as usize),
                }
            }
            StateIndex::Sparse(map) => map.get(cells).map(|&i| i as usize),
        }
    }

    pub fn index_of(&self, map: &GridMap, s: &GlobalState) -> Option<usize> {
        if s.positions.len() != self.agents {
            return None;
        }
        let cells: Option<Vec<u16>> = s
            .positions
            .iter()
            .map(|&p| map.index_of(p).map(|i| i as u16))
            .collect();
        self.index_of_cells(&cells?)
    }

    /// Joint move on indices; `action(i)` gives agent `i`'s action.
    pub(crate) fn step(
        &self,
        map: &GridMap,
        s: usize,
        mut action: impl FnMut(usize) -> Action,
    ) -> Step {
        let cur = self.cells_of(s);
        let n = self.agents;
        let mut next = [0u16; MAX_AGENTS];
        for i in 0..n {
            match map.move_index(cur[i] as usize, action(i)) {
                Some(d) => next[i] = d as u16,
                None => return Step::Invalid(i),
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if next[i] == next[j] {
                    return Step::Conflict(ConflictKind::Vertex, i, j);
                }
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if next[i] == cur[j] && next[j] == cur[i] {
                    return Step::Conflict(ConflictKind::Edge, i, j);
                }
            }
        }
        Step::Next(
            self.index_of_cells(&next[..n])
                .expect("distinct free cells form a state"),
        )
    }
}

/// Upper bound on agents supported by the packed index-level routines.
pub const MAX_AGENTS: usize = 10;

pub fn enumerate_global_states(cfg: &Configuration) -> Result<StateSpace, StatesError> {
    let n = cfg.agents();
    let m = cfg.map.free_count();
    if n > m {
        return Err(StatesError::NoStates { agents: n, free: m });
    }
    if n > MAX_AGENTS {
        return Err(StatesError::TooLarge(u128::MAX));
    }
    let count: u128 = (0..n).map(|k| (m - k) as u128).product();
    if count > u32::MAX as u128 / 2 {
        return Err(StatesError::TooLarge(count));
    }
    let mut positions = Vec::with_capacity(count as usize * n);
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; m];
    fn rec(n: usize, current: &mut Vec<u16>, used: &mut [bool], out: &mut Vec<u16>) {
        if current.len() == n {
            out.extend_from_slice(current);
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                current.push(c as u16);
                rec(n, current, used, out);
                current.pop();
                used[c] = false;
            }
        }
    }
    rec(n, &mut current, &mut used, &mut positions);

    let dense_size = (m as u128).pow(n as u32);
    let index = if dense_size <= DENSE_INDEX_LIMIT {
        let mut table = vec![u32::MAX; dense_size as usize];
        for (s, chunk) in positions.chunks(n).enumerate() {
            let key = chunk.iter().fold(0usize, |acc, &c| acc * m + c as usize);
            table[key] = s as u32;
        }
        StateIndex::Dense(table)
    } else {
        StateIndex::Sparse(
            positions
                .chunks(n)
                .enumerate()
                .map(|(s, chunk)| (chunk.to_vec(), s as u32))
                .collect(),
        )
    };
    let mut space = StateSpace {
        agents: n,
        cells: cfg.map.free_cells().to_vec(),
        positions,
        index,
        goal: 0,
    };
    let goal_cells: Vec<u16> = cfg
        .goals
        .cells()
        .iter()
        .map(|&g| cfg.map.index_of(g).unwrap() as u16)
        .collect();
    space.goal = space
        .index_of_cells(&goal_cells)
        .expect("goal profile is a valid global state");
    Ok(space)
}

/// The realizable local states of one agent, sorted.
#[derive(Debug, Clone)]
pub struct LocalStateTable {
    agent: usize,
    states: Vec<LocalState>,
    index: HashMap<LocalState, u32>,
}

impl LocalStateTable {
    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[LocalState] {
        &self.states
    }

    pub fn get(&self, id: usize) -> &LocalState {
        &self.states[id]
    }

    pub fn id_of(&self, ls: &LocalState) -> Option<usize> {
        self.index.get(ls).map(|&i| i as usize)
    }

    pub fn contains(&self, ls: &LocalState) -> bool {
        self.index.contains_key(ls)
    }
}

/// Local states agent `agent` can actually be in: its own cell, then for each
/// other agent either a distinct cell inside the field of view or absence,
/// with enough free cells outside the field of view to hold the absent ones.
pub fn enumerate_local_states(
    cfg: &Configuration,
    agent: usize,
) -> Result<LocalStateTable, StatesError> {
    let n = cfg.agents();
    if agent >= n {
        return Err(StatesError::AgentOutOfRange(agent));
    }
    let m = cfg.map.free_count();
    if n > m {
        return Err(StatesError::NoStates { agents: n, free: m });
    }
    let free = cfg.map.free_cells();
    let goal = cfg.goals.goal(agent);
    let mut states = Vec::new();
    for &me in free {
        let visible: Vec<Cell> = free
            .iter()
            .copied()
            .filter(|&c| within_fov(cfg.sensor, me, c))
            .collect();
        let outside = m - 1 - visible.len();
        let mut slots = Vec::with_capacity(n - 1);
        fill_slots(n - 1, &visible, outside, &mut slots, &mut |others| {
            states.push(LocalState {
                position: me,
                others: others.to_vec(),
                goal,
            })
        });
    }
    states.sort();
    let index = states
        .iter()
        .enumerate()
        .map(|(i, ls)| (ls.clone(), i as u32))
        .collect();
    Ok(LocalStateTable {
        agent,
        states,
        index,
    })
}

fn fill_slots(
    remaining: usize,
    visible: &[Cell],
    absent_budget: usize,
    slots: &mut Vec<Option<Cell>>,
    emit: &mut impl FnMut(&[Option<Cell>]),
) {
    if remaining == 0 {
        emit(slots);
        return;
    }
    if absent_budget > 0 {
        slots.push(None);
        fill_slots(remaining - 1, visible, absent_budget - 1, slots, emit);
        slots.pop();
    }
    for &c in visible {
        if !slots.contains(&Some(c)) {
            slots.push(Some(c));
            fill_slots(remaining - 1, visible, absent_budget, slots, emit);
            slots.pop();
        }
    }
}

/// `m * C(k + n - 1, n - 1)`: the rough per-agent local-state count for `m`
/// positions, `k` cells in the field of view and `n` agents.
pub fn estimate_local_state_count(m: u64, k: u64, n: u64) -> Result<u64, StatesError> {
    if m == 0 || k == 0 || n == 0 {
        return Err(StatesError::InvalidState(
            "estimate needs M, K, n >= 1".to_string(),
        ));
    }
    let top = k + n - 1;
    let choose = n - 1;
    // Multiplicative binomial; each partial product is itself a binomial, so the
    // division is exact.
    let mut binom: u128 = 1;
    for i in 0..choose {
        binom = binom
            .checked_mul((top - i) as u128)
            .ok_or(StatesError::Overflow)?
            / (i as u128 + 1);
    }
    let total = binom.checked_mul(m as u128).ok_or(StatesError::Overflow)?;
    u64::try_from(total).map_err(|_| StatesError::Overflow)
}

/// Enumerated state spaces for one configuration, plus the local-state id each
/// agent observes in each global state.
#[derive(Debug, Clone)]
pub struct StateModel {
    pub cfg: Configuration,
    pub space: StateSpace,
    pub locals: Vec<LocalStateTable>,
    obs: Vec<u32>,
}

impl StateModel {
    pub fn build(cfg: &Configuration) -> Result<Self, StatesError> {
        let space = enumerate_global_states(cfg)?;
        let n = cfg.agents();
        let locals = (0..n)
            .map(|i| enumerate_local_states(cfg, i))
            .collect::<Result<Vec<_>, _>>()?;
        let mut obs = Vec::with_capacity(space.len() * n);
        for s in 0..space.len() {
            let gs = space.state(s);
            for (i, table) in locals.iter().enumerate() {
                let ls = observe(cfg, &gs, i)?;
                let id = table
                    .id_of(&ls)
                    .expect("every observation is a realizable local state");
                obs.push(id as u32);
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            space,
            locals,
            obs,
        })
    }

    pub fn agents(&self) -> usize {
        self.space.agents()
    }

    /// Local-state id of `agent` in global state index `s`.
    pub fn observation(&self, s: usize, agent: usize) -> usize {
        self.obs[s * self.space.agents() + agent] as usize
    }

    pub fn local(&self, agent: usize, id: usize) -> &LocalState {
        self.locals[agent].get(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::restrict::Scenario;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn cfg(map: &str, sensor: SensorRange, goals: &[(usize, usize)]) -> Configuration {
        Configuration::new(
            map.parse().unwrap(),
            sensor,
            goals.iter().map(|&g| g.into()).collect(),
            Scenario::default(),
        )
        .unwrap()
    }

    fn empty(rows: usize, cols: usize) -> String {
        format!("{}\n", ".".repeat(cols)).repeat(rows)
    }

    #[test]
    fn fov_examples() {
        let r2 = SensorRange::Range(2);
        assert!(within_fov(r2, Cell::new(0, 0), Cell::new(2, 2)));
        assert!(!within_fov(r2, Cell::new(0, 0), Cell::new(3, 0)));
        assert!(!within_fov(SensorRange::Range(1), Cell::new(1, 1), Cell::new(1, 1)));
        assert!(within_fov(SensorRange::Full, Cell::new(0, 0), Cell::new(9, 9)));
        assert!(!within_fov(SensorRange::Full, Cell::new(4, 4), Cell::new(4, 4)));
    }

    #[test]
    fn observe_examples() {
        let c = cfg(&empty(1, 4), SensorRange::Range(1), &[(0, 0), (0, 3)]);
        let near = GlobalState::new(vec![Cell::new(0, 0), Cell::new(0, 1)]);
        assert_eq!(observe(&c, &near, 0).unwrap().others, vec![Some(Cell::new(0, 1))]);
        let far = GlobalState::new(vec![Cell::new(0, 0), Cell::new(0, 3)]);
        let ls = observe(&c, &far, 0).unwrap();
        assert_eq!(ls.others, vec![None]);
        assert_eq!(ls.goal, Cell::new(0, 0));
        assert!(observe(&c, &far, 2).is_err());
    }

    #[test]
    fn global_state_counts() {
        let c = cfg(&empty(3, 3), SensorRange::Range(1), &[(0, 0), (2, 2)]);
        assert_eq!(enumerate_global_states(&c).unwrap().len(), 72);
        let c = cfg(&empty(1, 2), SensorRange::Range(1), &[(0, 0), (0, 1)]);
        assert_eq!(enumerate_global_states(&c).unwrap().len(), 2);
        // Two 3x3 chambers joined by a one-cell hallway: 19 free cells.
        let c = cfg(
            "...#...\n.......\n...#...\n",
            SensorRange::Range(2),
            &[(0, 0), (1, 5), (2, 6)],
        );
        assert_eq!(c.map.free_count(), 19);
        assert_eq!(enumerate_global_states(&c).unwrap().len(), 19 * 18 * 17);
    }

    #[test]
    fn single_cell_single_agent() {
        let one = cfg(".#\n", SensorRange::Range(1), &[(0, 0)]);
        let space = enumerate_global_states(&one).unwrap();
        assert_eq!(space.len(), 1);
        assert_eq!(space.goal_index(), 0);
    }

    #[test]
    fn local_state_examples() {
        let c = cfg(&empty(1, 2), SensorRange::Range(1), &[(0, 0), (0, 1)]);
        let t = enumerate_local_states(&c, 0).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.states().iter().all(|ls| ls.sees_anyone()));
        let single = cfg(&empty(3, 4), SensorRange::Range(1), &[(1, 1)]);
        assert_eq!(enumerate_local_states(&single, 0).unwrap().len(), 12);
    }

    #[test]
    fn local_state_count_on_4x4_three_agents() {
        let c = cfg(&empty(4, 4), SensorRange::Range(2), &[(0, 0), (1, 1), (3, 3)]);
        let count = enumerate_local_states(&c, 0).unwrap().len() as f64;
        let estimate = estimate_local_state_count(16, 24, 3).unwrap() as f64;
        assert!(count > estimate / 3.0 && count < estimate * 3.0, "count {count}");
    }

    #[test]
    fn estimate_examples() {
        assert_eq!(estimate_local_state_count(16, 24, 3).unwrap(), 16 * 325);
        assert_eq!(estimate_local_state_count(7, 24, 1).unwrap(), 7);
        assert_eq!(estimate_local_state_count(1, 1, 2).unwrap(), 2);
        assert_eq!(
            estimate_local_state_count(u64::MAX, 1_000_000, 30),
            Err(StatesError::Overflow)
        );
        assert!(estimate_local_state_count(0, 1, 1).is_err());
    }

    #[test]
    fn transition_examples() {
        let c = cfg(&empty(1, 3), SensorRange::Range(1), &[(0, 0), (0, 2)]);
        let s = GlobalState::new(vec![Cell::new(0, 0), Cell::new(0, 2)]);
        match transition(&c, &s, &[Action::Right, Action::Left]).unwrap() {
            Successor::Conflict(k) => {
                assert_eq!(k.kind, ConflictKind::Vertex);
                assert_eq!(k.cells.0, Cell::new(0, 1));
            }
            other => panic!("expected conflict, got {other:?}"),
        }
        assert_eq!(
            transition(&c, &s, &[Action::Nil, Action::Nil]).unwrap(),
            Successor::Next(s.clone())
        );
        assert!(matches!(
            transition(&c, &s, &[Action::Left, Action::Nil]),
            Err(StatesError::InvalidAction { agent: 0, .. })
        ));

        let c = cfg(&empty(1, 2), SensorRange::Range(1), &[(0, 0), (0, 1)]);
        let s = GlobalState::new(vec![Cell::new(0, 0), Cell::new(0, 1)]);
        match transition(&c, &s, &[Action::Right, Action::Left]).unwrap() {
            Successor::Conflict(k) => assert_eq!(k.kind, ConflictKind::Edge),
            other => panic!("expected conflict, got {other:?}"),
        }
    }

    #[test]
    fn following_into_a_vacated_cell_is_allowed() {
        let c = cfg(&empty(1, 3), SensorRange::Range(1), &[(0, 1), (0, 2)]);
        let s = GlobalState::new(vec![Cell::new(0, 0), Cell::new(0, 1)]);
        assert_eq!(
            transition(&c, &s, &[Action::Right, Action::Right]).unwrap(),
            Successor::Next(GlobalState::new(vec![Cell::new(0, 1), Cell::new(0, 2)]))
        );
    }

    #[test]
    fn local_state_text_round_trip() {
        let ls = LocalState {
            position: Cell::new(1, 2),
            others: vec![Some(Cell::new(0, 0)), None],
            goal: Cell::new(3, 3),
        };
        let text = ls.to_string();
        assert_eq!(text, "self=(1,2);o1=(0,0);o2=ABS;goal=(3,3)");
        assert_eq!(text.parse::<LocalState>().unwrap(), ls);
        assert!("self=(1,2);o2=ABS;goal=(3,3)".parse::<LocalState>().is_err());
        assert!("goal=(3,3)".parse::<LocalState>().is_err());
    }

    fn image_of_observe(c: &Configuration, agent: usize) -> BTreeSet<LocalState> {
        enumerate_global_states(c)
            .unwrap()
            .iter()
            .map(|s| observe(c, &s, agent).unwrap())
            .collect()
    }

    #[test]
    fn enumeration_equals_image_of_observe() {
        let maps = [empty(2, 2), empty(3, 3), "..#\n...\n#..\n".to_string(), empty(4, 4), empty(1, 4)];
        for map in &maps {
            let grid: GridMap = map.parse().unwrap();
            for n in 1..=3 {
                if n > grid.free_count() {
                    continue;
                }
                // Skip the largest combination to keep the test fast.
                if grid.free_count() == 16 && n == 3 {
                    continue;
                }
                let goals: Vec<(usize, usize)> = grid.free_cells()[..n].iter().map(|c| (c.row, c.col)).collect();
                for sensor in [SensorRange::Range(0), SensorRange::Range(1), SensorRange::Range(2), SensorRange::Full] {
                    let c = cfg(map, sensor, &goals);
                    for agent in 0..n {
                        let table: BTreeSet<LocalState> =
                            enumerate_local_states(&c, agent).unwrap().states().iter().cloned().collect();
                        assert_eq!(table, image_of_observe(&c, agent), "map {map:?} n={n} sensor={sensor}");
                    }
                }
            }
        }
    }

    #[test]
    fn index_step_agrees_with_transition() {
        let c = cfg("..#\n...\n#..\n", SensorRange::Range(1), &[(0, 0), (2, 2), (1, 1)]);
        let space = enumerate_global_states(&c).unwrap();
        for s in 0..space.len() {
            let gs = space.state(s);
            assert_eq!(space.index_of(&c.map, &gs), Some(s));
            for code in 0..125usize {
                let acts: Vec<Action> = (0..3).map(|i| Action::ALL[(code / 5usize.pow(i)) % 5]).collect();
                let fast = space.step(&c.map, s, |i| acts[i]);
                match (transition(&c, &gs, &acts), fast) {
                    (Err(_), Step::Invalid(_)) => {}
                    (Ok(Successor::Next(t)), Step::Next(k)) => assert_eq!(space.state(k), t),
                    (Ok(Successor::Conflict(k)), Step::Conflict(kind, i, j)) => {
                        assert_eq!((k.kind, k.agents), (kind, (i, j)))
                    }
                    (slow, fast) => panic!("mismatch {slow:?} vs {fast:?}"),
                }
            }
        }
    }

    #[test]
    fn full_sensor_observation_is_injective() {
        let c = cfg(&empty(3, 3), SensorRange::Full, &[(0, 0), (1, 1), (2, 2)]);
        let space = enumerate_global_states(&c).unwrap();
        for agent in 0..3 {
            let seen: BTreeSet<LocalState> = space.iter().map(|s| observe(&c, &s, agent).unwrap()).collect();
            assert_eq!(seen.len(), space.len());
        }
    }

    proptest! {
        #[test]
        fn transition_is_permutation_equivariant(
            seed in 0usize..10_000,
            a in proptest::collection::vec(0usize..5, 3),
            perm_idx in 0usize..6,
        ) {
            let c = cfg(&empty(3, 3), SensorRange::Range(1), &[(0, 0), (1, 1), (2, 2)]);
            let space = enumerate_global_states(&c).unwrap();
            let s = space.state(seed % space.len());
            let acts: Vec<Action> = a.iter().map(|&k| Action::ALL[k]).collect();
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let p = perms[perm_idx];
            let goals: Vec<(usize, usize)> = p.iter().map(|&k| (c.goals.goal(k).row, c.goals.goal(k).col)).collect();
            let c2 = cfg(&empty(3, 3), SensorRange::Range(1), &goals);
            let s2 = GlobalState::new(p.iter().map(|&k| s.positions[k]).collect());
            let acts2: Vec<Action> = p.iter().map(|&k| acts[k]).collect();
            match (transition(&c, &s, &acts), transition(&c2, &s2, &acts2)) {
                (Ok(Successor::Next(t)), Ok(Successor::Next(t2))) => {
                    let permuted: Vec<Cell> = p.iter().map(|&k| t.positions[k]).collect();
                    prop_assert_eq!(permuted, t2.positions);
                }
                (Ok(Successor::Conflict(x)), Ok(Successor::Conflict(y))) => prop_assert_eq!(x.kind, y.kind),
                (Err(_), Err(_)) => {}
                (x, y) => prop_assert!(false, "{:?} vs {:?}", x, y),
            }
        }

        #[test]
        fn transition_never_duplicates(seed in 0usize..10_000, a in proptest::collection::vec(0usize..5, 3)) {
            let c = cfg(&empty(3, 3), SensorRange::Range(1), &[(0, 0), (1, 1), (2, 2)]);
            let space = enumerate_global_states(&c).unwrap();
            let s = space.state(seed % space.len());
            let acts: Vec<Action> = a.iter().map(|&k| Action::ALL[k]).collect();
            if let Ok(Successor::Next(t)) = transition(&c, &s, &acts) {
                prop_assert!(t.validate(&c).is_ok());
            }
        }
    }
}
