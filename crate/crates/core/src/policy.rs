//! Policy profiles, their execution, and feasibility verification.
//!
//! Under a deterministic profile every global state has exactly one
//! successor, so feasibility is a walk over a functional graph: each state
//! must reach the goal state without a collision and without revisiting a
//! state. This module shares no code with the solver's propagation and is the
//! reference the solver is checked against.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::grid::Action;
use crate::par::{self, Parallelism};
use crate::states::{
    self, enumerate_global_states, enumerate_local_states, observe, Conflict, Configuration,
    GlobalState, LocalState, StateSpace, StatesError, Step, Successor,
};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    States(#[from] StatesError),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error("expected rules for {expected} agents, got {found}")]
    AgentCount { expected: usize, found: usize },
    #[error("agent {agent}: no action for local state {state}")]
    Missing { agent: usize, state: LocalState },
    #[error("agent {agent}: {state} is not a realizable local state")]
    Unknown { agent: usize, state: LocalState },
    #[error("agent {agent}: must stop at its goal in {state}, got {action}")]
    MovesAtGoal {
        agent: usize,
        state: LocalState,
        action: Action,
    },
    #[error("agent {agent}: {action} is not available in {state}")]
    Unavailable {
        agent: usize,
        state: LocalState,
        action: Action,
    },
    #[error("policy profile is infeasible; the metric is undefined")]
    Infeasible,
    #[error("policy file line {line}: {message}")]
    File { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One deterministic policy per agent, total over its realizable local states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyProfile {
    rules: Vec<BTreeMap<LocalState, Action>>,
}

impl PolicyProfile {
    /// Validates totality, the stop-at-goal rule and action availability.
    pub fn new(
        cfg: &Configuration,
        rules: Vec<BTreeMap<LocalState, Action>>,
    ) -> Result<Self, PolicyError> {
        let n = cfg.agents();
        if rules.len() != n {
            return Err(PolicyError::AgentCount {
                expected: n,
                found: rules.len(),
            });
        }
        for (agent, map) in rules.iter().enumerate() {
            let table = enumerate_local_states(cfg, agent)?;
            for ls in table.states() {
                if !map.contains_key(ls) {
                    return Err(PolicyError::Missing {
                        agent,
                        state: ls.clone(),
                    });
                }
            }
            for (ls, &action) in map {
                if !table.contains(ls) {
                    return Err(PolicyError::Unknown {
                        agent,
                        state: ls.clone(),
                    });
                }
                if ls.at_goal() && action != Action::Nil {
                    return Err(PolicyError::MovesAtGoal {
                        agent,
                        state: ls.clone(),
                        action,
                    });
                }
                if !cfg.map.available_actions(ls.position)?.contains(action) {
                    return Err(PolicyError::Unavailable {
                        agent,
                        state: ls.clone(),
                        action,
                    });
                }
            }
        }
        Ok(Self { rules })
    }

    /// Builds a profile by querying `choose` for every realizable local state.
    pub fn from_fn(
        cfg: &Configuration,
        mut choose: impl FnMut(usize, &LocalState) -> Action,
    ) -> Result<Self, PolicyError> {
        let mut rules = Vec::with_capacity(cfg.agents());
        for agent in 0..cfg.agents() {
            let table = enumerate_local_states(cfg, agent)?;
            rules.push(
                table
                    .states()
                    .iter()
                    .map(|ls| (ls.clone(), choose(agent, ls)))
                    .collect(),
            );
        }
        Self::new(cfg, rules)
    }

    pub fn agents(&self) -> usize {
        self.rules.len()
    }

    pub fn action(&self, agent: usize, ls: &LocalState) -> Option<Action> {
        self.rules.get(agent)?.get(ls).copied()
    }

    pub fn rules(&self, agent: usize) -> &BTreeMap<LocalState, Action> {
        &self.rules[agent]
    }

    /// Relabels agents: agent `k` of the result is agent `perm[k]` of `self`.
    /// Sighting slots are reordered to follow the new agent order.
    pub fn permuted(&self, cfg_permuted: &Configuration, perm: &[usize]) -> Result<Self, PolicyError> {
        let n = perm.len();
        let mut rules = Vec::with_capacity(n);
        for k in 0..n {
            let old = perm[k];
            let mut map = BTreeMap::new();
            for (ls, &a) in &self.rules[old] {
                // Old slot order lists old agents except `old`; rebuild by new order.
                let old_others: Vec<usize> = (0..n).filter(|&j| j != old).collect();
                let by_old_agent = |j: usize| ls.others[old_others.iter().position(|&x| x == j).unwrap()];
                let others = (0..n)
                    .filter(|&j| j != k)
                    .map(|j| by_old_agent(perm[j]))
                    .collect();
                map.insert(
                    LocalState {
                        position: ls.position,
                        others,
                        goal: ls.goal,
                    },
                    a,
                );
            }
            rules.push(map);
        }
        Self::new(cfg_permuted, rules)
    }
}

/// Why a trajectory failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailureKind {
    Collision(Conflict),
    LivelockCycle,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureKind::Collision(c) => write!(f, "collision ({c})"),
            FailureKind::LivelockCycle => f.write_str("livelock-cycle"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub initial: GlobalState,
    pub kind: FailureKind,
    /// From `initial` up to the state where the collision happens or the
    /// first revisited state.
    pub trace: Vec<GlobalState>,
}

/// Makespan of every global state under a feasible profile.
#[derive(Debug, Clone)]
pub struct DistTable {
    space: Arc<StateSpace>,
    map: crate::grid::GridMap,
    dist: Vec<u32>,
}

impl DistTable {
    pub fn get(&self, s: &GlobalState) -> Option<u32> {
        self.space.index_of(&self.map, s).map(|i| self.dist[i])
    }

    pub fn values(&self) -> &[u32] {
        &self.dist
    }

    pub fn iter(&self) -> impl Iterator<Item = (GlobalState, u32)> + '_ {
        self.space.iter().zip(self.dist.iter().copied())
    }

    pub fn total(&self) -> u64 {
        self.dist.iter().map(|&d| d as u64).sum()
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub feasible: bool,
    pub dist: Option<DistTable>,
    pub counterexample: Option<Counterexample>,
}

impl VerificationReport {
    pub fn sum_of_makespan(&self) -> Option<u64> {
        self.dist.as_ref().map(DistTable::total)
    }
}

/// Actions of all agents in `s`.
fn joint_action(
    cfg: &Configuration,
    s: &GlobalState,
    p: &PolicyProfile,
) -> Result<Vec<Action>, PolicyError> {
    (0..cfg.agents())
        .map(|i| {
            let ls = observe(cfg, s, i)?;
            p.action(i, &ls)
                .ok_or(PolicyError::Missing { agent: i, state: ls })
        })
        .collect()
}

pub fn step(
    cfg: &Configuration,
    s: &GlobalState,
    p: &PolicyProfile,
) -> Result<Successor, PolicyError> {
    let acts = joint_action(cfg, s, p)?;
    Ok(states::transition(cfg, s, &acts)?)
}

pub fn verify(cfg: &Configuration, p: &PolicyProfile) -> Result<VerificationReport, PolicyError> {
    verify_with(cfg, p, Parallelism::Auto)
}

/// Like [`verify`]; `par` controls how successor computation is spread.
pub fn verify_with(
    cfg: &Configuration,
    p: &PolicyProfile,
    par: Parallelism,
) -> Result<VerificationReport, PolicyError> {
    if p.agents() != cfg.agents() {
        return Err(PolicyError::AgentCount {
            expected: cfg.agents(),
            found: p.agents(),
        });
    }
    let space = Arc::new(enumerate_global_states(cfg)?);
    let succ: Vec<Result<Step, PolicyError>> = par::map_range(space.len(), par, |s| {
        let acts = joint_action(cfg, &space.state(s), p)?;
        Ok(space.step(&cfg.map, s, |i| acts[i]))
    });
    let succ: Vec<Step> = succ.into_iter().collect::<Result<_, _>>()?;

    const WHITE: u8 = 0;
    const GRAY: u8 = 1;
    const BLACK: u8 = 2;
    let goal = space.goal_index();
    let mut color = vec![WHITE; space.len()];
    let mut dist = vec![0u32; space.len()];
    color[goal] = BLACK;
    let mut path = Vec::new();
    for start in 0..space.len() {
        if color[start] == BLACK {
            continue;
        }
        path.clear();
        let mut cur = start;
        let base = loop {
            match color[cur] {
                BLACK => break dist[cur],
                GRAY => {
                    return Ok(failure(&space, &path, cur, FailureKind::LivelockCycle));
                }
                _ => {}
            }
            match succ[cur] {
                Step::Next(t) => {
                    color[cur] = GRAY;
                    path.push(cur);
                    cur = t;
                }
                Step::Conflict(..) => {
                    let gs = space.state(cur);
                    let conflict = match step(cfg, &gs, p)? {
                        Successor::Conflict(c) => c,
                        Successor::Next(_) => unreachable!("index step and transition disagree"),
                    };
                    return Ok(failure(&space, &path, cur, FailureKind::Collision(conflict)));
                }
                Step::Invalid(agent) => {
                    // PolicyProfile::new rules this out.
                    return Err(PolicyError::Unavailable {
                        agent,
                        state: observe(cfg, &space.state(cur), agent)?,
                        action: joint_action(cfg, &space.state(cur), p)?[agent],
                    });
                }
            }
        };
        let mut d = base;
        for &s in path.iter().rev() {
            d += 1;
            dist[s] = d;
            color[s] = BLACK;
        }
    }
    Ok(VerificationReport {
        feasible: true,
        dist: Some(DistTable {
            space,
            map: cfg.map.clone(),
            dist,
        }),
        counterexample: None,
    })
}

fn failure(space: &StateSpace, path: &[usize], last: usize, kind: FailureKind) -> VerificationReport {
    let trace: Vec<GlobalState> = path
        .iter()
        .chain(std::iter::once(&last))
        .map(|&s| space.state(s))
        .collect();
    VerificationReport {
        feasible: false,
        dist: None,
        counterexample: Some(Counterexample {
            initial: trace[0].clone(),
            kind,
            trace,
        }),
    }
}

/// Sum over all instantiations of the number of joint steps to the goal state.
pub fn sum_of_makespan(cfg: &Configuration, p: &PolicyProfile) -> Result<u64, PolicyError> {
    verify(cfg, p)?
        .sum_of_makespan()
        .ok_or(PolicyError::Infeasible)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceStatus {
    Goal,
    Collision(Conflict),
    Cycle,
    BudgetExhausted,
}

impl fmt::Display for TraceStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceStatus::Goal => f.write_str("goal"),
            TraceStatus::Collision(c) => write!(f, "collision {c}"),
            TraceStatus::Cycle => f.write_str("cycle"),
            TraceStatus::BudgetExhausted => f.write_str("budget-exhausted"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub states: Vec<GlobalState>,
    pub status: TraceStatus,
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (t, s) in self.states.iter().enumerate() {
            writeln!(f, "t={t} {s}")?;
        }
        writeln!(f, "status={}", self.status)
    }
}

/// Runs the profile from `init`, emitting at most `max_steps` states.
pub fn simulate(
    cfg: &Configuration,
    p: &PolicyProfile,
    init: &GlobalState,
    max_steps: usize,
) -> Result<Trace, PolicyError> {
    init.validate(cfg)?;
    let goal = GlobalState::new(cfg.goals.cells().to_vec());
    let mut states = Vec::new();
    let mut seen = HashSet::new();
    let mut cur = init.clone();
    loop {
        if states.len() >= max_steps {
            return Ok(Trace {
                states,
                status: TraceStatus::BudgetExhausted,
            });
        }
        states.push(cur.clone());
        if cur == goal {
            return Ok(Trace {
                states,
                status: TraceStatus::Goal,
            });
        }
        if !seen.insert(cur.clone()) {
            return Ok(Trace {
                states,
                status: TraceStatus::Cycle,
            });
        }
        match step(cfg, &cur, p)? {
            Successor::Next(next) => cur = next,
            Successor::Conflict(c) => {
                return Ok(Trace {
                    states,
                    status: TraceStatus::Collision(c),
                })
            }
        }
    }
}

pub const POLICY_HEADER: &str = "maupf-policy v1";

pub fn write_policy(p: &PolicyProfile, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{POLICY_HEADER}")?;
    for (agent, rules) in p.rules.iter().enumerate() {
        for (ls, action) in rules {
            writeln!(out, "agent={agent} {ls} action={action}")?;
        }
    }
    Ok(())
}

pub fn read_policy(cfg: &Configuration, input: impl BufRead) -> Result<PolicyProfile, PolicyError> {
    let n = cfg.agents();
    let tables = (0..n)
        .map(|i| enumerate_local_states(cfg, i))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rules: Vec<BTreeMap<LocalState, Action>> = vec![BTreeMap::new(); n];
    let err = |line: usize, message: String| PolicyError::File { line, message };
    let mut saw_header = false;
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim_end();
        if !saw_header {
            if line != POLICY_HEADER {
                return Err(err(lineno, format!("expected header {POLICY_HEADER:?}")));
            }
            saw_header = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(agent_tok), Some(state_tok), Some(action_tok), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(err(lineno, "expected `agent=<i> <local state> action=<A>`".into()));
        };
        let agent: usize = agent_tok
            .strip_prefix("agent=")
            .and_then(|a| a.parse().ok())
            .ok_or_else(|| err(lineno, format!("bad agent field {agent_tok:?}")))?;
        if agent >= n {
            return Err(err(lineno, format!("agent {agent} out of range for {n} agents")));
        }
        let ls: LocalState = state_tok
            .parse()
            .map_err(|e: StatesError| err(lineno, e.to_string()))?;
        if !tables[agent].contains(&ls) {
            return Err(err(lineno, format!("unknown local state {ls} for agent {agent}")));
        }
        let action: Action = action_tok
            .strip_prefix("action=")
            .ok_or_else(|| err(lineno, format!("bad action field {action_tok:?}")))?
            .parse()
            .map_err(|e: String| err(lineno, e))?;
        if rules[agent].insert(ls.clone(), action).is_some() {
            return Err(err(lineno, format!("duplicate entry for {ls}")));
        }
    }
    if !saw_header {
        return Err(err(1, "empty policy file".into()));
    }
    PolicyProfile::new(cfg, rules)
}
