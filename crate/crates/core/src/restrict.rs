//! Candidate-action models: which actions each agent may take in each local
//! state under the preference scenarios and the traffic-rule protocols.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::grid::{Action, ActionSet, Cell};
use crate::states::{LocalState, StateModel};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RestrictError {
    #[error("traffic rules need exactly two agents, got {0}")]
    TrafficNeedsTwoAgents(usize),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum ScenarioKind {
    #[default]
    Unrestricted,
    /// Greedy moves while nobody is in sight.
    DefaultAction,
    /// Greedy moves unless a visible agent is within Manhattan distance two.
    LastMinute,
    /// Greedy moves everywhere.
    Myopic,
    /// One shared action per (own cell, relative position of the other agent).
    TrafficLocationDependent,
    /// One shared action per relative position of the other agent.
    TrafficLocationFree,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Unrestricted,
        ScenarioKind::DefaultAction,
        ScenarioKind::LastMinute,
        ScenarioKind::Myopic,
        ScenarioKind::TrafficLocationDependent,
        ScenarioKind::TrafficLocationFree,
    ];

    pub fn is_traffic(self) -> bool {
        matches!(
            self,
            ScenarioKind::TrafficLocationDependent | ScenarioKind::TrafficLocationFree
        )
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            ScenarioKind::Unrestricted => "none",
            ScenarioKind::DefaultAction => "default",
            ScenarioKind::LastMinute => "lastmin",
            ScenarioKind::Myopic => "myopic",
            ScenarioKind::TrafficLocationDependent => "traffic-loc",
            ScenarioKind::TrafficLocationFree => "traffic-free",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// For traffic kinds: greedy moves while nobody is in sight.
    pub with_default: bool,
}

impl Scenario {
    pub const fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            with_default: false,
        }
    }

    pub const fn traffic(kind: ScenarioKind, with_default: bool) -> Self {
        Self { kind, with_default }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.cli_name())?;
        if self.kind.is_traffic() && self.with_default {
            f.write_str("+default")?;
        }
        Ok(())
    }
}

impl FromStr for Scenario {
    type Err = RestrictError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let (name, with_default) = match t.strip_suffix("+default") {
            Some(base) => (base, true),
            None => (t, false),
        };
        let kind = ScenarioKind::ALL
            .into_iter()
            .find(|k| k.cli_name() == name)
            .ok_or_else(|| RestrictError::UnknownScenario(s.to_string()))?;
        if with_default && !kind.is_traffic() {
            return Err(RestrictError::UnknownScenario(s.to_string()));
        }
        Ok(Scenario { kind, with_default })
    }
}

/// Manhattan distance to the goal after taking `a`; `None` stands for an
/// infinite cost (the move leaves the free area).
pub fn action_cost(model: &StateModel, ls: &LocalState, a: Action) -> Option<usize> {
    let dest = model.cfg.map.apply_action(ls.position, a).ok()??;
    Some(dest.manhattan(ls.goal))
}

/// The finite-cost actions of minimum cost.
pub fn greedy_actions(model: &StateModel, ls: &LocalState) -> ActionSet {
    let costs: Vec<(Action, usize)> = Action::ALL
        .into_iter()
        .filter_map(|a| action_cost(model, ls, a).map(|c| (a, c)))
        .collect();
    let best = costs.iter().map(|&(_, c)| c).min();
    costs
        .into_iter()
        .filter(|&(_, c)| Some(c) == best)
        .map(|(a, _)| a)
        .collect()
}

pub fn is_lastmin(a: Cell, b: Cell) -> bool {
    a.manhattan(b) <= 2
}

/// Identifies a key: agent index and local-state id in that agent's table.
pub type Key = (usize, usize);

/// Candidate actions for every (agent, local state), plus traffic-rule tie
/// groups whose members must all take the same action.
#[derive(Debug, Clone)]
pub struct CandidateModel {
    pub scenario: Scenario,
    candidates: Vec<Vec<ActionSet>>,
    pub tie_groups: Vec<Vec<Key>>,
}

impl CandidateModel {
    pub fn candidates(&self, agent: usize, id: usize) -> ActionSet {
        self.candidates[agent][id]
    }

    pub fn agent_candidates(&self, agent: usize) -> &[ActionSet] {
        &self.candidates[agent]
    }

    pub fn agents(&self) -> usize {
        self.candidates.len()
    }

    /// Number of keys with more than one candidate.
    pub fn open_keys(&self) -> usize {
        self.candidates
            .iter()
            .flatten()
            .filter(|c| c.len() > 1)
            .count()
    }
}

/// Relative position `other - self` as signed offsets.
fn relative(me: Cell, other: Cell) -> (isize, isize) {
    (
        other.row as isize - me.row as isize,
        other.col as isize - me.col as isize,
    )
}

/// Own cell (absent for location-free rules) and relative offset of the other agent.
type GroupKey = (Option<Cell>, (isize, isize));

pub fn build_candidates(
    model: &StateModel,
    scenario: Scenario,
) -> Result<CandidateModel, RestrictError> {
    let n = model.agents();
    if scenario.kind.is_traffic() && n != 2 {
        return Err(RestrictError::TrafficNeedsTwoAgents(n));
    }
    let map = &model.cfg.map;
    let mut candidates = Vec::with_capacity(n);
    for table in &model.locals {
        let per_agent = table
            .states()
            .iter()
            .map(|ls| {
                if ls.at_goal() {
                    return ActionSet::single(Action::Nil);
                }
                let available = map
                    .available_actions(ls.position)
                    .expect("local states sit on free cells");
                let greedy = || greedy_actions(model, ls);
                match scenario.kind {
                    ScenarioKind::Unrestricted => available,
                    ScenarioKind::DefaultAction => {
                        if ls.sees_anyone() {
                            available
                        } else {
                            greedy()
                        }
                    }
                    ScenarioKind::LastMinute => {
                        if ls.visible().any(|o| is_lastmin(ls.position, o)) {
                            available
                        } else {
                            greedy()
                        }
                    }
                    ScenarioKind::Myopic => greedy(),
                    ScenarioKind::TrafficLocationDependent | ScenarioKind::TrafficLocationFree => {
                        if !ls.sees_anyone() && scenario.with_default {
                            greedy()
                        } else {
                            available
                        }
                    }
                }
            })
            .collect::<Vec<_>>();
        candidates.push(per_agent);
    }

    let mut tie_groups = Vec::new();
    if scenario.kind.is_traffic() {
        // BTreeMap keeps group order deterministic.
        let mut groups: BTreeMap<GroupKey, Vec<Key>> = BTreeMap::new();
        for (agent, table) in model.locals.iter().enumerate() {
            for (id, ls) in table.states().iter().enumerate() {
                if ls.at_goal() {
                    continue;
                }
                let Some(other) = ls.others[0] else { continue };
                let rel = relative(ls.position, other);
                let anchor = match scenario.kind {
                    ScenarioKind::TrafficLocationDependent => Some(ls.position),
                    _ => None,
                };
                groups.entry((anchor, rel)).or_default().push((agent, id));
            }
        }
        for keys in groups.into_values() {
            let shared = keys
                .iter()
                .fold(ActionSet::ALL, |acc, &(a, id)| acc.intersection(candidates[a][id]));
            for &(a, id) in &keys {
                candidates[a][id] = shared;
            }
            tie_groups.push(keys);
        }
    }
    Ok(CandidateModel {
        scenario,
        candidates,
        tie_groups,
    })
}
