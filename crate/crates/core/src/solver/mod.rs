//! Complete search for feasible policy profiles and anytime minimization of
//! the sum of makespans.
//!
//! Every (agent, local state) key becomes a variable over its candidate
//! actions; traffic tie groups share one variable. The search branches
//! chronologically (`x = v`, then `x != v`) on the open variable occurring in
//! the most global states, trying cheaper actions first. Each node runs the
//! propagation in [`engine`]. Leaves are re-verified with
//! [`crate::policy::verify_with`] before they are reported.

mod engine;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{Action, ActionSet};
use crate::par::Parallelism;
use crate::policy::{self, PolicyError, PolicyProfile};
use crate::restrict::{self, action_cost, CandidateModel, Key, RestrictError, Scenario};
use crate::states::{Configuration, StateModel, StatesError};

use engine::Engine;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    States(#[from] StatesError),
    #[error(transparent)]
    Restrict(#[from] RestrictError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("the scenario chain is empty")]
    EmptyChain,
    #[error("initial policy is not feasible")]
    InfeasibleInitial,
    #[error("internal error: search produced a policy that fails verification")]
    Unsound,
}

/// A configuration with its enumerated states and candidate model, ready to
/// be searched. Immutable once built.
#[derive(Debug, Clone)]
pub struct SearchProblem {
    pub model: StateModel,
    pub candidates: CandidateModel,
    var_of: Vec<Vec<u32>>,
    initial_domains: Vec<ActionSet>,
    var_keys: Vec<Vec<Key>>,
}

impl SearchProblem {
    /// Enumerates the configuration and builds candidates for its scenario.
    pub fn new(cfg: &Configuration) -> Result<Self, SolverError> {
        let model = StateModel::build(cfg)?;
        let candidates = restrict::build_candidates(&model, cfg.scenario)?;
        Ok(Self::from_parts(model, candidates))
    }

    /// Reuses an enumerated model under another scenario.
    pub fn with_scenario(&self, scenario: Scenario) -> Result<Self, SolverError> {
        let mut model = self.model.clone();
        model.cfg.scenario = scenario;
        let candidates = restrict::build_candidates(&model, scenario)?;
        Ok(Self::from_parts(model, candidates))
    }

    pub fn from_parts(model: StateModel, candidates: CandidateModel) -> Self {
        let mut var_of: Vec<Vec<u32>> = model
            .locals
            .iter()
            .map(|t| vec![u32::MAX; t.len()])
            .collect();
        let mut initial_domains = Vec::new();
        let mut var_keys: Vec<Vec<Key>> = Vec::new();
        for group in &candidates.tie_groups {
            let v = initial_domains.len() as u32;
            let dom = group
                .iter()
                .fold(ActionSet::ALL, |d, &(a, id)| d.intersection(candidates.candidates(a, id)));
            for &(a, id) in group {
                var_of[a][id] = v;
            }
            initial_domains.push(dom);
            var_keys.push(group.clone());
        }
        for (agent, vars) in var_of.iter_mut().enumerate() {
            for (id, slot) in vars.iter_mut().enumerate() {
                if *slot == u32::MAX {
                    *slot = initial_domains.len() as u32;
                    initial_domains.push(candidates.candidates(agent, id));
                    var_keys.push(vec![(agent, id)]);
                }
            }
        }
        Self {
            model,
            candidates,
            var_of,
            initial_domains,
            var_keys,
        }
    }

    pub fn config(&self) -> &Configuration {
        &self.model.cfg
    }

    pub fn global_states(&self) -> usize {
        self.model.space.len()
    }

    /// Number of decision variables (keys after tie-group merging).
    pub fn variables(&self) -> usize {
        self.initial_domains.len()
    }

    /// Variables with more than one candidate before propagation.
    pub fn decision_keys(&self) -> usize {
        self.initial_domains.iter().filter(|d| d.len() > 1).count()
    }

    /// Size of the unpropagated assignment space, saturating.
    pub fn assignment_space(&self) -> u128 {
        self.initial_domains
            .iter()
            .fold(1u128, |acc, d| acc.saturating_mul(d.len().max(1) as u128))
    }

    /// Variable id and candidate domain for every variable, with its keys.
    pub fn variable_keys(&self, v: usize) -> (&[Key], ActionSet) {
        (&self.var_keys[v], self.initial_domains[v])
    }

    pub fn variable_of(&self, agent: usize, id: usize) -> usize {
        self.var_of[agent][id] as usize
    }

    /// Builds the policy that takes `action(var)` for every key.
    pub fn policy_from(
        &self,
        mut action: impl FnMut(usize) -> Action,
    ) -> Result<PolicyProfile, PolicyError> {
        let rules = self
            .model
            .locals
            .iter()
            .enumerate()
            .map(|(agent, table)| {
                table
                    .states()
                    .iter()
                    .enumerate()
                    .map(|(id, ls)| (ls.clone(), action(self.var_of[agent][id] as usize)))
                    .collect::<BTreeMap<_, _>>()
            })
            .collect();
        PolicyProfile::new(&self.model.cfg, rules)
    }

    /// Summed heuristic cost of choosing `a` for every key of variable `v`.
    fn value_cost(&self, v: usize, a: Action) -> usize {
        self.var_keys[v]
            .iter()
            .map(|&(agent, id)| {
                action_cost(&self.model, self.model.local(agent, id), a).unwrap_or(usize::MAX / 64)
            })
            .sum()
    }
}

/// Limits for one search. `None` fields are unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Budget {
    pub timeout: Option<Duration>,
    pub max_nodes: Option<u64>,
}

impl Budget {
    pub const UNLIMITED: Budget = Budget {
        timeout: None,
        max_nodes: None,
    };

    pub fn with_timeout(timeout: Duration) -> Self {
        Budget {
            timeout: Some(timeout),
            max_nodes: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SearchOptions {
    pub budget: Budget,
    /// Shuffles value order with this seed instead of the cost order.
    pub seed: Option<u64>,
    /// Polled during search; setting it stops the search as if the budget ran
    /// out.
    pub cancel: Option<Arc<AtomicBool>>,
    pub probing: Probing,
}

/// When to run singleton probing (tentatively assign each value and drop
/// those that fail propagation) at search nodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Probing {
    Never,
    Always,
    /// Plain search first; after [`ESCALATE_AFTER`] backtracks, start over
    /// with probing at every node, keeping any incumbent bound.
    #[default]
    Escalate,
}

/// Backtracks allowed before [`Probing::Escalate`] switches strategy.
pub const ESCALATE_AFTER: u64 = 2000;

impl SearchOptions {
    pub fn with_budget(budget: Budget) -> Self {
        SearchOptions {
            budget,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Feasible,
    /// Returned by optimization when the bounded search space was exhausted.
    Optimal,
    Infeasible,
    TimedOut,
}

impl SolveStatus {
    pub fn name(self) -> &'static str {
        match self {
            SolveStatus::Feasible => "feasible",
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::TimedOut => "timeout",
        }
    }

    pub fn has_policy_guarantee(self) -> bool {
        matches!(self, SolveStatus::Feasible | SolveStatus::Optimal)
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub nodes: u64,
    pub propagations: u64,
    pub backtracks: u64,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// The policy for Feasible/Optimal, or the best found before a timeout.
    pub policy: Option<PolicyProfile>,
    pub cost: Option<u64>,
    pub stats: SearchStats,
}

/// One improving solution reported during optimization.
#[derive(Debug, Clone)]
pub struct Improvement {
    pub policy: PolicyProfile,
    pub cost: u64,
    pub elapsed: Duration,
    pub nodes: u64,
}

enum Frame {
    Take { var: u32, value: Action, pos: usize },
    Refute { pos: usize },
}

impl Frame {
    fn pos(&self) -> usize {
        match *self {
            Frame::Take { pos, .. } | Frame::Refute { pos } => pos,
        }
    }
}

enum LeafVerdict {
    Stop,
    Continue,
}

enum Ended {
    Exhausted,
    Stopped,
    OutOfBudget,
    Escalate,
}

struct Search<'p> {
    problem: &'p SearchProblem,
    engine: Engine,
    order: Vec<u32>,
    values: Vec<Vec<Action>>,
    options: SearchOptions,
    probing: bool,
    start: Instant,
    nodes: u64,
    backtracks: u64,
    backtracks_base: u64,
    propagations_base: u64,
}

impl<'p> Search<'p> {
    fn new(
        problem: &'p SearchProblem,
        options: &SearchOptions,
        probing: bool,
        start: Instant,
        carried: SearchStats,
    ) -> Self {
        let engine = Engine::new(problem);
        let vars = problem.variables();
        let mut order: Vec<u32> = (0..vars as u32)
            .filter(|&v| problem.initial_domains[v as usize].len() > 1)
            .collect();
        order.sort_by_key(|&v| (std::cmp::Reverse(engine.occurrences(v as usize)), v));
        let mut rng = options.seed.map(ChaCha8Rng::seed_from_u64);
        let values = (0..vars)
            .map(|v| {
                let mut acts: Vec<Action> = problem.initial_domains[v].iter().collect();
                match rng.as_mut() {
                    Some(rng) => acts.shuffle(rng),
                    None => acts.sort_by_key(|&a| (problem.value_cost(v, a), a.index())),
                }
                acts
            })
            .collect();
        Search {
            problem,
            engine,
            order,
            values,
            options: options.clone(),
            probing,
            start,
            nodes: carried.nodes,
            backtracks: carried.backtracks,
            backtracks_base: carried.backtracks,
            propagations_base: carried.propagations,
        }
    }

    fn stats(&self) -> SearchStats {
        SearchStats {
            nodes: self.nodes,
            propagations: self.propagations_base + self.engine.propagations,
            backtracks: self.backtracks,
            elapsed: self.start.elapsed(),
        }
    }

    fn out_of_budget(&self) -> bool {
        let b = &self.options.budget;
        if b.max_nodes.is_some_and(|m| self.nodes >= m) {
            return true;
        }
        if self.nodes.is_multiple_of(32) {
            if b.timeout.is_some_and(|t| self.start.elapsed() >= t) {
                return true;
            }
            if let Some(c) = &self.options.cancel {
                if c.load(Ordering::Relaxed) {
                    return true;
                }
            }
        }
        false
    }

    /// Removes every value whose assignment fails propagation, until no
    /// value is removed. Returns false on a wipe-out.
    fn probe(&mut self) -> bool {
        loop {
            let mut changed = false;
            for k in 0..self.order.len() {
                let v = self.order[k] as usize;
                let dom = ActionSet::from_bits(self.engine.dom[v]);
                if dom.len() < 2 {
                    continue;
                }
                for a in dom.iter() {
                    if !ActionSet::from_bits(self.engine.dom[v]).contains(a) {
                        continue;
                    }
                    self.engine.push_level();
                    let ok = self.engine.restrict(v, ActionSet::single(a).bits());
                    self.engine.pop_level();
                    if !ok {
                        let mut rest = ActionSet::from_bits(self.engine.dom[v]);
                        rest.remove(a);
                        if !self.engine.restrict(v, rest.bits()) {
                            return false;
                        }
                        changed = true;
                    }
                }
            }
            if !changed {
                return true;
            }
        }
    }

    fn leaf_policy(&self) -> Result<PolicyProfile, PolicyError> {
        self.problem
            .policy_from(|v| self.engine.fixed_action(v).expect("all variables fixed at a leaf"))
    }

    /// Depth-first search; `on_leaf` receives every complete, propagated
    /// assignment and its exact sum of makespans.
    fn run(
        &mut self,
        on_leaf: &mut impl FnMut(&mut Self, PolicyProfile, u64) -> Result<LeafVerdict, SolverError>,
    ) -> Result<Ended, SolverError> {
        if !self.engine.initialize() {
            return Ok(Ended::Exhausted);
        }
        let mut frames: Vec<Frame> = Vec::new();
        let mut consistent = true;
        loop {
            if consistent && self.probing {
                consistent = self.probe();
                if !consistent {
                    continue;
                }
            }
            if consistent {
                let from = frames.last().map_or(0, Frame::pos);
                let next = (from..self.order.len())
                    .find(|&k| self.engine.dom[self.order[k] as usize].count_ones() > 1);
                match next {
                    None => {
                        let p = self.leaf_policy()?;
                        let cost = self.engine.lower_bound();
                        if let LeafVerdict::Stop = on_leaf(self, p, cost)? {
                            return Ok(Ended::Stopped);
                        }
                        consistent = false;
                        continue;
                    }
                    Some(pos) => {
                        if self.out_of_budget() {
                            return Ok(Ended::OutOfBudget);
                        }
                        self.nodes += 1;
                        let var = self.order[pos];
                        let dom = ActionSet::from_bits(self.engine.dom[var as usize]);
                        let value = *self.values[var as usize]
                            .iter()
                            .find(|&&a| dom.contains(a))
                            .expect("open variable has a value");
                        self.engine.push_level();
                        frames.push(Frame::Take { var, value, pos });
                        consistent = self
                            .engine
                            .restrict(var as usize, ActionSet::single(value).bits());
                    }
                }
            } else {
                self.backtracks += 1;
                if !self.probing
                    && self.options.probing == Probing::Escalate
                    && self.backtracks - self.backtracks_base >= ESCALATE_AFTER
                {
                    return Ok(Ended::Escalate);
                }
                loop {
                    let Some(frame) = frames.pop() else {
                        return Ok(Ended::Exhausted);
                    };
                    self.engine.pop_level();
                    if let Frame::Take { var, value, pos } = frame {
                        self.engine.push_level();
                        frames.push(Frame::Refute { pos });
                        let mut rest = ActionSet::from_bits(self.engine.dom[var as usize]);
                        rest.remove(value);
                        consistent = self.engine.restrict(var as usize, rest.bits());
                        break;
                    }
                }
            }
        }
    }
}

/// Runs the search, escalating to probing if the options ask for it.
fn drive(
    problem: &SearchProblem,
    options: &SearchOptions,
    mut bound: Option<u64>,
    mut on_leaf: impl FnMut(&mut Search<'_>, PolicyProfile, u64) -> Result<LeafVerdict, SolverError>,
) -> Result<(Ended, SearchStats), SolverError> {
    let start = Instant::now();
    let mut carried = SearchStats::default();
    let mut probing = options.probing == Probing::Always;
    loop {
        let mut search = Search::new(problem, options, probing, start, carried);
        search.engine.bound = bound;
        let ended = search.run(&mut on_leaf)?;
        carried = search.stats();
        match ended {
            Ended::Escalate => {
                bound = search.engine.bound;
                probing = true;
            }
            other => return Ok((other, carried)),
        }
    }
}

fn certify(problem: &SearchProblem, p: &PolicyProfile, cost: u64) -> Result<(), SolverError> {
    let report = policy::verify_with(problem.config(), p, Parallelism::Sequential)?;
    if !report.feasible || report.sum_of_makespan() != Some(cost) {
        return Err(SolverError::Unsound);
    }
    Ok(())
}

/// Finds any feasible policy profile, or proves none exists.
pub fn solve(problem: &SearchProblem, options: &SearchOptions) -> Result<SolveOutcome, SolverError> {
    let mut found = None;
    let (ended, stats) = drive(problem, options, None, |_, p, cost| {
        certify(problem, &p, cost)?;
        found = Some((p, cost));
        Ok(LeafVerdict::Stop)
    })?;
    let status = match ended {
        Ended::Stopped => SolveStatus::Feasible,
        Ended::Exhausted => SolveStatus::Infeasible,
        Ended::OutOfBudget | Ended::Escalate => SolveStatus::TimedOut,
    };
    let (policy, cost) = found.map_or((None, None), |(p, c)| (Some(p), Some(c)));
    Ok(SolveOutcome {
        status,
        policy,
        cost,
        stats,
    })
}

/// Convenience wrapper: enumerate `cfg` and solve under its scenario.
pub fn solve_config(cfg: &Configuration, budget: Budget) -> Result<SolveOutcome, SolverError> {
    solve(&SearchProblem::new(cfg)?, &SearchOptions::with_budget(budget))
}

/// Branch-and-bound minimization of the sum of makespans. Each improvement is
/// passed to `on_improve` as soon as it is found; costs strictly decrease.
/// The outcome is Optimal when the search space is exhausted with a solution,
/// Infeasible when exhausted without one, TimedOut otherwise.
pub fn optimize(
    problem: &SearchProblem,
    options: &SearchOptions,
    initial: Option<&PolicyProfile>,
    mut on_improve: impl FnMut(&Improvement),
) -> Result<SolveOutcome, SolverError> {
    let mut best: Option<(PolicyProfile, u64)> = None;
    if let Some(p) = initial {
        let report = policy::verify_with(problem.config(), p, Parallelism::Sequential)?;
        let cost = report.sum_of_makespan().ok_or(SolverError::InfeasibleInitial)?;
        best = Some((p.clone(), cost));
    }
    let bound = best.as_ref().map(|b| b.1);
    let (ended, stats) = drive(problem, options, bound, |s, p, cost| {
        certify(problem, &p, cost)?;
        debug_assert!(best.as_ref().is_none_or(|b| cost < b.1));
        on_improve(&Improvement {
            policy: p.clone(),
            cost,
            elapsed: s.start.elapsed(),
            nodes: s.nodes,
        });
        best = Some((p, cost));
        s.engine.bound = Some(cost);
        Ok(LeafVerdict::Continue)
    })?;
    let status = match (ended, best.is_some()) {
        (Ended::OutOfBudget | Ended::Escalate, _) => SolveStatus::TimedOut,
        (_, true) => SolveStatus::Optimal,
        (_, false) => SolveStatus::Infeasible,
    };
    let (policy, cost) = best.map_or((None, None), |(p, c)| (Some(p), Some(c)));
    Ok(SolveOutcome {
        status,
        policy,
        cost,
        stats,
    })
}

/// Handle to an optimization running on its own thread.
pub struct OptimizeHandle {
    pub improvements: mpsc::Receiver<Improvement>,
    cancel: Arc<AtomicBool>,
    join: thread::JoinHandle<Result<SolveOutcome, SolverError>>,
}

impl OptimizeHandle {
    /// Asks the search to stop at its next budget check.
    pub fn cancel(&self) {
        self.cancel.store(true, Ordering::Relaxed);
    }

    pub fn join(self) -> Result<SolveOutcome, SolverError> {
        self.join.join().expect("optimizer thread panicked")
    }
}

/// Runs [`optimize`] on a background thread, streaming improvements.
pub fn spawn_optimize(
    problem: Arc<SearchProblem>,
    options: SearchOptions,
    initial: Option<PolicyProfile>,
) -> OptimizeHandle {
    let (tx, rx) = mpsc::channel();
    let cancel = options
        .cancel
        .clone()
        .unwrap_or_else(|| Arc::new(AtomicBool::new(false)));
    let opts = SearchOptions {
        cancel: Some(cancel.clone()),
        ..options
    };
    let join = thread::spawn(move || {
        optimize(&problem, &opts, initial.as_ref(), |imp| {
            let _ = tx.send(imp.clone());
        })
    });
    OptimizeHandle {
        improvements: rx,
        cancel,
        join,
    }
}

#[derive(Debug, Clone)]
pub struct FallbackOutcome {
    /// The scenario whose search produced `outcome`'s policy, if any.
    pub scenario: Option<Scenario>,
    pub attempts: Vec<(Scenario, SolveStatus)>,
    pub outcome: SolveOutcome,
}

/// Tries each scenario in order (strictest first) and returns the first
/// feasible result. If none is feasible the status is TimedOut when any
/// attempt ran out of budget, Infeasible otherwise.
pub fn solve_with_restriction_fallback(
    cfg: &Configuration,
    chain: &[Scenario],
    options: &SearchOptions,
) -> Result<FallbackOutcome, SolverError> {
    if chain.is_empty() {
        return Err(SolverError::EmptyChain);
    }
    let base = SearchProblem::new(&cfg.with_scenario(chain[0]))?;
    let mut attempts = Vec::new();
    let mut stats = SearchStats::default();
    for (k, &scenario) in chain.iter().enumerate() {
        let problem = if k == 0 {
            base.clone()
        } else {
            base.with_scenario(scenario)?
        };
        let out = solve(&problem, options)?;
        stats.nodes += out.stats.nodes;
        stats.propagations += out.stats.propagations;
        stats.backtracks += out.stats.backtracks;
        stats.elapsed += out.stats.elapsed;
        attempts.push((scenario, out.status));
        if out.status == SolveStatus::Feasible {
            return Ok(FallbackOutcome {
                scenario: Some(scenario),
                attempts,
                outcome: SolveOutcome { stats, ..out },
            });
        }
    }
    let status = if attempts.iter().any(|a| a.1 == SolveStatus::TimedOut) {
        SolveStatus::TimedOut
    } else {
        SolveStatus::Infeasible
    };
    Ok(FallbackOutcome {
        scenario: None,
        attempts,
        outcome: SolveOutcome {
            status,
            policy: None,
            cost: None,
            stats,
        },
    })
}

#[cfg(test)]
mod tests;
