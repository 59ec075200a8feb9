//! Reference procedures shared by the integration and acceptance tests. They
//! use only the observation and transition functions plus the candidate
//! model, never the solver's internals.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use maupf::grid::{all_goal_profiles, Action, ActionSet, GridMap};
use maupf::policy::{self, PolicyProfile};
use maupf::restrict::{build_candidates, CandidateModel};
use maupf::states::{observe, transition, Configuration, GlobalState, LocalState, StateModel, Successor};

/// Every candidate-consistent assignment is a policy; tie groups share one
/// action. The search assigns a key only when some trajectory reaches a
/// state where that key is observed, so it enumerates exactly the
/// assignments that matter.
pub struct LazyOracle {
    cfg: Configuration,
    states: Vec<GlobalState>,
    goal: GlobalState,
    obs: HashMap<GlobalState, Vec<LocalState>>,
    candidates: HashMap<(usize, LocalState), ActionSet>,
    group_of: HashMap<(usize, LocalState), usize>,
    groups: Vec<Vec<(usize, LocalState)>>,
    pub nodes: u64,
}

impl LazyOracle {
    pub fn new(cfg: &Configuration) -> Self {
        let model = StateModel::build(cfg).unwrap();
        let cands: CandidateModel = build_candidates(&model, cfg.scenario).unwrap();
        let mut candidates = HashMap::new();
        for agent in 0..cfg.agents() {
            for (id, ls) in model.locals[agent].states().iter().enumerate() {
                candidates.insert((agent, ls.clone()), cands.candidates(agent, id));
            }
        }
        let mut group_of = HashMap::new();
        let mut groups = Vec::new();
        for (g, keys) in cands.tie_groups.iter().enumerate() {
            let keys: Vec<(usize, LocalState)> = keys
                .iter()
                .map(|&(a, id)| (a, model.local(a, id).clone()))
                .collect();
            for k in &keys {
                group_of.insert(k.clone(), g);
            }
            groups.push(keys);
        }
        let states: Vec<GlobalState> = model.space.iter().collect();
        let obs = states
            .iter()
            .map(|s| {
                let locals = (0..cfg.agents()).map(|i| observe(cfg, s, i).unwrap()).collect();
                (s.clone(), locals)
            })
            .collect();
        LazyOracle {
            cfg: cfg.clone(),
            states,
            goal: GlobalState::new(cfg.goals.cells().to_vec()),
            obs,
            candidates,
            group_of,
            groups,
            nodes: 0,
        }
    }

    /// Whether some candidate-consistent profile is feasible.
    pub fn feasible(&mut self) -> bool {
        let mut assign = HashMap::new();
        self.search(&mut assign, 0, 0).is_ok()
    }

    /// Follows every trajectory from state `from` on. On failure returns the
    /// decision levels whose keys the failing trajectory used; a choice
    /// outside that set cannot have caused it, so the caller backjumps.
    fn search(&mut self, assign: &mut Assignment, from: usize, depth: usize) -> Result<(), BTreeSet<usize>> {
        self.nodes += 1;
        'states: for k in from..self.states.len() {
            let mut cur = self.states[k].clone();
            let mut seen = HashSet::new();
            let mut used = BTreeSet::new();
            loop {
                if cur == self.goal {
                    continue 'states;
                }
                if !seen.insert(cur.clone()) {
                    return Err(used);
                }
                let locals = &self.obs[&cur];
                let mut acts = Vec::with_capacity(locals.len());
                for (i, ls) in locals.iter().enumerate() {
                    let key = (i, ls.clone());
                    match assign.get(&key) {
                        Some(&(a, level)) => {
                            used.insert(level);
                            acts.push(a);
                        }
                        None => return self.branch(assign, key, k, depth),
                    }
                }
                match transition(&self.cfg, &cur, &acts).unwrap() {
                    Successor::Next(next) => cur = next,
                    Successor::Conflict(_) => return Err(used),
                }
            }
        }
        Ok(())
    }

    fn branch(
        &mut self,
        assign: &mut Assignment,
        key: (usize, LocalState),
        resume: usize,
        depth: usize,
    ) -> Result<(), BTreeSet<usize>> {
        let keys = match self.group_of.get(&key) {
            Some(&g) => self.groups[g].clone(),
            None => vec![key.clone()],
        };
        let options = keys
            .iter()
            .fold(ActionSet::ALL, |acc, k| acc.intersection(self.candidates[k]));
        let mut conflict = BTreeSet::new();
        for a in options.iter() {
            for k in &keys {
                assign.insert(k.clone(), (a, depth));
            }
            match self.search(assign, resume, depth + 1) {
                Ok(()) => return Ok(()),
                Err(mut cs) => {
                    if !cs.remove(&depth) {
                        for k in &keys {
                            assign.remove(k);
                        }
                        return Err(cs);
                    }
                    conflict.append(&mut cs);
                }
            }
        }
        for k in &keys {
            assign.remove(k);
        }
        Err(conflict)
    }
}

type Assignment = HashMap<(usize, LocalState), (Action, usize)>;

/// Keys sharing one action, and the actions they may share.
type Factor = (Vec<(usize, usize)>, Vec<Action>);

/// Naive enumeration of the full product of candidate sets (tie groups as
/// one factor). Returns `None` when the product exceeds `limit`.
pub fn naive_feasible(cfg: &Configuration, limit: u128) -> Option<bool> {
    let model = StateModel::build(cfg).unwrap();
    let cands = build_candidates(&model, cfg.scenario).unwrap();
    // Factor list: each factor is a set of keys and its shared options.
    let mut grouped = HashSet::new();
    let mut factors: Vec<Factor> = Vec::new();
    for keys in &cands.tie_groups {
        let opts = keys
            .iter()
            .fold(ActionSet::ALL, |acc, &(a, id)| acc.intersection(cands.candidates(a, id)));
        grouped.extend(keys.iter().copied());
        factors.push((keys.clone(), opts.iter().collect()));
    }
    for agent in 0..cfg.agents() {
        for id in 0..model.locals[agent].len() {
            if !grouped.contains(&(agent, id)) {
                factors.push((vec![(agent, id)], cands.candidates(agent, id).iter().collect()));
            }
        }
    }
    let size = factors
        .iter()
        .try_fold(1u128, |acc, f| acc.checked_mul(f.1.len() as u128))?;
    if size > limit {
        return None;
    }
    if factors.iter().any(|f| f.1.is_empty()) {
        return Some(false);
    }
    let mut idx = vec![0usize; factors.len()];
    loop {
        let mut table: Vec<HashMap<LocalState, Action>> = vec![HashMap::new(); cfg.agents()];
        for (f, &k) in factors.iter().zip(&idx) {
            for &(agent, id) in &f.0 {
                table[agent].insert(model.local(agent, id).clone(), f.1[k]);
            }
        }
        let p = PolicyProfile::from_fn(cfg, |agent, ls| table[agent][ls]).unwrap();
        if policy::verify(cfg, &p).unwrap().feasible {
            return Some(true);
        }
        let mut j = 0;
        loop {
            if j == idx.len() {
                return Some(false);
            }
            idx[j] += 1;
            if idx[j] < factors[j].1.len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Sum over global states of the shortest distance to the goal when every
/// agent may take any candidate action: a lower bound on any policy's sum of
/// makespans. `None` when some state cannot reach the goal at all.
pub fn relaxed_distance_sum(cfg: &Configuration) -> Option<u64> {
    let model = StateModel::build(cfg).unwrap();
    let cands = build_candidates(&model, cfg.scenario).unwrap();
    let states: Vec<GlobalState> = model.space.iter().collect();
    let goal = GlobalState::new(cfg.goals.cells().to_vec());
    let mut preds: HashMap<GlobalState, Vec<GlobalState>> = HashMap::new();
    for s in &states {
        if *s == goal {
            continue;
        }
        let options: Vec<Vec<Action>> = (0..cfg.agents())
            .map(|i| {
                let ls = observe(cfg, s, i).unwrap();
                let id = model.locals[i].id_of(&ls).unwrap();
                cands.candidates(i, id).iter().collect()
            })
            .collect();
        let mut idx = vec![0usize; options.len()];
        loop {
            let acts: Vec<Action> = idx.iter().enumerate().map(|(i, &k)| options[i][k]).collect();
            if let Successor::Next(t) = transition(cfg, s, &acts).unwrap() {
                preds.entry(t).or_default().push(s.clone());
            }
            let mut j = 0;
            loop {
                if j == idx.len() {
                    break;
                }
                idx[j] += 1;
                if idx[j] < options[j].len() {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == idx.len() {
                break;
            }
        }
    }
    let mut dist: HashMap<GlobalState, u64> = HashMap::new();
    dist.insert(goal.clone(), 0);
    let mut queue = VecDeque::from([goal]);
    while let Some(t) = queue.pop_front() {
        let d = dist[&t];
        for p in preds.get(&t).into_iter().flatten() {
            if !dist.contains_key(p) {
                dist.insert(p.clone(), d + 1);
                queue.push_back(p.clone());
            }
        }
    }
    (dist.len() == states.len()).then(|| dist.values().sum())
}

/// Every layout with at most `rows x cols` cells and at least two free cells.
pub fn small_maps(max_rows: usize, max_cols: usize) -> Vec<GridMap> {
    let mut out = Vec::new();
    for rows in 1..=max_rows {
        for cols in 1..=max_cols {
            let cells = rows * cols;
            for mask in 0u32..(1 << cells) {
                let blocked = (0..cells)
                    .filter(|&k| mask & (1 << k) != 0)
                    .map(|k| maupf::Cell::new(k / cols, k % cols));
                if let Ok(m) = GridMap::new(rows, cols, blocked) {
                    if m.free_count() >= 2 {
                        out.push(m);
                    }
                }
            }
        }
    }
    out
}

/// Proper goal profiles of `n` agents on `map`.
pub fn proper_profiles(map: &GridMap, n: usize) -> Vec<maupf::GoalProfile> {
    all_goal_profiles(map, n)
        .into_iter()
        .filter(|p| map.is_proper(p))
        .collect()
}

/// Checks the makespan recurrence and replays every state through the
/// step-by-step simulator. Returns a description of the first violation.
pub fn check_feasible_policy(cfg: &Configuration, p: &PolicyProfile) -> Result<u64, String> {
    let report = policy::verify(cfg, p).map_err(|e| e.to_string())?;
    if !report.feasible {
        return Err("verify reports infeasible".into());
    }
    let dist = report.dist.as_ref().unwrap();
    let goal = GlobalState::new(cfg.goals.cells().to_vec());
    let n_states = dist.len();
    for (s, d) in dist.iter() {
        if s == goal {
            if d != 0 {
                return Err(format!("goal has makespan {d}"));
            }
            continue;
        }
        match policy::step(cfg, &s, p).map_err(|e| e.to_string())? {
            Successor::Next(t) => {
                let dt = dist.get(&t).ok_or("successor missing from table")?;
                if d != dt + 1 {
                    return Err(format!("dist({s}) = {d} but dist({t}) = {dt}"));
                }
            }
            Successor::Conflict(c) => return Err(format!("conflict from {s}: {c}")),
        }
        let trace = policy::simulate(cfg, p, &s, n_states + 1).map_err(|e| e.to_string())?;
        if trace.status != policy::TraceStatus::Goal || trace.states.len() as u32 != d + 1 {
            return Err(format!("simulation from {s} ended {} after {} states", trace.status, trace.states.len()));
        }
    }
    Ok(report.sum_of_makespan().unwrap())
}
