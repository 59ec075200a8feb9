//! Propagation over the candidate successor relation.
//!
//! Every non-goal global state has one outgoing edge per candidate-consistent
//! joint action that neither collides nor leaves the state unchanged. Under a
//! partial assignment an edge is live when each agent's action is still in the
//! domain of the variable that agent observes. The engine keeps, for every
//! state, its BFS distance to the goal state over live edges; a state with no
//! live path means the branch is dead. Distances only grow as domains shrink,
//! so they are maintained decrementally and restored from a trail on
//! backtrack. Their sum is an admissible bound on the sum of makespans of any
//! completion.
//!
//! A value of a variable that has no live edge in some state containing it is
//! removed: choosing it would strand that state.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::grid::Action;
use crate::states::{Step, StateSpace};

use super::SearchProblem;

const UNREACHED: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
enum Undo {
    Domain(u32, u8),
    Dist(u32, u32),
}

/// Packed joint actions: 3 bits per agent.
#[inline]
fn act_of(acts: u32, agent: usize) -> u32 {
    (acts >> (3 * agent)) & 7
}

pub(crate) struct Engine {
    n: usize,
    goal: usize,
    svar: Vec<u32>,
    fwd_off: Vec<u32>,
    fwd_to: Vec<u32>,
    fwd_acts: Vec<u32>,
    rev_off: Vec<u32>,
    rev_from: Vec<u32>,
    rev_acts: Vec<u32>,
    occ_off: Vec<u32>,
    occ: Vec<u32>,
    pub(crate) dom: Vec<u8>,
    dist: Vec<u32>,
    lb_sum: u64,
    trail: Vec<Undo>,
    marks: Vec<usize>,
    pub(crate) bound: Option<u64>,
    pub(crate) propagations: u64,
    // scratch, stamped to avoid clearing
    stamp: u32,
    dirty_stamp: Vec<u32>,
    invalid_stamp: Vec<u32>,
    tent: Vec<u32>,
    heap: BinaryHeap<Reverse<(u32, u32)>>,
}

impl Engine {
    pub(crate) fn new(problem: &SearchProblem) -> Self {
        let model = &problem.model;
        let space: &StateSpace = &model.space;
        let n = space.agents();
        let g = space.len();
        let goal = space.goal_index();

        let mut svar = Vec::with_capacity(g * n);
        for s in 0..g {
            for i in 0..n {
                svar.push(problem.var_of[i][model.observation(s, i)]);
            }
        }
        let dom: Vec<u8> = problem.initial_domains.iter().map(|d| d.bits()).collect();

        let mut fwd_off = Vec::with_capacity(g + 1);
        let mut fwd_to = Vec::new();
        let mut fwd_acts = Vec::new();
        let mut choice = vec![0usize; n];
        let mut options: Vec<Vec<Action>> = vec![Vec::new(); n];
        fwd_off.push(0);
        for s in 0..g {
            if s != goal {
                for i in 0..n {
                    options[i] = crate::grid::ActionSet::from_bits(dom[svar[s * n + i] as usize])
                        .iter()
                        .collect();
                }
                choice.iter_mut().for_each(|c| *c = 0);
                'outer: loop {
                    if let Step::Next(t) = space.step(&model.cfg.map, s, |i| options[i][choice[i]]) {
                        if t != s {
                            let packed = (0..n)
                                .fold(0u32, |acc, i| acc | ((options[i][choice[i]] as u32) << (3 * i)));
                            fwd_to.push(t as u32);
                            fwd_acts.push(packed);
                        }
                    }
                    let mut i = 0;
                    loop {
                        if i == n {
                            break 'outer;
                        }
                        choice[i] += 1;
                        if choice[i] < options[i].len() {
                            break;
                        }
                        choice[i] = 0;
                        i += 1;
                    }
                }
            }
            fwd_off.push(fwd_to.len() as u32);
        }

        let mut rev_count = vec![0u32; g + 1];
        for &t in &fwd_to {
            rev_count[t as usize + 1] += 1;
        }
        for k in 0..g {
            rev_count[k + 1] += rev_count[k];
        }
        let rev_off = rev_count.clone();
        let mut cursor = rev_count;
        let mut rev_from = vec![0u32; fwd_to.len()];
        let mut rev_acts = vec![0u32; fwd_to.len()];
        for s in 0..g {
            for e in fwd_off[s] as usize..fwd_off[s + 1] as usize {
                let t = fwd_to[e] as usize;
                let slot = cursor[t] as usize;
                rev_from[slot] = s as u32;
                rev_acts[slot] = fwd_acts[e];
                cursor[t] += 1;
            }
        }

        let vars = problem.initial_domains.len();
        let mut occ_count = vec![0u32; vars + 1];
        for s in 0..g {
            for i in 0..n {
                occ_count[svar[s * n + i] as usize + 1] += 1;
            }
        }
        for v in 0..vars {
            occ_count[v + 1] += occ_count[v];
        }
        let occ_off = occ_count.clone();
        let mut cursor = occ_count;
        let mut occ = vec![0u32; g * n];
        for s in 0..g {
            for i in 0..n {
                let v = svar[s * n + i] as usize;
                occ[cursor[v] as usize] = s as u32;
                cursor[v] += 1;
            }
        }

        Engine {
            n,
            goal,
            svar,
            fwd_off,
            fwd_to,
            fwd_acts,
            rev_off,
            rev_from,
            rev_acts,
            occ_off,
            occ,
            dom,
            dist: vec![UNREACHED; g],
            lb_sum: 0,
            trail: Vec::new(),
            marks: Vec::new(),
            bound: None,
            propagations: 0,
            stamp: 0,
            dirty_stamp: vec![0; g],
            invalid_stamp: vec![0; g],
            tent: vec![UNREACHED; g],
            heap: BinaryHeap::new(),
        }
    }

    /// Number of states containing variable `v`.
    pub(crate) fn occurrences(&self, v: usize) -> usize {
        (self.occ_off[v + 1] - self.occ_off[v]) as usize
    }

    pub(crate) fn lower_bound(&self) -> u64 {
        self.lb_sum
    }

    #[inline]
    fn live(&self, s: usize, acts: u32) -> bool {
        let base = s * self.n;
        (0..self.n).all(|i| self.dom[self.svar[base + i] as usize] & (1 << act_of(acts, i)) != 0)
    }

    fn set_dom(&mut self, v: usize, bits: u8) {
        self.trail.push(Undo::Domain(v as u32, self.dom[v]));
        self.dom[v] = bits;
    }

    fn set_dist(&mut self, s: usize, d: u32) {
        self.trail.push(Undo::Dist(s as u32, self.dist[s]));
        self.lb_sum = self.lb_sum - self.dist[s] as u64 + d as u64;
        self.dist[s] = d;
    }

    pub(crate) fn push_level(&mut self) {
        self.marks.push(self.trail.len());
    }

    #[cfg(test)]
    pub(crate) fn depth(&self) -> usize {
        self.marks.len()
    }

    /// Undoes everything recorded since the matching `push_level`.
    pub(crate) fn pop_level(&mut self) {
        let mark = self.marks.pop().expect("pop_level without push_level");
        while self.trail.len() > mark {
            match self.trail.pop().unwrap() {
                Undo::Domain(v, old) => self.dom[v as usize] = old,
                Undo::Dist(s, old) => {
                    let s = s as usize;
                    self.lb_sum = self.lb_sum - self.dist[s] as u64 + old as u64;
                    self.dist[s] = old;
                }
            }
        }
    }

    /// Computes distances from scratch and prunes unsupported values.
    /// Returns false when some state cannot reach the goal.
    pub(crate) fn initialize(&mut self) -> bool {
        self.propagations += 1;
        let g = self.dist.len();
        let mut queue = std::collections::VecDeque::new();
        self.dist[self.goal] = 0;
        queue.push_back(self.goal);
        while let Some(t) = queue.pop_front() {
            let d = self.dist[t];
            for e in self.rev_off[t] as usize..self.rev_off[t + 1] as usize {
                let p = self.rev_from[e] as usize;
                if self.dist[p] == UNREACHED && self.live(p, self.rev_acts[e]) {
                    self.dist[p] = d + 1;
                    queue.push_back(p);
                }
            }
        }
        if self.dist.contains(&UNREACHED) {
            return false;
        }
        self.lb_sum = self.dist.iter().map(|&d| d as u64).sum();
        let all: Vec<u32> = (0..g as u32).collect();
        let mut changed = Vec::new();
        if !self.prune_support(&all, &mut changed) {
            return false;
        }
        self.within_bound() && self.propagate(changed)
    }

    fn within_bound(&self) -> bool {
        self.bound.is_none_or(|b| self.lb_sum < b)
    }

    /// Restricts `v` to `bits` and propagates.
    pub(crate) fn restrict(&mut self, v: usize, bits: u8) -> bool {
        let nd = self.dom[v] & bits;
        if nd == 0 {
            return false;
        }
        if nd == self.dom[v] {
            return self.within_bound();
        }
        self.set_dom(v, nd);
        self.propagate(vec![v as u32])
    }

    fn propagate(&mut self, mut pending: Vec<u32>) -> bool {
        let mut dirty = Vec::new();
        while !pending.is_empty() {
            self.propagations += 1;
            self.stamp = self.stamp.wrapping_add(1).max(1);
            dirty.clear();
            for &v in &pending {
                let v = v as usize;
                for k in self.occ_off[v] as usize..self.occ_off[v + 1] as usize {
                    let s = self.occ[k];
                    if self.dirty_stamp[s as usize] != self.stamp && s as usize != self.goal {
                        self.dirty_stamp[s as usize] = self.stamp;
                        dirty.push(s);
                    }
                }
            }
            pending.clear();
            if !self.repair_distances(&dirty) || !self.within_bound() {
                return false;
            }
            if !self.prune_support(&dirty, &mut pending) {
                return false;
            }
        }
        true
    }

    /// Drops values without a live edge in some state of `states`; pushes the
    /// variables whose domain shrank.
    fn prune_support(&mut self, states: &[u32], changed: &mut Vec<u32>) -> bool {
        let n = self.n;
        let mut support = [0u8; crate::states::MAX_AGENTS];
        for &s in states {
            let s = s as usize;
            if s == self.goal {
                continue;
            }
            support[..n].iter_mut().for_each(|x| *x = 0);
            let mut any = false;
            for e in self.fwd_off[s] as usize..self.fwd_off[s + 1] as usize {
                let acts = self.fwd_acts[e];
                if self.live(s, acts) {
                    any = true;
                    for (i, sup) in support[..n].iter_mut().enumerate() {
                        *sup |= 1 << act_of(acts, i);
                    }
                }
            }
            if !any {
                return false;
            }
            for (i, &sup) in support[..n].iter().enumerate() {
                let v = self.svar[s * n + i] as usize;
                let nd = self.dom[v] & sup;
                if nd != self.dom[v] {
                    if nd == 0 {
                        return false;
                    }
                    self.set_dom(v, nd);
                    changed.push(v as u32);
                }
            }
        }
        true
    }

    /// Decremental BFS repair after edges leaving `dirty` states died.
    fn repair_distances(&mut self, dirty: &[u32]) -> bool {
        let stamp = self.stamp;
        self.heap.clear();
        for &s in dirty {
            self.heap.push(Reverse((self.dist[s as usize], s)));
        }
        // Phase 1: find states that lost every shortest-path successor, in
        // increasing order of their old distance.
        let mut invalid: Vec<u32> = Vec::new();
        while let Some(Reverse((d, s))) = self.heap.pop() {
            let s = s as usize;
            if self.invalid_stamp[s] == stamp || d != self.dist[s] {
                continue;
            }
            let tight = (self.fwd_off[s] as usize..self.fwd_off[s + 1] as usize).any(|e| {
                let t = self.fwd_to[e] as usize;
                self.invalid_stamp[t] != stamp
                    && self.dist[t] + 1 == d
                    && self.live(s, self.fwd_acts[e])
            });
            if tight {
                continue;
            }
            self.invalid_stamp[s] = stamp;
            invalid.push(s as u32);
            for e in self.rev_off[s] as usize..self.rev_off[s + 1] as usize {
                let p = self.rev_from[e] as usize;
                if self.invalid_stamp[p] != stamp
                    && self.dist[p] == d + 1
                    && self.live(p, self.rev_acts[e])
                {
                    self.heap.push(Reverse((d + 1, p as u32)));
                }
            }
        }
        if invalid.is_empty() {
            return true;
        }
        // Phase 2: Dijkstra from the intact frontier into the invalidated set.
        self.heap.clear();
        for &u in &invalid {
            let u = u as usize;
            let mut best = UNREACHED;
            for e in self.fwd_off[u] as usize..self.fwd_off[u + 1] as usize {
                let t = self.fwd_to[e] as usize;
                if self.invalid_stamp[t] != stamp && self.live(u, self.fwd_acts[e]) {
                    best = best.min(self.dist[t] + 1);
                }
            }
            self.tent[u] = best;
            if best != UNREACHED {
                self.heap.push(Reverse((best, u as u32)));
            }
        }
        let limit = self.dist.len() as u32;
        let mut settled = 0;
        while let Some(Reverse((d, u))) = self.heap.pop() {
            let u = u as usize;
            if self.invalid_stamp[u] != stamp || d != self.tent[u] {
                continue;
            }
            if d >= limit {
                break;
            }
            self.invalid_stamp[u] = 0;
            settled += 1;
            self.set_dist(u, d);
            for e in self.rev_off[u] as usize..self.rev_off[u + 1] as usize {
                let p = self.rev_from[e] as usize;
                if self.invalid_stamp[p] == stamp && d + 1 < self.tent[p] && self.live(p, self.rev_acts[e]) {
                    self.tent[p] = d + 1;
                    self.heap.push(Reverse((d + 1, p as u32)));
                }
            }
        }
        if settled < invalid.len() {
            // Leave stamps behind; the next propagation round uses a new stamp.
            return false;
        }
        true
    }

    /// Action for variable `v` when its domain is a singleton.
    pub(crate) fn fixed_action(&self, v: usize) -> Option<Action> {
        crate::grid::ActionSet::from_bits(self.dom[v]).single_action()
    }

    #[cfg(test)]
    pub(crate) fn distances(&self) -> &[u32] {
        &self.dist
    }

    #[cfg(test)]
    /// Reference fixpoint: distances recomputed from scratch over live edges.
    pub(crate) fn scratch_distances(&self) -> Vec<u32> {
        let g = self.dist.len();
        let mut dist = vec![UNREACHED; g];
        let mut queue = std::collections::VecDeque::new();
        dist[self.goal] = 0;
        queue.push_back(self.goal);
        while let Some(t) = queue.pop_front() {
            for e in self.rev_off[t] as usize..self.rev_off[t + 1] as usize {
                let p = self.rev_from[e] as usize;
                if dist[p] == UNREACHED && self.live(p, self.rev_acts[e]) {
                    dist[p] = dist[t] + 1;
                    queue.push_back(p);
                }
            }
        }
        dist
    }
}
