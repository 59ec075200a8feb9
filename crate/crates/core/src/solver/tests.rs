use super::*;
use crate::grid::{Cell, GridMap};
use crate::restrict::ScenarioKind;
use crate::states::SensorRange;
use proptest::prelude::*;

fn cfg(map: &str, sensor: SensorRange, goals: &[(usize, usize)], kind: ScenarioKind) -> Configuration {
    Configuration::new(
        map.parse::<GridMap>().unwrap(),
        sensor,
        goals.iter().map(|&(r, c)| Cell::new(r, c)).collect(),
        Scenario::new(kind),
    )
    .unwrap()
}

/// Enumerates every assignment of the variables and verifies each.
fn brute_force(problem: &SearchProblem) -> (bool, Option<u64>) {
    let doms: Vec<Vec<Action>> = (0..problem.variables())
        .map(|v| problem.variable_keys(v).1.iter().collect())
        .collect();
    let mut idx = vec![0usize; doms.len()];
    let mut best: Option<u64> = None;
    loop {
        let p = problem.policy_from(|v| doms[v][idx[v]]).unwrap();
        let report = policy::verify_with(problem.config(), &p, Parallelism::Sequential).unwrap();
        if let Some(c) = report.sum_of_makespan() {
            best = Some(best.map_or(c, |b| b.min(c)));
        }
        let mut k = 0;
        loop {
            if k == doms.len() {
                return (best.is_some(), best);
            }
            idx[k] += 1;
            if idx[k] < doms[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn unlimited() -> SearchOptions {
    SearchOptions::default()
}

#[test]
fn corridor_with_crossing_goals_is_infeasible() {
    let c = cfg("...", SensorRange::Range(1), &[(0, 0), (0, 2)], ScenarioKind::Unrestricted);
    let problem = SearchProblem::new(&c).unwrap();
    let out = solve(&problem, &unlimited()).unwrap();
    assert_eq!(out.status, SolveStatus::Infeasible);
    assert!(out.policy.is_none());
    assert!(!brute_force(&problem).0);
}

#[test]
fn single_agent_is_always_feasible() {
    for map in ["....\n.#..\n....", ".#.\n...\n.#."] {
        let m: GridMap = map.parse().unwrap();
        for &goal in m.free_cells() {
            let c = Configuration::new(
                m.clone(),
                SensorRange::Range(1),
                vec![goal],
                Scenario::default(),
            )
            .unwrap();
            let out = solve(&SearchProblem::new(&c).unwrap(), &unlimited()).unwrap();
            assert_eq!(out.status, SolveStatus::Feasible);
            let report = policy::verify(&c, out.policy.as_ref().unwrap()).unwrap();
            assert!(report.feasible);
        }
    }
}

#[test]
fn single_agent_optimum_is_manhattan_sum() {
    for (rows, cols) in [(2, 2), (3, 3), (3, 4), (4, 4)] {
        let m = GridMap::empty(rows, cols).unwrap();
        let goal = Cell::new(rows / 2, cols - 1);
        let c = Configuration::new(m.clone(), SensorRange::Range(1), vec![goal], Scenario::default())
            .unwrap();
        let out = optimize(&SearchProblem::new(&c).unwrap(), &unlimited(), None, |_| {}).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        let expected: u64 = m.free_cells().iter().map(|&x| x.manhattan(goal) as u64).sum();
        assert_eq!(out.cost, Some(expected));
    }
}

#[test]
fn agrees_with_brute_force_on_small_maps() {
    let maps = ["...\n...", "..\n..", "...\n.#.", "....", ".#\n..\n.."];
    let mut checked = 0;
    for map in maps {
        let m: GridMap = map.parse().unwrap();
        for profile in crate::grid::all_goal_profiles(&m, 2) {
            for sensor in [SensorRange::Range(1), SensorRange::Full] {
                for kind in [ScenarioKind::Unrestricted, ScenarioKind::DefaultAction, ScenarioKind::Myopic] {
                    let c = Configuration::new(
                        m.clone(),
                        sensor,
                        profile.cells().to_vec(),
                        Scenario::new(kind),
                    )
                    .unwrap();
                    let problem = SearchProblem::new(&c).unwrap();
                    if problem.assignment_space() > 20_000 {
                        continue;
                    }
                    let (feasible, best) = brute_force(&problem);
                    let out = solve(&problem, &unlimited()).unwrap();
                    assert_eq!(out.status == SolveStatus::Feasible, feasible, "{map:?} {profile} {sensor} {kind:?}");
                    let opt = optimize(&problem, &unlimited(), None, |_| {}).unwrap();
                    assert_eq!(opt.cost, best, "{map:?} {profile} {sensor} {kind:?}");
                    if feasible {
                        assert!(m.is_proper(&profile));
                    }
                    checked += 1;
                }
            }
        }
    }
    eprintln!("brute-force instances: {checked}");
    assert!(checked > 50, "only {checked} instances were small enough");
}

#[test]
fn optimize_emits_strictly_decreasing_costs() {
    let c = cfg("...\n...\n...", SensorRange::Range(1), &[(0, 0), (2, 2)], ScenarioKind::Unrestricted);
    let problem = SearchProblem::new(&c).unwrap();
    let mut costs = Vec::new();
    let out = optimize(&problem, &unlimited(), None, |imp| costs.push(imp.cost)).unwrap();
    assert_eq!(out.status, SolveStatus::Optimal);
    assert!(!costs.is_empty());
    assert!(costs.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(costs.last().copied(), out.cost);
}

#[test]
fn optimize_from_initial_policy_only_improves() {
    let c = cfg("...\n...\n...", SensorRange::Range(1), &[(0, 1), (2, 1)], ScenarioKind::Unrestricted);
    let problem = SearchProblem::new(&c).unwrap();
    let first = solve(&problem, &unlimited()).unwrap();
    let start = first.cost.unwrap();
    let mut costs = Vec::new();
    let out = optimize(&problem, &unlimited(), first.policy.as_ref(), |imp| costs.push(imp.cost)).unwrap();
    assert!(costs.iter().all(|&c| c < start));
    assert!(out.cost.unwrap() <= start);
    assert_eq!(out.status, SolveStatus::Optimal);
}

#[test]
fn node_budget_times_out() {
    let c = cfg("....\n....\n....", SensorRange::Range(1), &[(0, 0), (2, 3)], ScenarioKind::Unrestricted);
    let problem = SearchProblem::new(&c).unwrap();
    let opts = SearchOptions::with_budget(Budget {
        timeout: None,
        max_nodes: Some(0),
    });
    let out = optimize(&problem, &opts, None, |_| {}).unwrap();
    assert_eq!(out.status, SolveStatus::TimedOut);
}

#[test]
fn spawned_optimizer_streams_improvements() {
    let c = cfg("...\n...\n...", SensorRange::Range(1), &[(1, 0), (1, 2)], ScenarioKind::Unrestricted);
    let problem = Arc::new(SearchProblem::new(&c).unwrap());
    let handle = spawn_optimize(problem, SearchOptions::default(), None);
    let streamed: Vec<u64> = handle.improvements.iter().map(|i| i.cost).collect();
    let out = handle.join().unwrap();
    assert_eq!(streamed.last().copied(), out.cost);
}

#[test]
fn fallback_chain() {
    let c = cfg("...", SensorRange::Range(1), &[(0, 0), (0, 2)], ScenarioKind::Unrestricted);
    assert!(matches!(
        solve_with_restriction_fallback(&c, &[], &unlimited()),
        Err(SolverError::EmptyChain)
    ));
    let chain = [Scenario::new(ScenarioKind::Myopic), Scenario::new(ScenarioKind::Unrestricted)];
    let out = solve_with_restriction_fallback(&c, &chain, &unlimited()).unwrap();
    assert_eq!(out.outcome.status, SolveStatus::Infeasible);
    assert_eq!(out.attempts.len(), 2);

    // Myopic fails here but the unrestricted problem is solvable.
    let m: GridMap = "...\n...".parse().unwrap();
    let mut witnessed = false;
    for profile in crate::grid::all_goal_profiles(&m, 2) {
        let c = Configuration::new(m.clone(), SensorRange::Range(1), profile.cells().to_vec(), Scenario::default())
            .unwrap();
        let out = solve_with_restriction_fallback(&c, &chain, &unlimited()).unwrap();
        if out.attempts[0].1 == SolveStatus::Infeasible && out.outcome.status == SolveStatus::Feasible {
            assert_eq!(out.scenario, Some(chain[1]));
            witnessed = true;
        }
    }
    assert!(witnessed);
}

#[test]
fn lower_bound_never_exceeds_completion_cost() {
    for map in ["..\n..", "....", "..\n.#"] {
        let m: GridMap = map.parse().unwrap();
        for profile in crate::grid::all_goal_profiles(&m, 2) {
            let c = Configuration::new(m.clone(), SensorRange::Range(1), profile.cells().to_vec(), Scenario::default())
                .unwrap();
            let problem = SearchProblem::new(&c).unwrap();
            if problem.assignment_space() > 100_000 {
                continue;
            }
            let mut e = Engine::new(&problem);
            let (feasible, best) = brute_force(&problem);
            let consistent = e.initialize();
            if let Some(best) = best {
                assert!(feasible && consistent);
                assert!(e.lower_bound() <= best);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Incremental distances equal a from-scratch BFS after any sequence of
    /// restrictions that stays consistent, and undo restores them exactly.
    #[test]
    fn incremental_distances_match_scratch(
        picks in prop::collection::vec((any::<prop::sample::Index>(), 0usize..5), 1..12),
        goal_seed in any::<prop::sample::Index>(),
    ) {
        let m: GridMap = "...\n.#.\n...".parse().unwrap();
        let profiles = crate::grid::all_goal_profiles(&m, 2);
        let profile = goal_seed.get(&profiles);
        let c = Configuration::new(m.clone(), SensorRange::Range(1), profile.cells().to_vec(), Scenario::default()).unwrap();
        let problem = SearchProblem::new(&c).unwrap();
        let mut e = Engine::new(&problem);
        if !e.initialize() {
            return Ok(());
        }
        let root: Vec<u32> = e.distances().to_vec();
        let root_dom = e.dom.clone();
        for (var_pick, a) in picks {
            let v = var_pick.index(problem.variables());
            e.push_level();
            if !e.restrict(v, ActionSet::single(Action::ALL[a]).bits()) {
                e.pop_level();
                continue;
            }
            prop_assert_eq!(e.distances(), &e.scratch_distances()[..]);
            prop_assert_eq!(e.lower_bound(), e.distances().iter().map(|&d| d as u64).sum::<u64>());
        }
        while e.depth() > 0 {
            e.pop_level();
        }
        prop_assert_eq!(e.distances(), &root[..]);
        prop_assert_eq!(&e.dom, &root_dom);
    }
}
