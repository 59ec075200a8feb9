//! Goal-profile sweeps: solve one map under many goal profiles, sensors and
//! scenarios, and tabulate how many profiles admit a feasible policy.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::grid::{all_goal_profiles, parse_cell_list, Cell, GoalProfile, GridMap};
use crate::par::{self, Parallelism};
use crate::restrict::Scenario;
use crate::solver::{self, Budget, SearchOptions, SearchProblem, SolveStatus};
use crate::states::{Configuration, SensorRange};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProfileSource {
    /// Every ordered profile of distinct free cells that is proper.
    AllProper,
    Explicit(Vec<Vec<Cell>>),
    /// `count` proper profiles drawn without replacement.
    Sample { count: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub map: GridMap,
    pub agents: usize,
    pub sensors: Vec<SensorRange>,
    pub scenarios: Vec<Scenario>,
    pub source: ProfileSource,
    pub budget: Budget,
    pub jobs: Parallelism,
    pub allow_improper: bool,
    /// Minimize the sum of makespans instead of stopping at the first policy.
    pub optimize: bool,
}

impl ExperimentSpec {
    pub fn new(map: GridMap, agents: usize) -> Self {
        ExperimentSpec {
            map,
            agents,
            sensors: vec![SensorRange::Range(1)],
            scenarios: vec![Scenario::default()],
            source: ProfileSource::AllProper,
            budget: Budget::UNLIMITED,
            jobs: Parallelism::Auto,
            allow_improper: false,
            optimize: false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::InvalidSpec(m.to_string()));
        if self.agents == 0 {
            return fail("need at least one agent");
        }
        if self.sensors.is_empty() || self.scenarios.is_empty() {
            return fail("need at least one sensor and one scenario");
        }
        match &self.source {
            ProfileSource::Sample { count: 0, .. } => fail("sample count must be at least 1"),
            ProfileSource::Explicit(list) => {
                for goals in list {
                    if goals.len() != self.agents {
                        return Err(HarnessError::InvalidSpec(format!(
                            "profile with {} goals for {} agents",
                            goals.len(),
                            self.agents
                        )));
                    }
                    let profile = GoalProfile::new(&self.map, goals.clone())?;
                    if !self.allow_improper && !self.map.is_proper(&profile) {
                        return Err(HarnessError::Improper(profile.to_string()));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Profiles to run in output order, plus the number of profiles the
    /// source considered before the properness filter.
    pub fn profiles(&self) -> Result<(Vec<GoalProfile>, usize), HarnessError> {
        self.validate()?;
        match &self.source {
            ProfileSource::AllProper => {
                let all = all_goal_profiles(&self.map, self.agents);
                let total = all.len();
                let proper = all.into_iter().filter(|p| self.map.is_proper(p)).collect();
                Ok((proper, total))
            }
            ProfileSource::Explicit(list) => {
                let mut out = list
                    .iter()
                    .map(|g| GoalProfile::new(&self.map, g.clone()))
                    .collect::<Result<Vec<_>, _>>()?;
                out.sort();
                out.dedup();
                let total = out.len();
                Ok((out, total))
            }
            ProfileSource::Sample { count, seed } => {
                let all = all_goal_profiles(&self.map, self.agents);
                let total = all.len();
                let proper: Vec<GoalProfile> = all.into_iter().filter(|p| self.map.is_proper(p)).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut picked: Vec<GoalProfile> = proper
                    .choose_multiple(&mut rng, (*count).min(proper.len()))
                    .cloned()
                    .collect();
                picked.sort();
                Ok((picked, total))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub profile: GoalProfile,
    pub proper: bool,
    pub sensor: SensorRange,
    pub scenario: Scenario,
    pub status: SolveStatus,
    /// Sum of makespans of the returned policy (the first one found unless
    /// optimizing).
    pub cost: Option<u64>,
    pub nodes: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub feasible: usize,
    pub infeasible: usize,
    pub timeout: usize,
    pub proper: usize,
    pub rows: usize,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Profiles the source enumerated, proper or not.
    pub total_profiles: usize,
}

impl SweepResult {
    /// Counts for each (sensor, scenario) combination, recomputed from rows.
    pub fn counts(&self) -> BTreeMap<(String, String), Counts> {
        let mut out: BTreeMap<(String, String), Counts> = BTreeMap::new();
        for r in &self.rows {
            let c = out
                .entry((r.sensor.to_string(), r.scenario.to_string()))
                .or_default();
            c.rows += 1;
            c.proper += r.proper as usize;
            match r.status {
                SolveStatus::Feasible | SolveStatus::Optimal => c.feasible += 1,
                SolveStatus::Infeasible => c.infeasible += 1,
                SolveStatus::TimedOut => c.timeout += 1,
            }
        }
        out
    }

    pub fn counts_for(&self, sensor: SensorRange, scenario: Scenario) -> Counts {
        self.counts()
            .get(&(sensor.to_string(), scenario.to_string()))
            .copied()
            .unwrap_or_default()
    }

    /// One `#feasible/#proper/#total` line per combination.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for ((sensor, scenario), c) in self.counts() {
            s.push_str(&format!(
                "sensor={sensor} scenario={scenario} feasible={}/{}/{} infeasible={} timeout={}\n",
                c.feasible, c.proper, self.total_profiles, c.infeasible, c.timeout
            ));
        }
        s
    }
}

fn solve_cell(
    problem: &SearchProblem,
    options: &SearchOptions,
    optimize: bool,
) -> Result<(SolveStatus, Option<u64>, u64), HarnessError> {
    let out = if optimize {
        solver::optimize(problem, options, None, |_| {})?
    } else {
        solver::solve(problem, options)?
    };
    Ok((out.status, out.cost, out.stats.nodes))
}

/// Runs the experiment. Work is spread across (profile, sensor) pairs; each
/// solve is single-threaded. Row order does not depend on scheduling.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepResult, HarnessError> {
    let (profiles, total_profiles) = spec.profiles()?;
    let tasks: Vec<(&GoalProfile, SensorRange)> = profiles
        .iter()
        .flat_map(|p| spec.sensors.iter().map(move |&s| (p, s)))
        .collect();
    let options = SearchOptions::with_budget(spec.budget);
    let chunks = par::map_slice(&tasks, spec.jobs, |&(profile, sensor)| {
        let proper = spec.map.is_proper(profile);
        let cfg = Configuration::new(
            spec.map.clone(),
            sensor,
            profile.cells().to_vec(),
            spec.scenarios[0],
        )?;
        let base = SearchProblem::new(&cfg)?;
        let mut rows = Vec::with_capacity(spec.scenarios.len());
        for (k, &scenario) in spec.scenarios.iter().enumerate() {
            let start = Instant::now();
            let problem = if k == 0 {
                None
            } else {
                Some(base.with_scenario(scenario)?)
            };
            let (status, cost, nodes) =
                solve_cell(problem.as_ref().unwrap_or(&base), &options, spec.optimize)?;
            rows.push(SweepRow {
                profile: profile.clone(),
                proper,
                sensor,
                scenario,
                status,
                cost,
                nodes,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
        Ok::<_, HarnessError>(rows)
    });
    let mut rows = Vec::with_capacity(tasks.len() * spec.scenarios.len());
    for chunk in chunks {
        rows.extend(chunk?);
    }
    Ok(SweepResult {
        rows,
        total_profiles,
    })
}

pub const CSV_HEADER: [&str; 8] = [
    "profile", "proper", "sensor", "scenario", "status", "cost", "nodes", "seconds",
];

pub fn write_csv(result: &SweepResult, out: impl Write) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &result.rows {
        w.write_record([
            r.profile.to_string(),
            r.proper.to_string(),
            r.sensor.to_string(),
            r.scenario.to_string(),
            r.status.to_string(),
            r.cost.map(|c| c.to_string()).unwrap_or_default(),
            r.nodes.to_string(),
            format!("{:.6}", r.seconds),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::Csv(e.into()))?;
    Ok(())
}

fn parse_status(s: &str) -> Option<SolveStatus> {
    [
        SolveStatus::Feasible,
        SolveStatus::Optimal,
        SolveStatus::Infeasible,
        SolveStatus::TimedOut,
    ]
    .into_iter()
    .find(|st| st.name() == s)
}

/// Reads rows written by [`write_csv`], checking them against `map`.
pub fn read_csv(map: &GridMap, input: impl Read) -> Result<Vec<SweepRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str| HarnessError::Config {
            line,
            message: format!("bad {what}"),
        };
        let profile = GoalProfile::new(map, parse_cell_list(field(0))?)?;
        rows.push(SweepRow {
            profile,
            proper: field(1).parse().map_err(|_| bad("proper"))?,
            sensor: field(2).parse().map_err(|_| bad("sensor"))?,
            scenario: field(3).parse().map_err(|_| bad("scenario"))?,
            status: parse_status(field(4)).ok_or_else(|| bad("status"))?,
            cost: match field(5) {
                "" => None,
                c => Some(c.parse().map_err(|_| bad("cost"))?),
            },
            nodes: field(6).parse().map_err(|_| bad("nodes"))?,
            seconds: field(7).parse().map_err(|_| bad("seconds"))?,
        });
    }
    Ok(rows)
}
