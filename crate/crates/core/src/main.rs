use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use maupf::grid::{parse_cell_list, GridMap};
use maupf::harness::{self, ExperimentSpec, HarnessError, InstanceConfig, ProfileSource};
use maupf::policy::{self, PolicyProfile};
use maupf::solver::{self, Budget, SearchOptions, SearchProblem, SolveStatus, SolverError};
use maupf::states::{self, Configuration, GlobalState, SensorRange};
use maupf::{Parallelism, Scenario};

const EXIT_FEASIBLE: u8 = 0;
const EXIT_INFEASIBLE: u8 = 1;
const EXIT_TIMEOUT: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_INTERNAL: u8 = 70;

/// Without --prove-optimal or --timeout, optimize stops after this long.
const DEFAULT_OPTIMIZE_SECS: f64 = 60.0;

const SCENARIOS: [&str; 6] = ["none", "default", "lastmin", "myopic", "traffic-loc", "traffic-free"];

/// Decentralized universal plans for partially observable agents on grid maps.
#[derive(Parser)]
#[command(name = "maupf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a feasible policy profile.
    Solve {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Where to write the policy file.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Minimize the sum of makespans, printing each improvement.
    Optimize {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Run until the search space is exhausted unless --timeout is given.
        #[arg(long)]
        prove_optimal: bool,
        /// Feasible policy to start from.
        #[arg(long)]
        initial: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Check a policy file against an instance.
    Verify {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Run a policy from one initial placement.
    Simulate {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long)]
        policy: PathBuf,
        /// Initial positions, e.g. "(0,0);(2,1)".
        #[arg(long, conflicts_with = "random_init")]
        init: Option<String>,
        /// Draw the initial placement uniformly with --seed.
        #[arg(long)]
        random_init: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// States to emit at most; defaults to the number of global states + 1.
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Count feasible goal profiles on a map.
    Sweep(SweepArgs),
    /// Local-state count estimate for a map, sensor and agent count.
    Estimate {
        map: PathBuf,
        #[arg(long)]
        agents: usize,
        #[arg(long, default_value = "1")]
        sensor: String,
        /// Also enumerate the realizable local states.
        #[arg(long)]
        exact: bool,
    },
    /// Generate a seeded random connected map.
    RandomMap {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        /// Probability that a cell is blocked.
        #[arg(long, default_value_t = 0.2)]
        density: f64,
        #[arg(long, default_value_t = 2)]
        min_free: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InstanceArgs {
    /// Map file: one row per line, '.' free, '#' blocked.
    map: Option<PathBuf>,
    /// Instance file with `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Goal cells, one per agent, e.g. "(0,0);(5,5)".
    #[arg(long)]
    goals: Option<String>,
    /// Sensor range (integer or "full"); 1 when not given anywhere.
    #[arg(long)]
    sensor: Option<String>,
    #[arg(long, value_parser = SCENARIOS)]
    scenario: Option<String>,
    /// Greedy actions where a traffic-rule agent sees nobody.
    #[arg(long)]
    traffic_with_default: bool,
}

#[derive(Args)]
struct BudgetArgs {
    /// Wall-clock limit in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// Search-node limit.
    #[arg(long)]
    max_nodes: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    map: PathBuf,
    #[arg(long, default_value_t = 2)]
    agents: usize,
    /// Comma-separated sensor ranges.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    sensor: Vec<String>,
    /// Comma-separated scenarios.
    #[arg(long, value_delimiter = ',', value_parser = SCENARIOS, default_value = "none")]
    scenario: Vec<String>,
    #[arg(long)]
    traffic_with_default: bool,
    /// Explicit goal profiles; repeat the flag for several.
    #[arg(long = "profile", conflicts_with = "sample")]
    profiles: Vec<String>,
    /// Draw this many proper profiles instead of running all of them.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    allow_improper: bool,
    /// Minimize each solve instead of stopping at the first policy.
    #[arg(long)]
    optimize: bool,
    /// CSV output path; "-" for stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Worker threads: 0 = all cores, 1 = sequential.
    #[arg(long, env = "MAUPF_JOBS", default_value_t = 0)]
    jobs: usize,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Internal(String),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Solver(SolverError::Unsound) => CliError::Internal(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        HarnessError::from(e).into()
    }
}

impl From<policy::PolicyError> for CliError {
    fn from(e: policy::PolicyError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

fn parse_scenario(name: &str, with_default: bool) -> Result<Scenario, CliError> {
    let mut s: Scenario = name.parse().map_err(usage)?;
    if with_default {
        if !s.kind.is_traffic() {
            return Err(usage("--traffic-with-default needs a traffic scenario"));
        }
        s.with_default = true;
    }
    Ok(s)
}

fn parse_sensor(s: &str) -> Result<SensorRange, CliError> {
    s.parse().map_err(usage)
}

impl InstanceArgs {
    fn resolve(&self) -> Result<(GridMap, Configuration), CliError> {
        let base = match &self.config {
            Some(p) => InstanceConfig::load(p)?,
            None => InstanceConfig::default(),
        };
        let over = InstanceConfig {
            map: self.map.clone(),
            agents: None,
            sensor: self.sensor.as_deref().map(parse_sensor).transpose()?,
            goals: self
                .goals
                .as_deref()
                .map(|g| parse_cell_list(g).map_err(usage))
                .transpose()?,
            scenario: self
                .scenario
                .as_deref()
                .map(|s| s.parse().map_err(usage))
                .transpose()?,
            traffic_with_default: self.traffic_with_default,
        };
        let merged = base.overridden_by(over);
        let map = merged.load_map()?;
        let cfg = merged.to_configuration(&map)?;
        Ok((map, cfg))
    }
}

impl BudgetArgs {
    fn budget(&self) -> Result<Budget, CliError> {
        let timeout = self
            .timeout
            .map(|t| Duration::try_from_secs_f64(t).map_err(|_| usage("--timeout must be a non-negative number")))
            .transpose()?;
        Ok(Budget {
            timeout,
            max_nodes: self.max_nodes,
        })
    }
}

fn warn_if_improper(cfg: &Configuration) {
    if !cfg.map.is_proper(&cfg.goals) {
        eprintln!(
            "warning: goal profile {} is not proper; no feasible policy exists",
            cfg.goals
        );
    }
}

fn print_instance(problem: &SearchProblem) {
    let locals: Vec<String> = problem.model.locals.iter().map(|t| t.len().to_string()).collect();
    println!("global states: {}", problem.global_states());
    println!("local states: {}", locals.join(" "));
    println!("decision keys: {}", problem.decision_keys());
}

fn write_policy_file(path: &Path, p: &PolicyProfile) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| usage(format!("{}: {e}", path.display())))?);
    policy::write_policy(p, &mut out)?;
    out.flush()?;
    Ok(())
}

fn read_policy_file(path: &Path, cfg: &Configuration) -> Result<PolicyProfile, CliError> {
    let f = File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    policy::read_policy(cfg, BufReader::new(f)).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn exit_for(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Feasible | SolveStatus::Optimal => EXIT_FEASIBLE,
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
        SolveStatus::TimedOut => EXIT_TIMEOUT,
    }
}

fn cmd_solve(instance: &InstanceArgs, budget: &BudgetArgs, output: Option<&Path>) -> Result<u8, CliError> {
    let (_, cfg) = instance.resolve()?;
    warn_if_improper(&cfg);
    let problem = SearchProblem::new(&cfg)?;
    print_instance(&problem);
    let out = solver::solve(&problem, &SearchOptions::with_budget(budget.budget()?))?;
    println!("status: {}", out.status);
    if let Some(c) = out.cost {
        println!("cost: {c}");
    }
    println!("nodes: {}", out.stats.nodes);
    println!("seconds: {:.3}", out.stats.elapsed.as_secs_f64());
    if let (Some(path), Some(p)) = (output, &out.policy) {
        write_policy_file(path, p)?;
        println!("policy: {}", path.display());
    }
    Ok(exit_for(out.status))
}

fn cmd_optimize(
    instance: &InstanceArgs,
    budget: &BudgetArgs,
    prove_optimal: bool,
    initial: Option<&Path>,
    output: Option<&Path>,
) -> Result<u8, CliError> {
    let (_, cfg) = instance.resolve()?;
    warn_if_improper(&cfg);
    let mut budget = budget.budget()?;
    if !prove_optimal && budget.timeout.is_none() && budget.max_nodes.is_none() {
        budget.timeout = Some(Duration::from_secs_f64(DEFAULT_OPTIMIZE_SECS));
    }
    let problem = Arc::new(SearchProblem::new(&cfg)?);
    print_instance(&problem);
    let start = initial.map(|p| read_policy_file(p, &cfg)).transpose()?;
    let handle = solver::spawn_optimize(problem, SearchOptions::with_budget(budget), start);
    for imp in handle.improvements.iter() {
        println!(
            "improved cost={} seconds={:.3} nodes={}",
            imp.cost,
            imp.elapsed.as_secs_f64(),
            imp.nodes
        );
    }
    let out = handle.join()?;
    println!("status: {}", out.status);
    if let Some(c) = out.cost {
        println!("cost: {c}");
    }
    println!("nodes: {}", out.stats.nodes);
    println!("seconds: {:.3}", out.stats.elapsed.as_secs_f64());
    if let (Some(path), Some(p)) = (output, &out.policy) {
        write_policy_file(path, p)?;
        println!("policy: {}", path.display());
    }
    // Running out of time is the normal end of an anytime run.
    Ok(match out.status {
        SolveStatus::TimedOut if out.policy.is_some() && !prove_optimal => EXIT_FEASIBLE,
        s => exit_for(s),
    })
}

fn cmd_verify(instance: &InstanceArgs, policy_path: &Path) -> Result<u8, CliError> {
    let (_, cfg) = instance.resolve()?;
    let p = read_policy_file(policy_path, &cfg)?;
    let report = policy::verify(&cfg, &p)?;
    if report.feasible {
        println!("feasible: true");
        println!("sum of makespan: {}", report.sum_of_makespan().unwrap_or(0));
        return Ok(EXIT_FEASIBLE);
    }
    println!("feasible: false");
    if let Some(cx) = &report.counterexample {
        println!("counterexample: {} from {}", cx.kind, cx.initial);
        for (t, s) in cx.trace.iter().enumerate() {
            println!("t={t} {s}");
        }
    }
    Ok(EXIT_INFEASIBLE)
}

fn cmd_simulate(
    instance: &InstanceArgs,
    policy_path: &Path,
    init: Option<&str>,
    random_init: bool,
    seed: u64,
    max_steps: Option<usize>,
) -> Result<u8, CliError> {
    let (_, cfg) = instance.resolve()?;
    let p = read_policy_file(policy_path, &cfg)?;
    let space = states::enumerate_global_states(&cfg).map_err(usage)?;
    let start = match (init, random_init) {
        (Some(text), _) => GlobalState::new(parse_cell_list(text).map_err(usage)?),
        (None, true) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            space.state(rng.gen_range(0..space.len()))
        }
        (None, false) => return Err(usage("give --init or --random-init")),
    };
    start.validate(&cfg).map_err(usage)?;
    let trace = policy::simulate(&cfg, &p, &start, max_steps.unwrap_or(space.len() + 1))?;
    print!("{trace}");
    Ok(if trace.status == policy::TraceStatus::Goal {
        EXIT_FEASIBLE
    } else {
        EXIT_INFEASIBLE
    })
}

fn cmd_sweep(a: &SweepArgs) -> Result<u8, CliError> {
    let map = harness::load_map(&a.map)?;
    let mut spec = ExperimentSpec::new(map, a.agents);
    spec.sensors = a.sensor.iter().map(|s| parse_sensor(s)).collect::<Result<_, _>>()?;
    spec.scenarios = a
        .scenario
        .iter()
        .map(|s| parse_scenario(s, a.traffic_with_default))
        .collect::<Result<_, _>>()?;
    spec.source = if !a.profiles.is_empty() {
        ProfileSource::Explicit(
            a.profiles
                .iter()
                .map(|p| parse_cell_list(p).map_err(usage))
                .collect::<Result<_, _>>()?,
        )
    } else if let Some(count) = a.sample {
        ProfileSource::Sample { count, seed: a.seed }
    } else {
        ProfileSource::AllProper
    };
    spec.budget = a.budget.budget()?;
    spec.jobs = Parallelism::from_jobs(a.jobs);
    spec.allow_improper = a.allow_improper;
    spec.optimize = a.optimize;
    let result = harness::run_sweep(&spec)?;
    match a.csv.as_deref() {
        Some(p) if p == Path::new("-") => harness::write_csv(&result, io::stdout().lock())?,
        Some(p) => {
            let f = File::create(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            harness::write_csv(&result, BufWriter::new(f))?;
        }
        None => {}
    }
    let summary = result.summary();
    if a.csv.as_deref() == Some(Path::new("-")) {
        eprint!("{summary}");
    } else {
        print!("{summary}");
    }
    Ok(EXIT_FEASIBLE)
}

fn cmd_estimate(map: &Path, agents: usize, sensor: &str, exact: bool) -> Result<u8, CliError> {
    let map = harness::load_map(map)?;
    let sensor = parse_sensor(sensor)?;
    let m = map.free_count() as u64;
    let k = sensor.interior_size(&map) as u64;
    let est = states::estimate_local_state_count(m, k, agents as u64).map_err(usage)?;
    println!("estimate: {est} (M={m} K={k} n={agents})");
    if exact {
        if agents > map.free_count() {
            return Err(usage("more agents than free cells"));
        }
        // The count does not depend on where the goals are.
        let goals = map.free_cells()[..agents].to_vec();
        let cfg = Configuration::new(map.clone(), sensor, goals, Scenario::default()).map_err(usage)?;
        let table = states::enumerate_local_states(&cfg, 0).map_err(usage)?;
        println!("exact: {}", table.len());
    }
    Ok(EXIT_FEASIBLE)
}

fn cmd_random_map(
    rows: usize,
    cols: usize,
    density: f64,
    min_free: usize,
    seed: u64,
    output: Option<&Path>,
) -> Result<u8, CliError> {
    let map = harness::random_map(rows, cols, density, min_free, seed)?;
    match output {
        Some(p) => std::fs::write(p, map.to_string()).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => print!("{map}"),
    }
    Ok(EXIT_FEASIBLE)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Solve {
            instance,
            budget,
            output,
        } => cmd_solve(&instance, &budget, output.as_deref()),
        Command::Optimize {
            instance,
            budget,
            prove_optimal,
            initial,
            output,
        } => cmd_optimize(&instance, &budget, prove_optimal, initial.as_deref(), output.as_deref()),
        Command::Verify { instance, policy } => cmd_verify(&instance, &policy),
        Command::Simulate {
            instance,
            policy,
            init,
            random_init,
            seed,
            max_steps,
        } => cmd_simulate(&instance, &policy, init.as_deref(), random_init, seed, max_steps),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Estimate {
            map,
            agents,
            sensor,
            exact,
        } => cmd_estimate(&map, agents, &sensor, exact),
        Command::RandomMap {
            rows,
            cols,
            density,
            min_free,
            seed,
            output,
        } => cmd_random_map(rows, cols, density, min_free, seed, output.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}
