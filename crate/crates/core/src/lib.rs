//! Synthesis of decentralized universal plans for partially observable agents
//! on four-connected grid maps.
//!
//! Given a map, a goal per agent and a sensor range, the solver searches for
//! one memoryless policy per agent (local observation to action) such that
//! every initial placement of the agents reaches the goal placement without
//! collisions. Candidate actions can be restricted by preference scenarios or
//! shared traffic rules, and the sum of makespans over all placements can be
//! minimized with an anytime branch-and-bound.

pub mod grid;
pub mod harness;
pub mod par;
pub mod policy;
pub mod restrict;
pub mod solver;
pub mod states;

pub use grid::{Action, ActionSet, Cell, GoalProfile, GridMap};
pub use par::Parallelism;
pub use policy::{PolicyProfile, VerificationReport};
pub use restrict::{CandidateModel, Scenario, ScenarioKind};
pub use states::{Configuration, GlobalState, LocalState, SensorRange, StateModel};
pub use solver::{Budget, SearchProblem, SolveOutcome, SolveStatus};
