//! Fixed-confidence, fixed-tolerance selection of the best system in a
//! stochastic bilevel problem.
//!
//! The library selects, among `K` candidate systems, one whose upper-level
//! objective at its own lower-level optimum is within `eps` of the best
//! system's, with probability at least `1 - alpha`. Selection runs in stages:
//! each stage tightens a tolerance schedule, re-optimizes the survivors'
//! lower-level decisions, and prunes systems that a paired sequential test
//! certifies as inferior.
//!
//! Module map:
//! - [`problem`]: problem traits, regularity constants, tolerance schedules.
//! - [`bounds`]: sample-complexity rules for both optimizer methods.
//! - [`optim`]: the exact (accelerated proximal) and asymptotic (projected
//!   stochastic gradient) lower-level optimizers.
//! - [`pruning`]: the sequential paired-comparison pruner.
//! - [`orchestrator`]: the staged driver tying the above together.
//! - [`drug`]: the built-in dose-optimization benchmark problem.
//! - [`config`]: TOML run configuration.
//! - [`report`]: CSV and table emission.
//! - [`rng`]: deterministic, resumable random streams.

pub mod bounds;
pub mod config;
pub mod drug;
pub mod optim;
pub mod orchestrator;
pub mod problem;
pub mod pruning;
pub mod report;
pub mod rng;
