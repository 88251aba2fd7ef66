//! The multi-stage pruning-optimization loop.
//!
//! Each stage advances every surviving system's optimizer to a per-stage
//! iteration target derived from the configured sample-size rule, then runs a
//! prune session at the stage tolerances. The loop stops early once a single
//! system remains; the lowest-index survivor of the final stage is selected.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::bounds::{self, AsymptoticConstants, BoundsError};
use crate::optim::{self, OptimError, OptimizerState, SagdState, SgdState};
use crate::problem::{
    make_schedule, validate_schedule, BudgetCounters, Oracle, ProblemError, ScheduleRule,
    ScheduleViolation, SystemSpec, ToleranceSchedule,
};
use crate::pruning::{self, Eviction, PruneError};
use crate::rng::{stream, StreamPurpose};

/// Which optimizer / sample-size family to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// SAGD with non-asymptotic high-probability iteration counts.
    Exact,
    /// Projected SGD with CLT-based iteration counts.
    Asymptotic,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Asymptotic => "asymptotic",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Method::Exact),
            "asymptotic" => Ok(Method::Asymptotic),
            other => Err(format!("unknown method '{other}' (expected exact|asymptotic)")),
        }
    }
}

/// Whether the selection metric h coincides with the optimization metric f.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveMode {
    Same,
    Different,
}

impl ObjectiveMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveMode::Same => "same",
            ObjectiveMode::Different => "different",
        }
    }
}

impl std::str::FromStr for ObjectiveMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "same" => Ok(ObjectiveMode::Same),
            "different" => Ok(ObjectiveMode::Different),
            other => Err(format!("unknown objective '{other}' (expected same|different)")),
        }
    }
}

/// Full configuration of one benchmark cell.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub method: Method,
    pub objective: ObjectiveMode,
    pub eps: f64,
    pub alpha: f64,
    pub t_stages: usize,
    pub r0: u64,
    pub use_crn: bool,
    pub seed: u64,
    pub replications: u64,
    /// SGD step scale; `None` uses 1/mu per system.
    pub gamma: Option<f64>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("schedule failed validation: {0:?}")]
    BadSchedule(Vec<ScheduleViolation>),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error("no systems supplied")]
    NoSystems,
    #[error("system ids must be 1..=K in order, got id {got} at position {pos}")]
    BadSystemIds { got: usize, pos: usize },
}

/// Per-stage slice of a run's audit trail.
#[derive(Clone, Debug)]
pub struct StageReport {
    /// 1-based stage index.
    pub t: usize,
    pub remaining_before: Vec<usize>,
    pub remaining_after: Vec<usize>,
    /// (system id, cumulative iteration target N_k^t).
    pub targets: Vec<(usize, u64)>,
    pub grad_evals: u64,
    pub func_evals: u64,
    pub evictions: Vec<Eviction>,
}

/// Full audit trail of one replication.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub replication: u64,
    pub selected: usize,
    pub stages: Vec<StageReport>,
    pub budget: BudgetCounters,
    /// Set when |remaining| hit 1 before the final stage; the survivor is
    /// certified only at that stage's (coarser) tolerances.
    pub early_stop_stage: Option<usize>,
    pub elapsed: Duration,
}

/// Computes the per-stage cumulative iteration target of one system:
/// the configured rule at tolerance `eps_t` and per-system significance
/// `a_sys` = alpha / (2 T K).
pub fn stage_target(
    sys: &SystemSpec,
    method: Method,
    eps_t: f64,
    a_sys: f64,
    gamma: Option<f64>,
) -> Result<u64, BoundsError> {
    match method {
        Method::Exact => {
            let lambda = bounds::solve_lambda(a_sys)?.value;
            if sys.same_objective {
                bounds::n_exact_same(&sys.constants, lambda, eps_t)
            } else {
                bounds::n_exact_diff(&sys.constants, lambda, eps_t)
            }
        }
        Method::Asymptotic => {
            let ac = AsymptoticConstants::for_system(sys, gamma)?;
            if sys.same_objective {
                bounds::n_asym_same(ac.b, ac.d, eps_t, a_sys)
            } else {
                bounds::n_asym_diff(ac.sigma_tilde_sq.sqrt(), eps_t, a_sys)
            }
        }
    }
}

/// Total gradient budget of one full run, assuming no system is ever pruned
/// (every system optimized through all T stages). Deterministic in the
/// configuration; used for feasibility screening and budget reporting.
pub fn max_gradient_budget(cfg: &RunConfig, systems: &[SystemSpec]) -> Result<u64, RunError> {
    let sched = build_schedule(cfg, systems.len())?;
    let a_sys = per_system_significance(cfg, systems.len());
    let mut total = 0u64;
    for sys in systems {
        let mut prev = 0u64;
        for t in 0..sched.t_stages {
            let n = stage_target(sys, cfg.method, sched.eps[t], a_sys, cfg.gamma)?.max(prev);
            total += n - prev;
            prev = n;
        }
    }
    Ok(total)
}

fn per_system_significance(cfg: &RunConfig, k: usize) -> f64 {
    cfg.alpha / (2.0 * cfg.t_stages as f64 * k as f64)
}

fn build_schedule(cfg: &RunConfig, k: usize) -> Result<ToleranceSchedule, RunError> {
    let sched = make_schedule(k, cfg.eps, cfg.alpha, cfg.t_stages, ScheduleRule::Geometric)?;
    let violations = validate_schedule(&sched);
    if !violations.is_empty() {
        return Err(RunError::BadSchedule(violations));
    }
    Ok(sched)
}

fn make_state(sys: &SystemSpec, cfg: &RunConfig) -> Result<OptimizerState, RunError> {
    let x0 = sys.bounds.midpoint();
    Ok(match cfg.method {
        Method::Exact => {
            OptimizerState::Sagd(SagdState::new(&x0, &sys.bounds, &sys.constants)?)
        }
        Method::Asymptotic => {
            let gamma = cfg.gamma.unwrap_or(1.0 / sys.constants.mu);
            OptimizerState::Sgd(SgdState::new(&x0, &sys.bounds, gamma, &sys.constants)?)
        }
    })
}

/// Runs one replication of the multi-stage framework.
pub fn run(
    cfg: &RunConfig,
    systems: &[SystemSpec],
    oracle: &dyn Oracle,
    replication: u64,
) -> Result<RunReport, RunError> {
    let started = Instant::now();
    let k = systems.len();
    if k == 0 {
        return Err(RunError::NoSystems);
    }
    for (pos, sys) in systems.iter().enumerate() {
        if sys.id != pos + 1 {
            return Err(RunError::BadSystemIds { got: sys.id, pos });
        }
        sys.validate()?;
    }
    let sched = build_schedule(cfg, k)?;
    let a_sys = per_system_significance(cfg, k);

    let mut states: Vec<OptimizerState> = systems
        .iter()
        .map(|sys| make_state(sys, cfg))
        .collect::<Result<_, _>>()?;
    let mut grad_rngs: Vec<_> = systems
        .iter()
        .map(|sys| stream(cfg.seed, replication, sys.id as u64, StreamPurpose::Gradient))
        .collect();

    let mut remaining: Vec<usize> = (1..=k).collect();
    let mut budget = BudgetCounters::default();
    let mut stages = Vec::new();
    let mut early_stop_stage = None;

    if k == 1 {
        // Singleton candidate set: no pruning, one optimization pass at the
        // terminal tolerance.
        budget.begin_stage();
        let sys = &systems[0];
        let eps_t = sched.eps[sched.t_stages - 1];
        let target = stage_target(sys, cfg.method, eps_t, a_sys, cfg.gamma)?;
        let steps = optim::optimize_to(sys, &mut states[0], target, oracle, &mut grad_rngs[0])?;
        budget.add_grad(steps);
        stages.push(StageReport {
            t: 1,
            remaining_before: vec![1],
            remaining_after: vec![1],
            targets: vec![(1, target)],
            grad_evals: steps,
            func_evals: 0,
            evictions: Vec::new(),
        });
        debug_assert!(budget.consistent());
        return Ok(RunReport {
            replication,
            selected: 1,
            stages,
            budget,
            early_stop_stage: None,
            elapsed: started.elapsed(),
        });
    }

    for t in 1..=sched.t_stages {
        budget.begin_stage();
        let remaining_before = remaining.clone();
        let eps_t = sched.eps[t - 1];

        // Optimization: advance every survivor to its stage target.
        let mut targets = Vec::with_capacity(remaining.len());
        for &id in &remaining {
            let sys = &systems[id - 1];
            let state = &mut states[id - 1];
            // Counts are nondecreasing in the stage by construction; the max
            // guards hand-tuned schedules.
            let target = stage_target(sys, cfg.method, eps_t, a_sys, cfg.gamma)?.max(state.ell());
            let steps = optim::optimize_to(sys, state, target, oracle, &mut grad_rngs[id - 1])?;
            budget.add_grad(steps);
            targets.push((id, target));
        }

        // Pruning at the stage tolerances.
        let mut evictions = Vec::new();
        if remaining.len() >= 2 {
            let xs: Vec<&[f64]> = remaining.iter().map(|&id| states[id - 1].x()).collect();
            let mut prune_rng = stream(cfg.seed, replication, t as u64, StreamPurpose::Function);
            let outcome = pruning::prune(
                &remaining,
                &xs,
                eps_t,
                sched.eps_prime[t - 1],
                sched.alpha_prune[t - 1],
                cfg.r0,
                oracle,
                &mut prune_rng,
                cfg.use_crn,
            )?;
            budget.add_func(outcome.func_evals);
            evictions = outcome.evictions;
            remaining = outcome.remaining;
        }

        let stage = StageReport {
            t,
            remaining_before,
            remaining_after: remaining.clone(),
            targets,
            grad_evals: budget.per_stage[t - 1].grad_evals,
            func_evals: budget.per_stage[t - 1].func_evals,
            evictions,
        };
        stages.push(stage);

        if remaining.len() == 1 {
            if t < sched.t_stages {
                early_stop_stage = Some(t);
            }
            break;
        }
    }

    let selected = *remaining.iter().min().expect("prune never empties the set");
    debug_assert!(budget.consistent());
    Ok(RunReport {
        replication,
        selected,
        stages,
        budget,
        early_stop_stage,
        elapsed: started.elapsed(),
    })
}

/// Summary of one replication inside a `RunSet`.
#[derive(Clone, Debug)]
pub struct RepSummary {
    pub replication: u64,
    pub selected: usize,
    /// Whether the selected system is eps-optimal under the supplied truth;
    /// `None` when no truth is available.
    pub eps_optimal: Option<bool>,
    pub grad_evals: u64,
    pub func_evals: u64,
}

/// Aggregate statistics over replications: means with normal-approximation
/// 95% half-widths (`None` for a single replication).
#[derive(Clone, Debug)]
pub struct Aggregate {
    pub replications: u64,
    pub probability: Option<f64>,
    pub probability_hw: Option<f64>,
    pub gradient_mean: f64,
    pub gradient_hw: Option<f64>,
    pub function_mean: f64,
    pub function_hw: Option<f64>,
}

/// All outputs of a replicated run of one cell.
#[derive(Clone, Debug)]
pub struct RunSet {
    pub per_rep: Vec<RepSummary>,
    pub reports: Vec<RunReport>,
    pub aggregate: Aggregate,
}

fn mean_hw(values: impl Iterator<Item = f64> + Clone, n: u64) -> (f64, Option<f64>) {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    if n < 2 {
        return (mean, None);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    (mean, Some(1.96 * (var / nf).sqrt()))
}

/// Runs independent replications with per-replication derived seeds and
/// aggregates Probability / Gradient / Function statistics. `truth` supplies
/// h(k, x*_k) per system for eps-optimality judging, when known.
pub fn run_replications(
    cfg: &RunConfig,
    systems: &[SystemSpec],
    oracle: &dyn Oracle,
    truth: Option<&[f64]>,
) -> Result<RunSet, RunError> {
    assert!(cfg.replications >= 1, "need at least one replication");
    let best = truth.map(|t| t.iter().cloned().fold(f64::INFINITY, f64::min));
    let mut per_rep = Vec::with_capacity(cfg.replications as usize);
    let mut reports = Vec::with_capacity(cfg.replications as usize);
    for rep in 0..cfg.replications {
        let report = run(cfg, systems, oracle, rep)?;
        let eps_optimal = truth.map(|t| {
            let gap = t[report.selected - 1] - best.unwrap();
            gap <= cfg.eps + 1e-9
        });
        per_rep.push(RepSummary {
            replication: rep,
            selected: report.selected,
            eps_optimal,
            grad_evals: report.budget.grad_evals,
            func_evals: report.budget.func_evals,
        });
        reports.push(report);
    }
    let n = cfg.replications;
    let (grad_mean, grad_hw) = mean_hw(per_rep.iter().map(|r| r.grad_evals as f64), n);
    let (func_mean, func_hw) = mean_hw(per_rep.iter().map(|r| r.func_evals as f64), n);
    let (prob, prob_hw) = if truth.is_some() {
        let (p, hw) = mean_hw(
            per_rep.iter().map(|r| if r.eps_optimal == Some(true) { 1.0 } else { 0.0 }),
            n,
        );
        (Some(p), hw)
    } else {
        (None, None)
    };
    Ok(RunSet {
        aggregate: Aggregate {
            replications: n,
            probability: prob,
            probability_hw: prob_hw,
            gradient_mean: grad_mean,
            gradient_hw: grad_hw,
            function_mean: func_mean,
            function_hw: func_hw,
        },
        per_rep,
        reports,
    })
}
