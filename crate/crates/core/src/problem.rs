//! Problem-level types: systems, regularity constants, oracles, tolerance
//! schedules, and budget counters.
//!
//! A *system* is one of K discrete upper-level alternatives; each owns a
//! continuous lower-level decision variable constrained to a compact box.
//! The selection metric `h` and the per-system optimization metric `f` may
//! coincide (`same_objective`) or differ.

use rand::RngCore;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("box bounds invalid at coordinate {coord}: lower {lower} !< upper {upper}")]
    BadBox { coord: usize, lower: f64, upper: f64 },
    #[error("box dimension mismatch: {0} lower bounds, {1} upper bounds")]
    BoxDims(usize, usize),
    #[error("empty box (dimension 0)")]
    EmptyBox,
    #[error("regularity constant {name} = {value} is invalid: {reason}")]
    BadConstant { name: &'static str, value: f64, reason: &'static str },
    #[error("system count must be >= 1, got {0}")]
    BadSystemCount(usize),
    #[error("tolerance eps = {0} must be positive and finite")]
    BadTolerance(f64),
    #[error("significance alpha = {0} must lie in (0, 1)")]
    BadSignificance(f64),
    #[error("stage count must be >= 1, got {0}")]
    BadStageCount(usize),
}

/// Regularity constants of one system's lower-level objective, all
/// user-supplied upper (resp. lower, for `mu`) bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularityConstants {
    /// Strong-convexity modulus of f.
    pub mu: f64,
    /// Smoothness constant of f.
    pub nu: f64,
    /// Nonsmoothness constant (0 for smooth objectives).
    pub m: f64,
    /// Lipschitz constant of h on the box.
    pub l: f64,
    /// Domain diameter bound; D^2 >= squared box diameter.
    pub d: f64,
    /// Sub-Gaussian parameter of the stochastic gradient.
    pub sigma_g: f64,
    /// Bound on ||Cov(G(x*, xi))||_2.
    pub cov_g_norm: f64,
    /// Bound on ||grad^2 f(x*)||_2.
    pub hess_norm: f64,
    /// Bound on ||grad h(x*)||_2.
    pub grad_h_norm: f64,
}

impl RegularityConstants {
    pub fn validate(&self) -> Result<(), ProblemError> {
        let nonneg: [(&'static str, f64); 8] = [
            ("nu", self.nu),
            ("M", self.m),
            ("L", self.l),
            ("D", self.d),
            ("sigma_G", self.sigma_g),
            ("cov_G_norm", self.cov_g_norm),
            ("hess_norm", self.hess_norm),
            ("grad_h_norm", self.grad_h_norm),
        ];
        for (name, value) in nonneg {
            if !value.is_finite() || value < 0.0 {
                return Err(ProblemError::BadConstant { name, value, reason: "must be finite and nonnegative" });
            }
        }
        if !self.mu.is_finite() || self.mu <= 0.0 {
            return Err(ProblemError::BadConstant { name: "mu", value: self.mu, reason: "must be finite and positive" });
        }
        if self.nu > 0.0 && self.mu > self.nu {
            return Err(ProblemError::BadConstant { name: "mu", value: self.mu, reason: "must not exceed nu" });
        }
        Ok(())
    }
}

/// A compact axis-aligned box feasible set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibleBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl FeasibleBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ProblemError> {
        if lower.len() != upper.len() {
            return Err(ProblemError::BoxDims(lower.len(), upper.len()));
        }
        if lower.is_empty() {
            return Err(ProblemError::EmptyBox);
        }
        for (coord, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(ProblemError::BadBox { coord, lower: lo, upper: hi });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Coordinate-wise projection onto the box, in place.
    pub fn clamp(&self, x: &mut [f64]) {
        for ((xi, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(lo, hi);
        }
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(&lo, &hi)| 0.5 * (lo + hi)).collect()
    }

    pub fn diameter_sq(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(&lo, &hi)| (hi - lo) * (hi - lo)).sum()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .all(|((&xi, &lo), &hi)| xi >= lo && xi <= hi)
    }
}

/// One upper-level alternative and everything known about it a priori.
#[derive(Clone, Debug)]
pub struct SystemSpec {
    /// 1-based system id; the repo-wide ordering key.
    pub id: usize,
    pub bounds: FeasibleBox,
    pub constants: RegularityConstants,
    /// Whether h coincides with f for this system.
    pub same_objective: bool,
    /// Optional override for the asymptotic variance bound sigma_tilde^2.
    /// `None` derives it from the constants (see `bounds::sigma_tilde_bound`).
    pub sigma_tilde_sq: Option<f64>,
}

impl SystemSpec {
    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        self.constants.validate()?;
        if self.constants.d * self.constants.d + 1e-12 < self.bounds.diameter_sq() {
            return Err(ProblemError::BadConstant {
                name: "D",
                value: self.constants.d,
                reason: "D^2 must dominate the squared box diameter",
            });
        }
        if let Some(s) = self.sigma_tilde_sq {
            if !s.is_finite() || s < 0.0 {
                return Err(ProblemError::BadConstant {
                    name: "sigma_tilde_sq",
                    value: s,
                    reason: "must be finite and nonnegative",
                });
            }
        }
        Ok(())
    }
}

/// Behavioral contract of a stochastic simulation oracle.
///
/// `eval_g` must be unbiased for the gradient of f; repeated calls with
/// independent rng states are i.i.d. `joint_eval_h` draws the H samples of
/// several systems from shared randomness (common random numbers); the
/// default falls back to independent draws.
pub trait Oracle: Sync {
    /// One sample of the upper-level metric H(k, x, noise).
    fn eval_h(&self, k: usize, x: &[f64], rng: &mut dyn RngCore) -> f64;
    /// One sample of the lower-level objective F(k, x, noise).
    fn eval_f(&self, k: usize, x: &[f64], rng: &mut dyn RngCore) -> f64;
    /// One sample of the stochastic gradient G(k, x, noise), written to `out`.
    fn eval_g(&self, k: usize, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]);

    /// H samples for several systems at once, sharing randomness when the
    /// oracle supports it.
    fn joint_eval_h(&self, points: &[(usize, &[f64])], rng: &mut dyn RngCore, out: &mut [f64]) {
        assert_eq!(points.len(), out.len());
        for (slot, &(k, x)) in out.iter_mut().zip(points) {
            *slot = self.eval_h(k, x, rng);
        }
    }
}

/// Schedule construction rule. Only the geometric rule is offered:
/// eps_t = (2/5) 2^(T-t) eps, eps'_t = (3/5) 2^(T-t) eps, which satisfies the
/// terminal identity eps_T + eps'_T = eps by construction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScheduleRule {
    #[default]
    Geometric,
}

/// Stage-wise tolerances and significance budgets.
#[derive(Clone, Debug, PartialEq)]
pub struct ToleranceSchedule {
    pub t_stages: usize,
    /// Total tolerance; the terminal stage must satisfy eps_T + eps'_T = eps_total.
    pub eps_total: f64,
    /// Optimization tolerances eps_1 > ... > eps_T.
    pub eps: Vec<f64>,
    /// Pruning tolerances eps'_1 > ... > eps'_T.
    pub eps_prime: Vec<f64>,
    /// Total significance.
    pub alpha: f64,
    /// Per-stage optimization significance alpha_t.
    pub alpha_opt: Vec<f64>,
    /// Per-stage pruning significance alpha'_t.
    pub alpha_prune: Vec<f64>,
}

/// Default stage count T = ceil(log2 K), at least 1.
pub fn default_stage_count(k: usize) -> usize {
    (usize::BITS - k.saturating_sub(1).leading_zeros()).max(1) as usize
}

/// Builds the stage-wise tolerance schedule for total tolerance `eps` and
/// total significance `alpha`. The per-stage significances are
/// alpha_t = alpha'_t = alpha / (2T); downstream the optimization budget is
/// further split per system as alpha_t / K.
pub fn make_schedule(
    k: usize,
    eps: f64,
    alpha: f64,
    t_stages: usize,
    rule: ScheduleRule,
) -> Result<ToleranceSchedule, ProblemError> {
    let ScheduleRule::Geometric = rule;
    if k < 1 {
        return Err(ProblemError::BadSystemCount(k));
    }
    if !eps.is_finite() || eps <= 0.0 {
        return Err(ProblemError::BadTolerance(eps));
    }
    if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(ProblemError::BadSignificance(alpha));
    }
    if t_stages < 1 {
        return Err(ProblemError::BadStageCount(t_stages));
    }
    let t = t_stages;
    let mut eps_v = Vec::with_capacity(t);
    let mut eps_p = Vec::with_capacity(t);
    for stage in 1..=t {
        let scale = (2.0f64).powi((t - stage) as i32) * eps;
        eps_v.push(0.4 * scale);
        eps_p.push(0.6 * scale);
    }
    if *eps_v.last().unwrap() <= 0.0 {
        return Err(ProblemError::BadTolerance(eps));
    }
    let per_stage = alpha / (2.0 * t as f64);
    Ok(ToleranceSchedule {
        t_stages: t,
        eps_total: eps,
        eps: eps_v,
        eps_prime: eps_p,
        alpha,
        alpha_opt: vec![per_stage; t],
        alpha_prune: vec![per_stage; t],
    })
}

/// A violated schedule invariant, reported by `validate_schedule`.
#[derive(Clone, Debug, PartialEq)]
pub enum ScheduleViolation {
    /// eps or eps' is not strictly decreasing and positive at stage `t` (1-based).
    NotDecreasing { sequence: &'static str, t: usize },
    /// eps'_t > eps_t fails at stage `t`.
    PrimeNotLarger { t: usize },
    /// eps_T + eps'_T != eps.
    TerminalSum { got: f64, want: f64 },
    /// sum alpha_t + sum alpha'_t exceeds alpha.
    SignificanceBudget { got: f64, budget: f64 },
    /// Array lengths disagree with t_stages.
    LengthMismatch,
}

/// Checks every schedule invariant; returns all violations found.
pub fn validate_schedule(s: &ToleranceSchedule) -> Vec<ScheduleViolation> {
    let mut out = Vec::new();
    let t = s.t_stages;
    if s.eps.len() != t || s.eps_prime.len() != t || s.alpha_opt.len() != t || s.alpha_prune.len() != t || t == 0 {
        out.push(ScheduleViolation::LengthMismatch);
        return out;
    }
    for (name, seq) in [("eps", &s.eps), ("eps_prime", &s.eps_prime)] {
        for i in 0..t {
            let ok = seq[i] > 0.0 && (i == 0 || seq[i] < seq[i - 1]);
            if !ok {
                out.push(ScheduleViolation::NotDecreasing { sequence: name, t: i + 1 });
            }
        }
    }
    for i in 0..t {
        if !(s.eps_prime[i] > s.eps[i]) {
            out.push(ScheduleViolation::PrimeNotLarger { t: i + 1 });
        }
    }
    let terminal = s.eps[t - 1] + s.eps_prime[t - 1];
    if (terminal - s.eps_total).abs() > 1e-12 * s.eps_total.max(1.0) {
        out.push(ScheduleViolation::TerminalSum { got: terminal, want: s.eps_total });
    }
    let spent: f64 = s.alpha_opt.iter().chain(&s.alpha_prune).sum();
    if spent > s.alpha * (1.0 + 1e-12) {
        out.push(ScheduleViolation::SignificanceBudget { got: spent, budget: s.alpha });
    }
    out
}

/// Running evaluation counts, total and per stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BudgetCounters {
    pub grad_evals: u64,
    pub func_evals: u64,
    pub per_stage: Vec<StageBudget>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageBudget {
    pub grad_evals: u64,
    pub func_evals: u64,
}

impl BudgetCounters {
    pub fn begin_stage(&mut self) {
        self.per_stage.push(StageBudget::default());
    }

    pub fn add_grad(&mut self, n: u64) {
        self.grad_evals += n;
        if let Some(stage) = self.per_stage.last_mut() {
            stage.grad_evals += n;
        }
    }

    pub fn add_func(&mut self, n: u64) {
        self.func_evals += n;
        if let Some(stage) = self.per_stage.last_mut() {
            stage.func_evals += n;
        }
    }

    /// Totals always equal the sums of the per-stage entries.
    pub fn consistent(&self) -> bool {
        self.grad_evals == self.per_stage.iter().map(|s| s.grad_evals).sum::<u64>()
            && self.func_evals == self.per_stage.iter().map(|s| s.func_evals).sum::<u64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_t1() {
        let s = make_schedule(20, 0.1, 0.1, 1, ScheduleRule::Geometric).unwrap();
        assert!((s.eps[0] - 0.04).abs() < 1e-15);
        assert!((s.eps_prime[0] - 0.06).abs() < 1e-15);
        assert!((s.eps[0] + s.eps_prime[0] - 0.1).abs() < 1e-15);
        assert!((s.alpha_opt[0] - 0.05).abs() < 1e-15);
        assert!(validate_schedule(&s).is_empty());
    }

    #[test]
    fn schedule_t3() {
        let s = make_schedule(20, 0.1, 0.1, 3, ScheduleRule::Geometric).unwrap();
        let want_eps = [0.16, 0.08, 0.04];
        let want_prime = [0.24, 0.12, 0.06];
        for t in 0..3 {
            assert!((s.eps[t] - want_eps[t]).abs() < 1e-12, "eps[{t}]");
            assert!((s.eps_prime[t] - want_prime[t]).abs() < 1e-12, "eps'[{t}]");
            // fixed ratio 1.5 implies eps'_t > eps_t by construction
            assert!((s.eps_prime[t] / s.eps[t] - 1.5).abs() < 1e-12);
        }
        assert!((s.eps[2] + s.eps_prime[2] - 0.1).abs() < 1e-12);
        assert!(validate_schedule(&s).is_empty());
    }

    #[test]
    fn schedule_rejects_bad_inputs() {
        assert!(make_schedule(0, 0.1, 0.1, 1, ScheduleRule::Geometric).is_err());
        assert!(make_schedule(20, 0.0, 0.1, 1, ScheduleRule::Geometric).is_err());
        assert!(make_schedule(20, 0.1, 1.0, 1, ScheduleRule::Geometric).is_err());
        assert!(make_schedule(20, 0.1, 0.1, 0, ScheduleRule::Geometric).is_err());
    }

    #[test]
    fn validate_flags_constructed_violations() {
        // eps = eps' = (0.04) with total 0.1: prime-not-larger and terminal-sum.
        let s = ToleranceSchedule {
            t_stages: 1,
            eps_total: 0.1,
            eps: vec![0.04],
            eps_prime: vec![0.04],
            alpha: 0.1,
            alpha_opt: vec![0.05],
            alpha_prune: vec![0.05],
        };
        let v = validate_schedule(&s);
        assert!(v.contains(&ScheduleViolation::PrimeNotLarger { t: 1 }));
        assert!(v.iter().any(|x| matches!(x, ScheduleViolation::TerminalSum { .. })));

        // eps = (0.2, 0.04), eps' = (0.1, 0.06): eps'_1 > eps_1 fails.
        let s = ToleranceSchedule {
            t_stages: 2,
            eps_total: 0.1,
            eps: vec![0.2, 0.04],
            eps_prime: vec![0.1, 0.06],
            alpha: 0.1,
            alpha_opt: vec![0.025; 2],
            alpha_prune: vec![0.025; 2],
        };
        let v = validate_schedule(&s);
        assert_eq!(v, vec![ScheduleViolation::PrimeNotLarger { t: 1 }]);
    }

    #[test]
    fn default_stages() {
        assert_eq!(default_stage_count(1), 1);
        assert_eq!(default_stage_count(2), 1);
        assert_eq!(default_stage_count(20), 5);
        assert_eq!(default_stage_count(32), 5);
        assert_eq!(default_stage_count(33), 6);
    }

    #[test]
    fn box_ops() {
        let b = FeasibleBox::new(vec![0.0, -1.0], vec![2.0, 1.0]).unwrap();
        assert_eq!(b.midpoint(), vec![1.0, 0.0]);
        assert!((b.diameter_sq() - 8.0).abs() < 1e-15);
        let mut x = vec![3.0, -2.0];
        b.clamp(&mut x);
        assert_eq!(x, vec![2.0, -1.0]);
        assert!(b.contains(&x));
        assert!(FeasibleBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(FeasibleBox::new(vec![], vec![]).is_err());
    }

    #[test]
    fn budget_counters_consistency() {
        let mut b = BudgetCounters::default();
        b.begin_stage();
        b.add_grad(10);
        b.add_func(3);
        b.begin_stage();
        b.add_grad(5);
        assert_eq!(b.grad_evals, 15);
        assert_eq!(b.func_evals, 3);
        assert!(b.consistent());
    }

    #[test]
    fn constants_validation() {
        let mut c = RegularityConstants {
            mu: 2.0, nu: 2.0, m: 0.0, l: 1.0, d: 2.0,
            sigma_g: 0.5, cov_g_norm: 1.0, hess_norm: 2.0, grad_h_norm: 1.0,
        };
        assert!(c.validate().is_ok());
        c.mu = 3.0; // mu > nu
        assert!(c.validate().is_err());
        c.mu = 0.0;
        assert!(c.validate().is_err());
    }
}
