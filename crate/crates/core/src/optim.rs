//! Lower-level optimizers: the accelerated stochastic gradient recursion
//! (SAGD) used by the exact method and plain projected SGD used by the
//! asymptotic method.
//!
//! Both states are resumable: stage t continues a system from iteration
//! N^{t-1} to N^t on the same gradient stream, so a split run is bit-identical
//! to a single run with the same total count.

use rand::RngCore;
use thiserror::Error;

use crate::problem::{FeasibleBox, Oracle, RegularityConstants, SystemSpec};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("nonfinite gradient sample at iteration {ell} (coordinate {coord})")]
    NonFiniteGradient { ell: u64, coord: usize },
    #[error("SAGD requires nu > 0, got {0}")]
    BadSmoothness(f64),
    #[error("SGD requires gamma * mu > 1/2, got gamma = {0}")]
    BadStepScale(f64),
    #[error("dimension mismatch: state has {state}, system has {system}")]
    DimMismatch { state: usize, system: usize },
}

fn check_finite(g: &[f64], ell: u64) -> Result<(), OptimError> {
    for (coord, v) in g.iter().enumerate() {
        if !v.is_finite() {
            return Err(OptimError::NonFiniteGradient { ell, coord });
        }
    }
    Ok(())
}

/// SAGD step constants at iteration ell >= 1:
/// q = 2/(ell+1), 1/gamma = mu (ell-1)/2 + 2 nu / ell,
/// q' = q / (q + (1-q)(1 + mu gamma)).
pub fn sagd_step_constants(ell: u64, c: &RegularityConstants) -> (f64, f64, f64) {
    let lf = ell as f64;
    let q = 2.0 / (lf + 1.0);
    let gamma = 1.0 / (c.mu * (lf - 1.0) / 2.0 + 2.0 * c.nu / lf);
    let q_prime = q / (q + (1.0 - q) * (1.0 + c.mu * gamma));
    (q, gamma, q_prime)
}

/// Resumable SAGD state: the averaged iterate x, the proximal iterate x_bar,
/// and the extrapolated point x_under at which gradients are sampled.
#[derive(Clone, Debug)]
pub struct SagdState {
    pub x: Vec<f64>,
    pub x_bar: Vec<f64>,
    pub x_under: Vec<f64>,
    pub ell: u64,
    scratch: Vec<f64>,
}

impl SagdState {
    pub fn new(x0: &[f64], bx: &FeasibleBox, c: &RegularityConstants) -> Result<Self, OptimError> {
        if c.nu <= 0.0 {
            return Err(OptimError::BadSmoothness(c.nu));
        }
        let mut x = x0.to_vec();
        bx.clamp(&mut x);
        Ok(Self {
            x_bar: x.clone(),
            x_under: x.clone(),
            scratch: vec![0.0; x.len()],
            x,
            ell: 0,
        })
    }

    /// One SAGD iteration. `grad` receives the extrapolated point and must
    /// write a gradient sample taken there.
    pub fn step(
        &mut self,
        c: &RegularityConstants,
        bx: &FeasibleBox,
        grad: impl FnOnce(&[f64], &mut [f64]),
    ) -> Result<(), OptimError> {
        let ell = self.ell + 1;
        let (q, gamma, q_prime) = sagd_step_constants(ell, c);
        for i in 0..self.x.len() {
            self.x_under[i] = (1.0 - q_prime) * self.x[i] + q_prime * self.x_bar[i];
        }
        grad(&self.x_under, &mut self.scratch);
        check_finite(&self.scratch, ell)?;
        // Box prox: weighted average, then coordinate-wise clamp.
        let denom = 1.0 + gamma * c.mu;
        for i in 0..self.x.len() {
            self.x_bar[i] =
                (gamma * c.mu * self.x_under[i] + self.x_bar[i] - gamma * self.scratch[i]) / denom;
        }
        bx.clamp(&mut self.x_bar);
        for i in 0..self.x.len() {
            self.x[i] = (1.0 - q) * self.x[i] + q * self.x_bar[i];
        }
        self.ell = ell;
        Ok(())
    }
}

/// Resumable projected-SGD state with step sizes gamma / ell.
#[derive(Clone, Debug)]
pub struct SgdState {
    pub x: Vec<f64>,
    pub ell: u64,
    pub gamma: f64,
    scratch: Vec<f64>,
}

impl SgdState {
    pub fn new(x0: &[f64], bx: &FeasibleBox, gamma: f64, c: &RegularityConstants) -> Result<Self, OptimError> {
        if !(gamma * c.mu > 0.5) {
            return Err(OptimError::BadStepScale(gamma));
        }
        let mut x = x0.to_vec();
        bx.clamp(&mut x);
        Ok(Self { scratch: vec![0.0; x.len()], x, ell: 0, gamma })
    }

    /// One projected SGD step: x <- clamp(x - (gamma/ell) g(x)).
    pub fn step(
        &mut self,
        bx: &FeasibleBox,
        grad: impl FnOnce(&[f64], &mut [f64]),
    ) -> Result<(), OptimError> {
        let ell = self.ell + 1;
        let step = self.gamma / ell as f64;
        grad(&self.x, &mut self.scratch);
        check_finite(&self.scratch, ell)?;
        for i in 0..self.x.len() {
            self.x[i] -= step * self.scratch[i];
        }
        bx.clamp(&mut self.x);
        self.ell = ell;
        Ok(())
    }
}

/// Either optimizer, as owned by the orchestrator per (replication, system).
#[derive(Clone, Debug)]
pub enum OptimizerState {
    Sagd(SagdState),
    Sgd(SgdState),
}

impl OptimizerState {
    pub fn ell(&self) -> u64 {
        match self {
            OptimizerState::Sagd(s) => s.ell,
            OptimizerState::Sgd(s) => s.ell,
        }
    }

    pub fn x(&self) -> &[f64] {
        match self {
            OptimizerState::Sagd(s) => &s.x,
            OptimizerState::Sgd(s) => &s.x,
        }
    }
}

/// Advances `state` to exactly `target_iters` cumulative iterations, drawing
/// one stochastic gradient per step from `rng`. Returns the number of steps
/// executed; a target at or below the current counter is a warning no-op.
pub fn optimize_to(
    sys: &SystemSpec,
    state: &mut OptimizerState,
    target_iters: u64,
    oracle: &dyn Oracle,
    rng: &mut dyn RngCore,
) -> Result<u64, OptimError> {
    if state.x().len() != sys.dim() {
        return Err(OptimError::DimMismatch { state: state.x().len(), system: sys.dim() });
    }
    let current = state.ell();
    if target_iters < current {
        log::warn!(
            "optimize_to target {} below current iteration {} for system {}; no-op",
            target_iters,
            current,
            sys.id
        );
        return Ok(0);
    }
    let steps = target_iters - current;
    match state {
        OptimizerState::Sagd(s) => {
            for _ in 0..steps {
                s.step(&sys.constants, &sys.bounds, |x, g| oracle.eval_g(sys.id, x, rng, g))?;
            }
        }
        OptimizerState::Sgd(s) => {
            for _ in 0..steps {
                s.step(&sys.bounds, |x, g| oracle.eval_g(sys.id, x, rng, g))?;
            }
        }
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::FeasibleBox;

    fn quad_constants() -> RegularityConstants {
        // f(x) = x^2 on [0, 2]: mu = nu = 2.
        RegularityConstants {
            mu: 2.0, nu: 2.0, m: 0.0, l: 4.0, d: 2.0,
            sigma_g: 0.0, cov_g_norm: 0.0, hess_norm: 2.0, grad_h_norm: 1.0,
        }
    }

    #[test]
    fn sagd_constants_at_one() {
        let c = quad_constants();
        let (q, gamma, q_prime) = sagd_step_constants(1, &c);
        assert_eq!(q, 1.0);
        assert!((1.0 / gamma - 2.0 * c.nu).abs() < 1e-15);
        assert!((q_prime - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sagd_deterministic_quadratic() {
        let c = quad_constants();
        let bx = FeasibleBox::new(vec![0.0], vec![2.0]).unwrap();
        let mut s = SagdState::new(&[2.0], &bx, &c).unwrap();
        let mut prev_f = 4.0;
        for _ in 0..200 {
            s.step(&c, &bx, |x, g| g[0] = 2.0 * x[0]).unwrap();
            let f = s.x[0] * s.x[0];
            assert!(f <= prev_f + 1e-12, "f increased: {prev_f} -> {f}");
            prev_f = f;
        }
        assert!(prev_f < 1e-3, "f(x_200) = {prev_f}");
    }

    #[test]
    fn sagd_deterministic_error_bound() {
        // Noise-free specialization of the error bound: f(x_N) <= 4 nu D^2 / (N(N+1)).
        let c = quad_constants();
        let bx = FeasibleBox::new(vec![0.0], vec![2.0]).unwrap();
        for n in [10u64, 100, 1000] {
            let mut s = SagdState::new(&[2.0], &bx, &c).unwrap();
            for _ in 0..n {
                s.step(&c, &bx, |x, g| g[0] = 2.0 * x[0]).unwrap();
            }
            let f = s.x[0] * s.x[0];
            let bound = 4.0 * c.nu * c.d * c.d / (n as f64 * (n as f64 + 1.0));
            assert!(f <= bound, "N = {n}: f = {f} > bound = {bound}");
        }
    }

    #[test]
    fn sagd_zero_gradient_is_stationary() {
        let c = quad_constants();
        let bx = FeasibleBox::new(vec![0.0], vec![2.0]).unwrap();
        let mut s = SagdState::new(&[1.25], &bx, &c).unwrap();
        for _ in 0..50 {
            s.step(&c, &bx, |_, g| g[0] = 0.0).unwrap();
        }
        assert!((s.x[0] - 1.25).abs() < 1e-12);
        assert!((s.x_bar[0] - 1.25).abs() < 1e-12);
        assert!((s.x_under[0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn sagd_rejects_nonfinite_gradient() {
        let c = quad_constants();
        let bx = FeasibleBox::new(vec![0.0], vec![2.0]).unwrap();
        let mut s = SagdState::new(&[1.0], &bx, &c).unwrap();
        let r = s.step(&c, &bx, |_, g| g[0] = f64::NAN);
        assert!(matches!(r, Err(OptimError::NonFiniteGradient { .. })));
    }

    #[test]
    fn sgd_explicit_steps() {
        let c = quad_constants();
        let bx = FeasibleBox::new(vec![0.0], vec![2.0]).unwrap();
        // gamma_1 = 0.5: x = 1 - 0.5*1 = 0.5.
        let mut s = SgdState::new(&[1.0], &bx, 0.5, &c).unwrap();
        s.step(&bx, |_, g| g[0] = 1.0).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-15);
        // gamma_1 = 1: x = 0.1 - 1 clamps to 0.
        let mut s = SgdState::new(&[0.1], &bx, 1.0, &c).unwrap();
        s.step(&bx, |_, g| g[0] = 1.0).unwrap();
        assert_eq!(s.x[0], 0.0);
    }

    #[test]
    fn sgd_deterministic_rate() {
        let c = quad_constants();
        let bx = FeasibleBox::new(vec![0.0], vec![2.0]).unwrap();
        let mut s = SgdState::new(&[2.0], &bx, 1.0 / c.mu, &c).unwrap();
        for _ in 0..1000 {
            s.step(&bx, |x, g| g[0] = 2.0 * x[0]).unwrap();
        }
        assert!(s.x[0] * s.x[0] < 1e-2);
    }

    #[test]
    fn sgd_rejects_small_gamma() {
        let c = quad_constants();
        let bx = FeasibleBox::new(vec![0.0], vec![2.0]).unwrap();
        assert!(SgdState::new(&[1.0], &bx, 0.25, &c).is_err());
    }
}
