//! The drug-selection-with-dosage benchmark family.
//!
//! K quadratic systems on the dosage box [0, 2]:
//! F(i, x, xi) = (a_{i,2} + xi_2) x^2 + (a_{i,1} + xi_1) x + (a_{i,0} + xi_0)
//! with a_{i,2} = 1 + 0.1 i, a_{i,1} = -3 a_{i,2}, a_{i,0} = a_{i,1}^2 / (4 a_{i,2}) + 0.11 i
//! and xi_r ~ Uniform[-0.5, 0.5). Every system has the analytic optimum
//! x* = 1.5 with f(i, x*) = 0.11 i, so the best-vs-second gap is 0.11.
//! The upper-level metric is either h = f (same objective) or
//! h(i, x) = c_i x + omega_i f(i, x) (different objective).

use rand::{Rng, RngCore};

use crate::orchestrator::ObjectiveMode;
use crate::problem::{FeasibleBox, Oracle, RegularityConstants, SystemSpec};

/// Per-system quadratic coefficients and upper-level weights.
#[derive(Clone, Copy, Debug)]
pub struct DrugSystem {
    pub a2: f64,
    pub a1: f64,
    pub a0: f64,
    pub c: f64,
    pub omega: f64,
}

/// Optional overrides of the benchmark constants for sensitivity studies.
/// `None` fields keep the published defaults.
#[derive(Clone, Copy, Debug, Default)]
pub struct DrugOverrides {
    /// Upper-level cost coefficient c_i (default 1).
    pub cost: Option<f64>,
    /// Upper-level weight omega_i (default 1).
    pub omega: Option<f64>,
    /// Sub-Gaussian gradient parameter sigma_G^2 (default 1/3).
    pub sigma_g_sq: Option<f64>,
    /// Domain diameter bound D (default 2).
    pub d_bound: Option<f64>,
    /// Lipschitz constant of h (default: sup of |dh/dx| over the box).
    pub l: Option<f64>,
    /// Asymptotic variance bound sigma_tilde^2 (default c_i D_i / mu_i^2).
    pub sigma_tilde_sq: Option<f64>,
}

/// The benchmark problem: systems, objective mode, and an `Oracle` impl.
#[derive(Clone, Debug)]
pub struct DrugProblem {
    pub systems: Vec<DrugSystem>,
    pub objective: ObjectiveMode,
    overrides: DrugOverrides,
}

impl DrugProblem {
    pub fn new(k: usize, objective: ObjectiveMode) -> Self {
        Self::with_overrides(k, objective, DrugOverrides::default())
    }

    pub fn with_overrides(k: usize, objective: ObjectiveMode, overrides: DrugOverrides) -> Self {
        assert!(k >= 1, "need at least one system");
        let systems = (1..=k)
            .map(|i| {
                let a2 = 1.0 + 0.1 * i as f64;
                let a1 = -3.0 * a2;
                let a0 = a1 * a1 / (4.0 * a2) + 0.11 * i as f64;
                DrugSystem {
                    a2,
                    a1,
                    a0,
                    c: overrides.cost.unwrap_or(1.0),
                    omega: overrides.omega.unwrap_or(1.0),
                }
            })
            .collect();
        Self { systems, objective, overrides }
    }

    pub fn k(&self) -> usize {
        self.systems.len()
    }

    /// Every system's lower-level minimizer.
    pub fn x_star(&self) -> f64 {
        1.5
    }

    /// Noise-free lower-level objective f(i, x).
    pub fn f_true(&self, i: usize, x: f64) -> f64 {
        let s = &self.systems[i - 1];
        s.a2 * x * x + s.a1 * x + s.a0
    }

    /// Noise-free upper-level metric h(i, x) under the configured mode.
    pub fn h_true(&self, i: usize, x: f64) -> f64 {
        let s = &self.systems[i - 1];
        match self.objective {
            ObjectiveMode::Same => self.f_true(i, x),
            ObjectiveMode::Different => s.c * x + s.omega * self.f_true(i, x),
        }
    }

    /// Ground truth: h(i, x*_i) per system.
    pub fn truth(&self) -> Vec<f64> {
        (1..=self.k()).map(|i| self.h_true(i, self.x_star())).collect()
    }

    /// Systems within `eps` of the best optimal value.
    pub fn eps_optimal_set(&self, eps: f64) -> Vec<usize> {
        let truth = self.truth();
        let best = truth.iter().cloned().fold(f64::INFINITY, f64::min);
        truth
            .iter()
            .enumerate()
            .filter(|(_, &v)| v - best <= eps + 1e-9)
            .map(|(idx, _)| idx + 1)
            .collect()
    }

    /// Lipschitz constant of h over [0, 2] (sup of the absolute slope).
    fn lipschitz(&self, s: &DrugSystem) -> f64 {
        match self.objective {
            // |df/dx| = |2 a2 x + a1| peaks at the box ends: max(|a1|, |4 a2 + a1|) = 3 a2.
            ObjectiveMode::Same => s.omega.abs().max(1.0) * 3.0 * s.a2,
            // |c + omega (2 a2 x + a1)| at the ends: |c - 3 omega a2|, |c + omega a2|.
            ObjectiveMode::Different => {
                (s.c - 3.0 * s.omega * s.a2).abs().max((s.c + s.omega * s.a2).abs())
            }
        }
    }

    /// The per-system specs consumed by the orchestrator.
    pub fn system_specs(&self) -> Vec<SystemSpec> {
        let xs = self.x_star();
        self.systems
            .iter()
            .enumerate()
            .map(|(idx, s)| {
                let mu = 2.0 * s.a2;
                let sigma_g_sq = self.overrides.sigma_g_sq.unwrap_or(1.0 / 3.0);
                let d = self.overrides.d_bound.unwrap_or(2.0);
                // ||Cov(G(x*))||: Var(2 xi_2 x + xi_1) = (4 x^2 + 1)/12 at x*.
                let cov = (4.0 * xs * xs + 1.0) / 12.0;
                let grad_h = match self.objective {
                    ObjectiveMode::Same => 0.0, // grad f(x*) = 0
                    ObjectiveMode::Different => (s.c + s.omega * (2.0 * s.a2 * xs + s.a1)).abs(),
                };
                let sigma_tilde_sq = match self.objective {
                    ObjectiveMode::Same => self.overrides.sigma_tilde_sq,
                    ObjectiveMode::Different => {
                        Some(self.overrides.sigma_tilde_sq.unwrap_or(s.c * d / (mu * mu)))
                    }
                };
                SystemSpec {
                    id: idx + 1,
                    bounds: FeasibleBox::new(vec![0.0], vec![2.0]).expect("static box"),
                    constants: RegularityConstants {
                        mu,
                        nu: mu,
                        m: 0.0,
                        l: self.overrides.l.unwrap_or_else(|| self.lipschitz(s)),
                        d,
                        sigma_g: sigma_g_sq.sqrt(),
                        cov_g_norm: cov,
                        hess_norm: mu,
                        grad_h_norm: grad_h,
                    },
                    same_objective: matches!(self.objective, ObjectiveMode::Same),
                    sigma_tilde_sq,
                }
            })
            .collect()
    }

    fn noise(rng: &mut dyn RngCore) -> (f64, f64, f64) {
        (
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        )
    }

    fn f_sample(&self, i: usize, x: f64, xi: (f64, f64, f64)) -> f64 {
        let s = &self.systems[i - 1];
        (s.a2 + xi.2) * x * x + (s.a1 + xi.1) * x + (s.a0 + xi.0)
    }

    fn h_sample(&self, i: usize, x: f64, xi: (f64, f64, f64)) -> f64 {
        let s = &self.systems[i - 1];
        match self.objective {
            ObjectiveMode::Same => self.f_sample(i, x, xi),
            ObjectiveMode::Different => s.c * x + s.omega * self.f_sample(i, x, xi),
        }
    }

    /// One draw of (F, G, H) under shared noise; G is the exact derivative of
    /// the sampled F.
    pub fn sample_shared(&self, i: usize, x: f64, rng: &mut dyn RngCore) -> (f64, f64, f64) {
        let s = &self.systems[i - 1];
        let xi = Self::noise(rng);
        let f = self.f_sample(i, x, xi);
        let g = 2.0 * (s.a2 + xi.2) * x + (s.a1 + xi.1);
        let h = self.h_sample(i, x, xi);
        (f, g, h)
    }

    fn check_x(&self, i: usize, x: &[f64]) -> f64 {
        assert_eq!(x.len(), 1, "benchmark systems are 1-dimensional");
        let v = x[0];
        assert!((0.0..=2.0).contains(&v), "x = {v} outside [0, 2] for system {i}");
        v
    }
}

impl Oracle for DrugProblem {
    fn eval_h(&self, k: usize, x: &[f64], rng: &mut dyn RngCore) -> f64 {
        let v = self.check_x(k, x);
        self.h_sample(k, v, Self::noise(rng))
    }

    fn eval_f(&self, k: usize, x: &[f64], rng: &mut dyn RngCore) -> f64 {
        let v = self.check_x(k, x);
        self.f_sample(k, v, Self::noise(rng))
    }

    fn eval_g(&self, k: usize, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        let v = self.check_x(k, x);
        let s = &self.systems[k - 1];
        let xi2: f64 = rng.random_range(-0.5..0.5);
        let xi1: f64 = rng.random_range(-0.5..0.5);
        out[0] = 2.0 * (s.a2 + xi2) * v + (s.a1 + xi1);
    }

    fn joint_eval_h(&self, points: &[(usize, &[f64])], rng: &mut dyn RngCore, out: &mut [f64]) {
        assert_eq!(points.len(), out.len());
        let xi = Self::noise(rng);
        for (slot, &(k, x)) in out.iter_mut().zip(points) {
            let v = self.check_x(k, x);
            *slot = self.h_sample(k, v, xi);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamPurpose};

    #[test]
    fn noise_free_optimum() {
        let p = DrugProblem::new(20, ObjectiveMode::Same);
        for i in 1..=20 {
            assert!(
                (p.f_true(i, 1.5) - 0.11 * i as f64).abs() < 1e-12,
                "f({i}, x*) = {}",
                p.f_true(i, 1.5)
            );
            // derivative of the noise-free objective vanishes at x*
            let s = &p.systems[i - 1];
            assert!((2.0 * s.a2 * 1.5 + s.a1).abs() < 1e-12);
        }
    }

    #[test]
    fn truth_and_eps_optimal_sets() {
        let same = DrugProblem::new(20, ObjectiveMode::Same);
        assert_eq!(same.eps_optimal_set(0.1), vec![1]);
        assert_eq!(same.eps_optimal_set(0.12), vec![1, 2]);
        let diff = DrugProblem::new(20, ObjectiveMode::Different);
        assert!((diff.truth()[0] - 1.61).abs() < 1e-12);
        assert!((diff.truth()[19] - (1.5 + 2.2)).abs() < 1e-12);
        assert_eq!(diff.eps_optimal_set(0.1), vec![1]);
    }

    #[test]
    fn gradient_is_derivative_of_sampled_objective() {
        // Replaying the rng replays xi, so central differences of the sampled
        // quadratic must reproduce the sampled gradient exactly.
        let p = DrugProblem::new(5, ObjectiveMode::Different);
        let mut rng = stream(11, 0, 1, StreamPurpose::Auxiliary);
        let delta = 1e-4;
        for i in 1..=5 {
            for &x in &[0.1, 1.0, 1.9] {
                let (f_minus, _, _) = p.sample_shared(i, x - delta, &mut rng.clone());
                let (f_plus, _, _) = p.sample_shared(i, x + delta, &mut rng.clone());
                let (_, g, _) = p.sample_shared(i, x, &mut rng);
                let fd = (f_plus - f_minus) / (2.0 * delta);
                assert!((fd - g).abs() < 1e-7, "system {i} at x = {x}: fd {fd} vs g {g}");
            }
        }
    }

    #[test]
    fn gradient_unbiased_monte_carlo() {
        let p = DrugProblem::new(3, ObjectiveMode::Same);
        let mut rng = stream(12, 0, 2, StreamPurpose::Auxiliary);
        let x = [0.7];
        let n = 1_000_000u32;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut g = [0.0];
        for _ in 0..n {
            p.eval_g(2, &x, &mut rng, &mut g);
            sum += g[0];
            sum_sq += g[0] * g[0];
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        let s = &p.systems[1];
        let want = 2.0 * s.a2 * x[0] + s.a1;
        assert!((mean - want).abs() < 3.0 * se, "mean {mean} vs {want} (se {se})");
    }

    #[test]
    fn joint_draws_match_marginal_means() {
        let p = DrugProblem::new(4, ObjectiveMode::Different);
        let mut rng = stream(13, 0, 3, StreamPurpose::Auxiliary);
        let x = [1.2];
        let points: Vec<(usize, &[f64])> = (1..=4).map(|i| (i, &x[..])).collect();
        let n = 200_000;
        let mut sums = [0.0f64; 4];
        let mut out = [0.0f64; 4];
        for _ in 0..n {
            p.joint_eval_h(&points, &mut rng, &mut out);
            for (s, v) in sums.iter_mut().zip(&out) {
                *s += v;
            }
        }
        for i in 1..=4 {
            let mean = sums[i - 1] / n as f64;
            let want = p.h_true(i, 1.2);
            assert!((mean - want).abs() < 0.01, "system {i}: {mean} vs {want}");
        }
    }

    #[test]
    fn variance_of_gradient_at_optimum() {
        // Var(G at x* = 1.5) = (4 * 2.25 + 1)/12 = 5/6.
        let p = DrugProblem::new(1, ObjectiveMode::Same);
        let mut rng = stream(14, 0, 4, StreamPurpose::Auxiliary);
        let x = [1.5];
        let n = 1_000_000u32;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut g = [0.0];
        for _ in 0..n {
            p.eval_g(1, &x, &mut rng, &mut g);
            sum += g[0];
            sum_sq += g[0] * g[0];
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((var - 5.0 / 6.0).abs() < 0.01, "var = {var}");
    }

    #[test]
    fn constants_follow_the_published_choices() {
        let p = DrugProblem::new(20, ObjectiveMode::Different);
        let specs = p.system_specs();
        for (idx, spec) in specs.iter().enumerate() {
            let a2 = 1.0 + 0.1 * (idx + 1) as f64;
            let c = &spec.constants;
            assert!((c.mu - 2.0 * a2).abs() < 1e-12);
            assert_eq!(c.nu, c.mu);
            assert_eq!(c.m, 0.0);
            assert_eq!(c.d, 2.0);
            assert!((c.sigma_g * c.sigma_g - 1.0 / 3.0).abs() < 1e-12);
            assert!((c.l - (1.0 - 3.0 * a2).abs().max((1.0 + a2).abs())).abs() < 1e-12);
            assert!((c.cov_g_norm - 5.0 / 6.0).abs() < 1e-12);
            assert!((c.grad_h_norm - 1.0).abs() < 1e-12);
            let st = spec.sigma_tilde_sq.unwrap();
            assert!((st - 2.0 / (c.mu * c.mu)).abs() < 1e-12);
            spec.validate().unwrap();
        }
        let same = DrugProblem::new(3, ObjectiveMode::Same);
        for spec in same.system_specs() {
            let a2 = spec.constants.mu / 2.0;
            assert!((spec.constants.l - 3.0 * a2).abs() < 1e-12);
            assert_eq!(spec.constants.grad_h_norm, 0.0);
            assert!(spec.sigma_tilde_sq.is_none());
            spec.validate().unwrap();
        }
    }
}
