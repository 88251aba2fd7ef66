//! Fully sequential pairwise pruning.
//!
//! Each stage compares the surviving systems' upper-level metrics with a
//! shrinking triangular continuation region per pair. A pair's boundary
//! tests fire when the running mean difference crosses +-q_t by more than the
//! remaining radius; a system whose pairwise constraints are all settled
//! retires from the active set and stops drawing samples.

use rand::RngCore;
use thiserror::Error;

use crate::problem::Oracle;

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("pruning needs at least 2 initial samples per system, got r0 = {0}")]
    BadInitialSamples(u64),
    #[error("significance alpha' = {0} must lie in (0, 1)")]
    BadSignificance(f64),
    #[error("tolerances must satisfy 0 < eps_t < eps'_t, got eps = {eps}, eps' = {eps_prime}")]
    BadTolerances { eps: f64, eps_prime: f64 },
    #[error("pairwise significance scaling requires m >= 2, got {0}")]
    TooFewSystems(usize),
    #[error("oracle returned a nonfinite sample for system {system} at round {round}")]
    NonFiniteSample { system: usize, round: u64 },
    #[error("inputs misaligned: {0} systems but {1} iterates")]
    Misaligned(usize, usize),
}

/// eta = 1/2 ((2 alpha' / (m (m-1)))^(-2/(r0-1)) - 1): the continuation-region
/// scale delivering a per-stage union bound of alpha' over all m(m-1)/2 pairs.
pub fn eta_of(alpha_prune: f64, m: usize, r0: u64) -> Result<f64, PruneError> {
    if m < 2 {
        return Err(PruneError::TooFewSystems(m));
    }
    if r0 < 2 {
        return Err(PruneError::BadInitialSamples(r0));
    }
    if !alpha_prune.is_finite() || alpha_prune <= 0.0 || alpha_prune >= 1.0 {
        return Err(PruneError::BadSignificance(alpha_prune));
    }
    let base = 2.0 * alpha_prune / (m as f64 * (m as f64 - 1.0));
    let eta = 0.5 * (base.powf(-2.0 / (r0 as f64 - 1.0)) - 1.0);
    Ok(eta.max(0.0))
}

/// Per-pair continuation-region parameters.
#[derive(Clone, Copy, Debug)]
pub struct CiRadiusParams {
    pub r0: u64,
    pub eta: f64,
    pub tau: f64,
    pub s_sq: f64,
}

/// Triangular region radius R(r) = max{0, (r0-1) eta S^2 / tau - tau r / 2},
/// on the sum scale (divide by r for the mean scale). Strictly decreasing in
/// r until it hits zero at r* = 2 (r0-1) eta S^2 / tau^2.
pub fn ci_radius(r: u64, p: &CiRadiusParams) -> f64 {
    ((p.r0 as f64 - 1.0) * p.eta * p.s_sq / p.tau - p.tau * r as f64 / 2.0).max(0.0)
}

/// One eviction in a prune session's transcript.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Eviction {
    pub system: usize,
    /// Sample count at which the eviction fired.
    pub round: u64,
}

/// Result of one prune session.
#[derive(Clone, Debug)]
pub struct PruneOutcome {
    /// Surviving system ids, in input order. Never empty.
    pub remaining: Vec<usize>,
    /// Total H draws consumed: r0 * m + |ON| per subsequent round.
    pub func_evals: u64,
    /// Final sample count per system that stayed active to the end.
    pub final_r: u64,
    pub evictions: Vec<Eviction>,
}

struct PairState {
    i: usize, // local indices, i < k
    k: usize,
    params: CiRadiusParams,
    stop1: bool,
    stop2: bool,
}

impl PairState {
    fn done(&self) -> bool {
        self.stop1 && self.stop2
    }
}

/// Runs one fully sequential prune session over the systems in `rem`
/// (system ids, ascending) at their current iterates `xs` (aligned with
/// `rem`). `q` tests use the stage tolerances: q = (eps + eps')/2,
/// tau = (eps' - eps)/2. With `use_crn` the per-round draws share randomness
/// through the oracle's joint evaluation.
#[allow(clippy::too_many_arguments)]
pub fn prune(
    rem: &[usize],
    xs: &[&[f64]],
    eps_t: f64,
    eps_prime_t: f64,
    alpha_prune: f64,
    r0: u64,
    oracle: &dyn Oracle,
    rng: &mut dyn RngCore,
    use_crn: bool,
) -> Result<PruneOutcome, PruneError> {
    let m = rem.len();
    if xs.len() != m {
        return Err(PruneError::Misaligned(m, xs.len()));
    }
    if m < 2 {
        return Ok(PruneOutcome {
            remaining: rem.to_vec(),
            func_evals: 0,
            final_r: 0,
            evictions: Vec::new(),
        });
    }
    if !(eps_t > 0.0 && eps_prime_t > eps_t && eps_prime_t.is_finite()) {
        return Err(PruneError::BadTolerances { eps: eps_t, eps_prime: eps_prime_t });
    }
    let q = 0.5 * (eps_t + eps_prime_t);
    let tau = 0.5 * (eps_prime_t - eps_t);
    let eta = eta_of(alpha_prune, m, r0)?;

    // Warmup: r0 draws per system; the samples seed the one-time pair variances.
    let mut warmup: Vec<Vec<f64>> = vec![Vec::with_capacity(r0 as usize); m];
    let mut sums = vec![0.0f64; m];
    let mut func_evals = 0u64;
    let mut draws = vec![0.0f64; m];
    let all: Vec<usize> = (0..m).collect();
    for round in 1..=r0 {
        draw_round(oracle, rng, use_crn, rem, xs, &all, &mut draws)?;
        for (local, &v) in all.iter().zip(&draws) {
            if !v.is_finite() {
                return Err(PruneError::NonFiniteSample { system: rem[*local], round });
            }
            warmup[*local].push(v);
            sums[*local] += v;
        }
        func_evals += m as u64;
    }
    let mut r = r0;

    // One-time paired variance estimates S^2_ik from the warmup differences.
    let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for k in (i + 1)..m {
            let diffs: Vec<f64> = warmup[i].iter().zip(&warmup[k]).map(|(a, b)| a - b).collect();
            let mean = diffs.iter().sum::<f64>() / r0 as f64;
            let s_sq =
                diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (r0 as f64 - 1.0);
            pairs.push(PairState {
                i,
                k,
                params: CiRadiusParams { r0, eta, tau, s_sq },
                stop1: false,
                stop2: false,
            });
        }
    }

    let mut in_rem = vec![true; m]; // survivor set
    let mut on = vec![true; m]; // active (still sampling) set
    let mut evictions = Vec::new();

    loop {
        // Boundary tests, in lexicographic pair order; evictions take effect
        // immediately, so pairs with an evicted member are skipped.
        for p in pairs.iter_mut() {
            if p.done() || !in_rem[p.i] || !in_rem[p.k] {
                continue;
            }
            let diff = sums[p.i] / r as f64 - sums[p.k] / r as f64;
            let z_over_r = ci_radius(r, &p.params) / r as f64;
            if !p.stop1 {
                if diff - z_over_r >= q {
                    // System i is evidently inferior to k.
                    in_rem[p.i] = false;
                    on[p.i] = false;
                    evictions.push(Eviction { system: rem[p.i], round: r });
                    p.stop1 = true;
                    p.stop2 = true;
                    continue;
                } else if diff + z_over_r <= q {
                    p.stop1 = true;
                }
            }
            if !p.stop2 {
                if diff + z_over_r <= -q {
                    // System k is evidently inferior to i.
                    in_rem[p.k] = false;
                    on[p.k] = false;
                    evictions.push(Eviction { system: rem[p.k], round: r });
                    p.stop2 = true;
                    p.stop1 = true;
                } else if diff - z_over_r >= -q {
                    p.stop2 = true;
                }
            }
        }
        // Force-set flags of pairs touching evicted systems (bookkeeping only;
        // such pairs are never revisited).
        for p in pairs.iter_mut() {
            if !in_rem[p.i] || !in_rem[p.k] {
                p.stop1 = true;
                p.stop2 = true;
            }
        }
        // Retirement sweep, ascending id: a survivor leaves ON once every pair
        // against the systems still in ON is doubly stopped.
        for local in 0..m {
            if !on[local] {
                continue;
            }
            let settled = pairs.iter().all(|p| {
                let other = if p.i == local {
                    p.k
                } else if p.k == local {
                    p.i
                } else {
                    return true;
                };
                !on[other] || p.done()
            });
            if settled {
                on[local] = false;
            }
        }
        if !on.iter().any(|&a| a) {
            break;
        }
        // Next round: one new draw per active system.
        let active: Vec<usize> = (0..m).filter(|&l| on[l]).collect();
        r += 1;
        draw_round(oracle, rng, use_crn, rem, xs, &active, &mut draws)?;
        for (slot, &local) in active.iter().enumerate() {
            let v = draws[slot];
            if !v.is_finite() {
                return Err(PruneError::NonFiniteSample { system: rem[local], round: r });
            }
            sums[local] += v;
        }
        func_evals += active.len() as u64;
    }

    let remaining: Vec<usize> =
        (0..m).filter(|&l| in_rem[l]).map(|l| rem[l]).collect();
    debug_assert!(!remaining.is_empty());
    Ok(PruneOutcome { remaining, func_evals, final_r: r, evictions })
}

/// Draws one H sample for each listed local index, jointly under CRN,
/// otherwise independently in ascending id order. Results land in the first
/// `active.len()` slots of `out`.
fn draw_round(
    oracle: &dyn Oracle,
    rng: &mut dyn RngCore,
    use_crn: bool,
    rem: &[usize],
    xs: &[&[f64]],
    active: &[usize],
    out: &mut [f64],
) -> Result<(), PruneError> {
    if use_crn {
        let points: Vec<(usize, &[f64])> = active.iter().map(|&l| (rem[l], xs[l])).collect();
        oracle.joint_eval_h(&points, rng, &mut out[..active.len()]);
    } else {
        for (slot, &l) in active.iter().enumerate() {
            out[slot] = oracle.eval_h(rem[l], xs[l], rng);
        }
    }
    Ok(())
}
