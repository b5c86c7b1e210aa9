//! Cheap stand-in for the federated-learning process itself: instead of
//! training a real network each round, an [`EmulatedRun`] tracks a global
//! performance rate e_n that decays geometrically from 1 toward the target
//! epsilon0 as weighted aggregation progress accumulates. Local iteration
//! demand and the global-round budget are affine in the dataset variance.

use crate::num::Real;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Sampling ranges and safety knobs of the emulated FL process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorParams {
    /// Inclusive range of per-worker local iteration demand.
    pub local_iters: (u32, u32),
    /// Inclusive range of the global round budget.
    pub global_iters: (u32, u32),
    /// Inclusive range of the initial local accuracy.
    pub init_acc: (f64, f64),
    /// Multiplicative e-curve noise amplitude in [0, 1); 0 is deterministic.
    pub jitter: f64,
    /// Hard episode cap so pathological policies cannot hang.
    pub max_rounds_safeguard: u32,
}

impl Default for EmulatorParams {
    fn default() -> Self {
        EmulatorParams {
            local_iters: (2, 11),
            global_iters: (10, 22),
            init_acc: (0.15, 0.18),
            jitter: 0.0,
            max_rounds_safeguard: 200,
        }
    }
}

/// Relative margin keeping "converged" and "e ≤ epsilon0" exactly equivalent
/// under jitter and limited precision (wide enough for f32).
const EDGE: f64 = 1e-6;

/// Round half away from zero, the convention for all affine integer maps.
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Per-worker local iteration demand: affine map of the dataset variance
/// from `[v_min, v_max]` onto the configured integer range, rounded.
/// A collapsed variance range maps to the midpoint.
pub fn sample_local_iters<R: Real>(
    variance: R,
    v_min: R,
    v_max: R,
    params: &EmulatorParams,
) -> u32 {
    let (lo, hi) = params.local_iters;
    let frac = if v_max > v_min {
        ((variance - v_min) / (v_max - v_min)).f64()
    } else {
        0.5
    };
    let x = lo as f64 + frac * (hi - lo) as f64;
    (round_half_up(x).max(lo as i64) as u32).min(hi)
}

/// Global round budget: reversed affine map of the mean local demand from
/// the local range onto `[g_hi, g_lo]` (heavier local work means fewer
/// global rounds), rounded and clamped.
pub fn sample_global_budget(mean_local_iters: f64, params: &EmulatorParams) -> u32 {
    let (ilo, ihi) = params.local_iters;
    let (glo, ghi) = params.global_iters;
    let frac = if ihi > ilo {
        (mean_local_iters - ilo as f64) / (ihi - ilo) as f64
    } else {
        0.5
    };
    let x = ghi as f64 + frac * (glo as f64 - ghi as f64);
    (round_half_up(x).max(glo as i64) as u32).min(ghi)
}

/// Normalized distance to the optimum: (F − F*)/(F_init − F*).
pub fn performance_rate<R: Real>(f_current: R, f_init: R, f_star: R) -> R {
    (f_current - f_star) / (f_init - f_star)
}

/// Local performance rate after `iters_done` of `iters_needed` iterations,
/// interpolating from 1 at the start to `eta` when the demand is met.
pub fn local_rate<R: Real>(eta: R, iters_done: u32, iters_needed: u32) -> R {
    if iters_needed == 0 {
        return eta;
    }
    let frac = R::of(iters_done as f64 / iters_needed as f64);
    R::one() - (R::one() - eta) * frac
}

/// One emulated FL execution: a sampled round budget and the global
/// performance rate it drives toward `epsilon0`.
#[derive(Debug, Clone)]
pub struct EmulatedRun<R: Real> {
    g_total: u32,
    epsilon0: R,
    jitter: f64,
    progress: R,
    e: R,
}

impl<R: Real> EmulatedRun<R> {
    pub fn new(g_total: u32, epsilon0: R, jitter: f64) -> Self {
        assert!(g_total > 0, "round budget must be positive");
        assert!(
            epsilon0 > R::zero() && epsilon0 < R::one(),
            "epsilon0 must lie in (0, 1)"
        );
        EmulatedRun {
            g_total,
            epsilon0,
            jitter,
            progress: R::zero(),
            e: R::one(),
        }
    }

    pub fn g_total(&self) -> u32 {
        self.g_total
    }

    /// Current global performance rate e_n.
    pub fn e(&self) -> R {
        self.e
    }

    pub fn progress(&self) -> R {
        self.progress
    }

    pub fn converged(&self) -> bool {
        self.progress >= R::of(self.g_total as f64)
    }

    /// Advance one round by the variance-weighted fraction of valid updates.
    /// Returns the new rate and the convergence flag; `e` never increases and
    /// crosses `epsilon0` exactly when the accumulated progress reaches the
    /// budget.
    pub fn advance_round(&mut self, fraction: R, rng: &mut ChaCha12Rng) -> (R, bool) {
        debug_assert!(fraction >= R::zero() && fraction <= R::one());
        if fraction <= R::zero() {
            // no valid updates: the global model is unchanged
            return (self.e, self.converged());
        }
        self.progress = self.progress + fraction;
        let g = R::of(self.g_total as f64);
        let mut e_next = (self.epsilon0.ln() * self.progress / g).exp();
        if self.jitter > 0.0 {
            let u: f64 = rng.gen_range(-self.jitter..=self.jitter);
            e_next = e_next * R::of(1.0 + u);
        }
        if e_next > self.e {
            e_next = self.e;
        }
        let edge = R::of(EDGE);
        if self.converged() {
            e_next = e_next.clamp_to(self.epsilon0 * (R::one() - edge), self.epsilon0);
        } else {
            let floor = self.epsilon0 * (R::one() + edge);
            if e_next < floor {
                e_next = floor;
            }
        }
        self.e = e_next;
        (self.e, self.converged())
    }
}
