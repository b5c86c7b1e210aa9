//! The scheduling MDP: a population of heterogeneous wireless workers, an
//! emulated FL run, continuous per-worker (frequency, power) actions with a
//! dead-zone exclusion, a penalty-shaped energy reward, and both
//! synchronization protocols for handling deadline stragglers.

use crate::config::{ConfigError, EnvConfig, EnvKind, LowEndFraction};
use crate::emulator::{
    round_half_up, sample_global_budget, sample_local_iters, EmulatedRun,
};
use crate::energy::{
    channel_gain_linear, comp_energy, comp_time, data_rate, deadline_ok, tx_energy, tx_time,
    Allocation, FlModelSpec, WorkerCaps,
};
use crate::num::Real;
use crate::units::dbm_to_watt;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Who drops a late update: the worker itself (never transmitting it) or the
/// coordinator (after the channel was already used).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyncMode {
    #[default]
    #[serde(rename = "worker")]
    WorkerSide,
    #[serde(rename = "coordinator")]
    CoordinatorSide,
}

impl std::fmt::Display for SyncMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SyncMode::WorkerSide => write!(f, "worker"),
            SyncMode::CoordinatorSide => write!(f, "coordinator"),
        }
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode finished; call reset before stepping")]
    EpisodeFinished,
    #[error("action vector has length {got}, expected {expected}")]
    ActionLength { expected: usize, got: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Observables exposed to the agent: everything is the *previous* round's
/// outcome plus the (episode-constant) capability features.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState<R: Real> {
    /// Local iterations each worker actually ran last round (0 if excluded).
    pub local_iters: Vec<R>,
    /// Energy each worker wasted last round, in J.
    pub wasted: Vec<R>,
    /// Global performance rate after last round's aggregation (1 initially).
    pub global_rate: R,
    /// Per-worker frequency cap, Hz.
    pub f_max: Vec<R>,
    /// Per-worker power cap, W.
    pub p_max: Vec<R>,
    /// Per-worker bandwidth, Hz.
    pub bandwidth: Vec<R>,
    /// Per-worker dataset size.
    pub samples: Vec<R>,
}

impl<R: Real> EnvState<R> {
    pub fn k(&self) -> usize {
        self.local_iters.len()
    }

    /// Flatten to the canonical vector layout
    /// `[I ×K, E^W ×K, e, f_max ×K, p_max ×K, b ×K, s ×K]` (length 6K+1).
    pub fn flatten(&self) -> Vec<R> {
        let mut out = Vec::with_capacity(6 * self.k() + 1);
        out.extend_from_slice(&self.local_iters);
        out.extend_from_slice(&self.wasted);
        out.push(self.global_rate);
        out.extend_from_slice(&self.f_max);
        out.extend_from_slice(&self.p_max);
        out.extend_from_slice(&self.bandwidth);
        out.extend_from_slice(&self.samples);
        out
    }
}

/// Per-feature normalization caps, fixed by the config (not by the realized
/// population) so the scale is stable across episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormCaps {
    pub local_iters: f64,
    pub wasted_j: f64,
    pub f_hz: f64,
    pub p_w: f64,
    pub b_hz: f64,
    pub samples: f64,
}

impl NormCaps {
    pub fn from_config(cfg: &EnvConfig) -> Self {
        let f_cap = cfg.low.f_max_hz.hi.max(cfg.high.f_max_hz.hi);
        let p_cap = cfg.low.p_max_w_hi().max(cfg.high.p_max_w_hi());
        let c_min = cfg.low.flops_per_cycle.min(cfg.high.flops_per_cycle);
        let i_hi = cfg.emulator.local_iters.1 as f64;
        // worst-case computation energy a single round can waste
        let wasted_cap =
            cfg.switched_cap * i_hi * cfg.alpha_flops * cfg.samples.hi * f_cap * f_cap / c_min;
        NormCaps {
            local_iters: i_hi,
            wasted_j: wasted_cap,
            f_hz: f_cap,
            p_w: p_cap,
            b_hz: cfg.bandwidth_hz.hi,
            samples: cfg.samples.hi,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.local_iters,
            self.wasted_j,
            self.f_hz,
            self.p_w,
            self.b_hz,
            self.samples,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        NormCaps {
            local_iters: a[0],
            wasted_j: a[1],
            f_hz: a[2],
            p_w: a[3],
            b_hz: a[4],
            samples: a[5],
        }
    }
}

/// Divide every feature by its cap and clamp into [0, 1]; the rate feature is
/// already a fraction.
pub fn normalize_state<R: Real>(state: &EnvState<R>, caps: &NormCaps) -> Vec<R> {
    let k = state.k();
    let mut out = Vec::with_capacity(6 * k + 1);
    let unit = |x: R, cap: f64| (x / R::of(cap)).clamp_to(R::zero(), R::one());
    for &v in &state.local_iters {
        out.push(unit(v, caps.local_iters));
    }
    for &v in &state.wasted {
        out.push(unit(v, caps.wasted_j));
    }
    out.push(state.global_rate.clamp_to(R::zero(), R::one()));
    for &v in &state.f_max {
        out.push(unit(v, caps.f_hz));
    }
    for &v in &state.p_max {
        out.push(unit(v, caps.p_w));
    }
    for &v in &state.bandwidth {
        out.push(unit(v, caps.b_hz));
    }
    for &v in &state.samples {
        out.push(unit(v, caps.samples));
    }
    out
}

/// What one worker did in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerStatus {
    /// Zero frequency or zero power: not selected this round.
    Excluded,
    /// Trained and delivered its update before the deadline.
    OnTime,
    /// Trained but would miss (or missed) the deadline; update discarded.
    Late,
}

/// Channel bookkeeping for one round.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelUsage<R: Real> {
    pub accesses: u32,
    pub occupation_s: R,
    pub unnecessary_accesses: u32,
    pub unnecessary_s: R,
}

impl<R: Real> ChannelUsage<R> {
    fn zero() -> Self {
        ChannelUsage {
            accesses: 0,
            occupation_s: R::zero(),
            unnecessary_accesses: 0,
            unnecessary_s: R::zero(),
        }
    }
}

/// Everything one `step` produced.
#[derive(Debug, Clone)]
pub struct StepOutcome<R: Real> {
    pub reward: R,
    pub next_state: EnvState<R>,
    pub done: bool,
    /// Booked computation energy per worker (on-time deliveries only).
    pub comp: Vec<R>,
    /// Booked transmission energy per worker (on-time deliveries only).
    pub tx: Vec<R>,
    /// Wasted energy per worker (spent on discarded updates).
    pub wasted: Vec<R>,
    pub statuses: Vec<WorkerStatus>,
    pub allocations: Vec<Allocation<R>>,
    /// Deadline violations this round.
    pub p1: u32,
    /// All-idle violation: no worker was assigned both a frequency and a
    /// transmit power, so the round cannot produce a single update.
    pub p2: bool,
    /// True when `done` was forced by the round safeguard rather than by
    /// convergence. Value bootstraps must not treat such a cut-off as a real
    /// terminal state: the process would have kept accruing cost.
    pub truncated: bool,
    pub channel: ChannelUsage<R>,
    /// Wall-clock duration of the round in seconds.
    pub round_time: R,
    /// Variance-weighted share of valid updates aggregated this round.
    pub fraction: R,
}

/// Map one raw policy output in [−1, 1] onto [0, cap], with values below the
/// dead-zone collapsing to exactly zero. Out-of-range inputs are clamped.
pub fn decode_entry<R: Real>(raw: R, cap: R, deadzone_frac: R) -> R {
    let r = raw.clamp_to(-R::one(), R::one());
    let half = R::of(0.5);
    let value = (r + R::one()) * half * cap;
    if value < deadzone_frac * cap {
        R::zero()
    } else {
        value
    }
}

/// Decode the flat `[f ×K, p ×K]` action vector into per-worker allocations.
pub fn decode_action<R: Real>(
    raw: &[R],
    caps: &[WorkerCaps<R>],
    deadzone_frac: R,
) -> Vec<Allocation<R>> {
    let k = caps.len();
    debug_assert_eq!(raw.len(), 2 * k);
    (0..k)
        .map(|w| Allocation {
            f: decode_entry(raw[w], caps[w].f_max, deadzone_frac),
            p: decode_entry(raw[k + w], caps[w].p_max, deadzone_frac),
        })
        .collect()
}

/// Stable per-episode seed derivation (splitmix64 over master and index).
pub fn episode_seed(master: u64, episode: u64) -> u64 {
    let mut z = master ^ episode.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Population<R: Real> {
    caps: Vec<WorkerCaps<R>>,
    iters: Vec<u32>,
    init_acc: Vec<R>,
    g_total: u32,
}

impl<R: Real> Clone for Population<R> {
    fn clone(&self) -> Self {
        Population {
            caps: self.caps.clone(),
            iters: self.iters.clone(),
            init_acc: self.init_acc.clone(),
            g_total: self.g_total,
        }
    }
}

/// The scheduling environment.
pub struct Env<R: Real> {
    cfg: EnvConfig,
    k: usize,
    mu1: R,
    mu2: R,
    spec: FlModelSpec<R>,
    norm: NormCaps,
    frozen: Option<Population<R>>,
    caps: Vec<WorkerCaps<R>>,
    iters: Vec<u32>,
    init_acc: Vec<R>,
    run: EmulatedRun<R>,
    state: EnvState<R>,
    rng: ChaCha12Rng,
    round: u32,
    done: bool,
}

impl<R: Real> Env<R> {
    /// Build an environment. For a static config the worker population is
    /// drawn here, from `master_seed`, and reused by every episode; reset is
    /// still required before stepping.
    pub fn new(cfg: EnvConfig, master_seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        let k = cfg.workers;
        let (mu1, mu2) = cfg.penalty_weights();
        let spec = FlModelSpec {
            alpha: R::of(cfg.alpha_flops),
            m_bits: R::of(cfg.size_bits),
            eta: R::of(cfg.eta),
            epsilon0: R::of(cfg.epsilon0),
            f_star: R::of(cfg.f_star),
            deadline_h: R::of(cfg.deadline_s),
        };
        let norm = NormCaps::from_config(&cfg);
        let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
        let frozen = match cfg.kind {
            EnvKind::Static => Some(draw_population(&cfg, &mut rng)),
            EnvKind::Dynamic => None,
        };
        let placeholder = EmulatedRun::new(1, spec.epsilon0, 0.0);
        Ok(Env {
            k,
            mu1: R::of(mu1),
            mu2: R::of(mu2),
            spec,
            norm,
            frozen,
            caps: Vec::new(),
            iters: Vec::new(),
            init_acc: Vec::new(),
            run: placeholder,
            state: EnvState {
                local_iters: vec![R::zero(); k],
                wasted: vec![R::zero(); k],
                global_rate: R::one(),
                f_max: vec![R::zero(); k],
                p_max: vec![R::zero(); k],
                bandwidth: vec![R::zero(); k],
                samples: vec![R::zero(); k],
            },
            rng,
            round: 0,
            done: true,
            cfg,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn state_dim(&self) -> usize {
        6 * self.k + 1
    }

    pub fn action_dim(&self) -> usize {
        2 * self.k
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn mode(&self) -> SyncMode {
        self.cfg.sync
    }

    pub fn norm_caps(&self) -> &NormCaps {
        &self.norm
    }

    pub fn state(&self) -> &EnvState<R> {
        &self.state
    }

    pub fn workers(&self) -> &[WorkerCaps<R>] {
        &self.caps
    }

    pub fn local_iter_demand(&self) -> &[u32] {
        &self.iters
    }

    pub fn round_budget(&self) -> u32 {
        self.run.g_total()
    }

    pub fn rounds_elapsed(&self) -> u32 {
        self.round
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Current state normalized for the learner.
    pub fn normalized_state(&self) -> Vec<R> {
        normalize_state(&self.state, &self.norm)
    }

    pub fn normalize(&self, state: &EnvState<R>) -> Vec<R> {
        normalize_state(state, &self.norm)
    }

    /// Start a new episode. Static environments reuse the run-level
    /// population; dynamic ones resample everything from `seed`.
    pub fn reset(&mut self, seed: u64) -> EnvState<R> {
        self.rng = ChaCha12Rng::seed_from_u64(seed);
        let pop = match &self.frozen {
            Some(p) => p.clone(),
            None => draw_population(&self.cfg, &mut self.rng),
        };
        self.run = EmulatedRun::new(pop.g_total, self.spec.epsilon0, self.cfg.emulator.jitter);
        self.state = EnvState {
            local_iters: vec![R::zero(); self.k],
            wasted: vec![R::zero(); self.k],
            global_rate: R::one(),
            f_max: pop.caps.iter().map(|c| c.f_max).collect(),
            p_max: pop.caps.iter().map(|c| c.p_max).collect(),
            bandwidth: pop.caps.iter().map(|c| c.bandwidth).collect(),
            samples: pop.caps.iter().map(|c| R::of(c.n_samples as f64)).collect(),
        };
        self.caps = pop.caps;
        self.iters = pop.iters;
        self.init_acc = pop.init_acc;
        self.round = 0;
        self.done = false;
        self.state.clone()
    }

    /// Run one round under the configured synchronization mode.
    pub fn step(&mut self, raw_action: &[R]) -> Result<StepOutcome<R>, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        if raw_action.len() != 2 * self.k {
            return Err(EnvError::ActionLength {
                expected: 2 * self.k,
                got: raw_action.len(),
            });
        }
        if self.cfg.kind == EnvKind::Dynamic {
            for caps in &mut self.caps {
                caps.distance_km = R::of(self.cfg.distance_km.sample(&mut self.rng));
            }
        }
        let deadzone = R::of(self.cfg.deadzone_frac);
        let allocations = decode_action(raw_action, &self.caps, deadzone);

        let k = self.k;
        let mut comp = vec![R::zero(); k];
        let mut tx = vec![R::zero(); k];
        let mut wasted = vec![R::zero(); k];
        let mut statuses = vec![WorkerStatus::Excluded; k];
        let mut channel = ChannelUsage::zero();
        let mut p1 = 0u32;
        let mut valid_variance = R::zero();
        let mut total_variance = R::zero();
        let mut valid_count = 0u32;
        let mut active_count = 0u32;
        let mut any_late = false;
        let mut slowest = R::zero();

        for w in 0..k {
            let caps = &self.caps[w];
            total_variance = total_variance + caps.data_variance;
            let alloc = allocations[w];
            if alloc.f <= R::zero() || alloc.p <= R::zero() {
                continue; // excluded: no energy of the missing kind, no deadline check
            }
            active_count += 1;
            let tau = comp_time(caps, &self.spec, self.iters[w], alloc.f)
                .expect("active worker has positive frequency");
            let gain = channel_gain_linear(caps.distance_km)
                .expect("distances are validated positive");
            let rate = data_rate(caps.bandwidth, gain, alloc.p, R::of(self.cfg.n0_w_hz));
            let t = tx_time(&self.spec, alloc.p, rate)
                .expect("active worker has positive rate");
            let e_c = comp_energy(caps, &self.spec, self.iters[w], alloc.f);
            let e_t = tx_energy(&self.spec, alloc.p, rate)
                .expect("active worker has positive rate");
            if deadline_ok(tau, t, self.spec.deadline_h) {
                statuses[w] = WorkerStatus::OnTime;
                comp[w] = e_c;
                tx[w] = e_t;
                channel.accesses += 1;
                channel.occupation_s = channel.occupation_s + t;
                valid_variance = valid_variance + caps.data_variance;
                valid_count += 1;
                let finish = tau + t;
                if finish > slowest {
                    slowest = finish;
                }
            } else {
                statuses[w] = WorkerStatus::Late;
                p1 += 1;
                any_late = true;
                match self.cfg.sync {
                    SyncMode::WorkerSide => {
                        // the worker notices it would be late and never transmits
                        wasted[w] = e_c;
                    }
                    SyncMode::CoordinatorSide => {
                        // the update travels anyway and is dropped on arrival
                        wasted[w] = e_c + e_t;
                        channel.accesses += 1;
                        channel.occupation_s = channel.occupation_s + t;
                        channel.unnecessary_accesses += 1;
                        channel.unnecessary_s = channel.unnecessary_s + t;
                    }
                }
            }
        }

        let p2 = active_count == 0;
        let fraction = if total_variance > R::zero() {
            valid_variance / total_variance
        } else if k > 0 {
            // degenerate all-zero-variance dataset: weight updates uniformly
            R::of(valid_count as f64 / k as f64)
        } else {
            R::zero()
        };
        let (e_next, converged) = self.run.advance_round(fraction, &mut self.rng);

        let energy_sum = comp.iter().copied().sum::<R>()
            + tx.iter().copied().sum::<R>()
            + wasted.iter().copied().sum::<R>();
        let penalty = self.mu1 * R::of(p1 as f64) + if p2 { self.mu2 } else { R::zero() };
        let reward = -(energy_sum + penalty);

        let round_time = if active_count == 0 {
            R::zero()
        } else if any_late {
            self.spec.deadline_h
        } else {
            slowest
        };

        self.round += 1;
        self.done = converged || self.round >= self.cfg.emulator.max_rounds_safeguard;

        let next_state = EnvState {
            local_iters: statuses
                .iter()
                .enumerate()
                .map(|(w, s)| match s {
                    WorkerStatus::Excluded => R::zero(),
                    _ => R::of(self.iters[w] as f64),
                })
                .collect(),
            wasted: wasted.clone(),
            global_rate: e_next,
            f_max: self.state.f_max.clone(),
            p_max: self.state.p_max.clone(),
            bandwidth: self.state.bandwidth.clone(),
            samples: self.state.samples.clone(),
        };
        self.state = next_state.clone();

        Ok(StepOutcome {
            reward,
            next_state,
            done: self.done,
            truncated: self.done && !converged,
            comp,
            tx,
            wasted,
            statuses,
            allocations,
            p1,
            p2,
            channel,
            round_time,
            fraction,
        })
    }
}

/// Draw a full worker population plus its emulated-run parameters. The draw
/// order is fixed: low-end share first, then per worker (f, p, b, d, s, v,
/// init_acc), then the derived iteration demands and round budget.
fn draw_population<R: Real>(cfg: &EnvConfig, rng: &mut ChaCha12Rng) -> Population<R> {
    let k = cfg.workers;
    let low_count = match cfg.low_end_fraction {
        LowEndFraction::Fixed(frac) => round_half_up(frac * k as f64).clamp(0, k as i64) as usize,
        LowEndFraction::TruncNormal {
            mean_pct,
            sd_pct,
            min_pct,
            max_pct,
        } => {
            let dist = Normal::new(mean_pct, sd_pct).expect("validated sd > 0");
            let pct = loop {
                let x = dist.sample(rng);
                if x >= min_pct && x <= max_pct {
                    break x;
                }
            };
            round_half_up(pct / 100.0 * k as f64).clamp(0, k as i64) as usize
        }
    };
    let mut caps = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    let mut init_acc = Vec::with_capacity(k);
    for w in 0..k {
        let class = if w < low_count { &cfg.low } else { &cfg.high };
        let f_max = class.f_max_hz.sample(rng);
        let p_max = dbm_to_watt(class.p_max_dbm.sample(rng));
        let bandwidth = cfg.bandwidth_hz.sample(rng);
        let distance = cfg.distance_km.sample(rng);
        let n_samples = cfg.samples.sample_int(rng);
        let variance = cfg.variance.sample(rng);
        let acc = crate::config::Span::new(cfg.emulator.init_acc.0, cfg.emulator.init_acc.1)
            .sample(rng);
        variances.push(variance);
        init_acc.push(R::of(acc));
        caps.push(WorkerCaps {
            f_max: R::of(f_max),
            p_max: R::of(p_max),
            c_flops_per_cycle: R::of(class.flops_per_cycle),
            sigma_cap: R::of(cfg.switched_cap),
            bandwidth: R::of(bandwidth),
            distance_km: R::of(distance),
            n_samples,
            data_variance: R::of(variance),
        });
    }
    let iters: Vec<u32> = variances
        .iter()
        .map(|&v| {
            sample_local_iters(
                v,
                cfg.variance.lo,
                cfg.variance.hi,
                &cfg.emulator,
            )
        })
        .collect();
    let mean_iters = iters.iter().map(|&i| i as f64).sum::<f64>() / k as f64;
    let g_total = sample_global_budget(mean_iters, &cfg.emulator);
    Population {
        caps,
        iters,
        init_acc,
        g_total,
    }
}
