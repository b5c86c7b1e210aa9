//! Experiment configuration: a human-readable TOML schema with units spelled
//! out in the key names (`p_max_dbm`, `bandwidth_mhz`, ...), parsed once into
//! SI. Any rangeable field accepts either a scalar or a `[lo, hi]` pair.

use crate::emulator::EmulatorParams;
use crate::env::SyncMode;
use crate::units::dbm_to_watt;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Inclusive interval; a scalar in the file becomes a collapsed span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "span endpoints out of order: [{lo}, {hi}]");
        Span { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Span { lo: x, hi: x }
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Uniform draw over the interval (the point itself when collapsed).
    pub fn sample(&self, rng: &mut ChaCha12Rng) -> f64 {
        if self.is_point() {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }

    /// Uniform integer draw, inclusive of both endpoints.
    pub fn sample_int(&self, rng: &mut ChaCha12Rng) -> u32 {
        let lo = self.lo.round() as u32;
        let hi = self.hi.round() as u32;
        if lo >= hi {
            lo
        } else {
            rng.gen_range(lo..=hi)
        }
    }

    fn scaled(&self, factor: f64) -> Span {
        Span::new(self.lo * factor, self.hi * factor)
    }
}

/// File-level scalar-or-range value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawSpan {
    Scalar(f64),
    Range([f64; 2]),
}

impl RawSpan {
    fn span(&self) -> Result<Span, ConfigError> {
        match *self {
            RawSpan::Scalar(x) => Ok(Span::point(x)),
            RawSpan::Range([lo, hi]) if lo <= hi => Ok(Span::new(lo, hi)),
            RawSpan::Range([lo, hi]) => Err(ConfigError::Invalid(format!(
                "range endpoints out of order: [{lo}, {hi}]"
            ))),
        }
    }

    fn from_span(s: Span) -> RawSpan {
        if s.is_point() {
            RawSpan::Scalar(s.lo)
        } else {
            RawSpan::Range([s.lo, s.hi])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    /// One worker population drawn when the run starts, fixed thereafter.
    Static,
    /// Population, datasets and bandwidths resampled every episode,
    /// distances every round.
    Dynamic,
}

/// How many of the K workers are low-end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LowEndFraction {
    /// Fixed fraction of the population (0.2 means round(0.2·K) workers).
    Fixed(f64),
    /// Truncated normal over the percentage, redrawn per episode.
    TruncNormal {
        mean_pct: f64,
        sd_pct: f64,
        min_pct: f64,
        max_pct: f64,
    },
}

/// Capability ranges of one worker class. Powers stay in dBm because the
/// uniform draw is over dBm; conversion to W happens per sampled value.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCaps {
    pub f_max_hz: Span,
    pub p_max_dbm: Span,
    pub flops_per_cycle: f64,
}

impl ClassCaps {
    pub fn p_max_w_hi(&self) -> f64 {
        dbm_to_watt(self.p_max_dbm.hi)
    }
}

/// Fully parsed experiment configuration (SI units).
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub workers: usize,
    pub sync: SyncMode,
    pub deadzone_frac: f64,
    pub seed: Option<u64>,

    pub alpha_flops: f64,
    pub size_bits: f64,
    pub eta: f64,
    pub epsilon0: f64,
    pub f_star: f64,
    pub deadline_s: f64,

    pub n0_w_hz: f64,
    pub bandwidth_hz: Span,
    pub distance_km: Span,

    pub switched_cap: f64,
    pub low: ClassCaps,
    pub high: ClassCaps,
    pub low_end_fraction: LowEndFraction,

    pub samples: Span,
    pub variance: Span,

    pub emulator: EmulatorParams,
    pub penalty: Option<(f64, f64)>,
}

impl EnvConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text)?;
        file.build()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(&ConfigFile::from_config(self)).expect("config serializes")
    }

    /// Penalty weights (mu1 for deadline misses, mu2 for the all-idle round).
    /// Explicit values win; otherwise mu1 interpolates the 0.1/0.2/0.4
    /// anchors at K = 5/10/20 and mu2 = 1 − mu1.
    pub fn penalty_weights(&self) -> (f64, f64) {
        if let Some(p) = self.penalty {
            return p;
        }
        let k = self.workers as f64;
        let mu1 = if k <= 5.0 {
            0.1
        } else if k <= 10.0 {
            0.1 + (k - 5.0) / 5.0 * 0.1
        } else if k <= 20.0 {
            0.2 + (k - 10.0) / 10.0 * 0.2
        } else {
            0.4
        };
        (mu1, 1.0 - mu1)
    }

    /// Reference static setup: fixed 20% low-end split (1 GHz / 28 dBm /
    /// c = 4 against 3 GHz / 33 dBm / c = 2), 20 MHz links, 13 s deadline.
    pub fn static_default(workers: usize) -> Self {
        EnvConfig {
            kind: EnvKind::Static,
            workers,
            sync: SyncMode::WorkerSide,
            deadzone_frac: 0.05,
            seed: None,
            alpha_flops: 1.8e6,
            size_bits: 2.008e7,
            eta: 0.5,
            epsilon0: 0.04,
            f_star: 1.0,
            deadline_s: 13.0,
            n0_w_hz: dbm_to_watt(-158.0),
            bandwidth_hz: Span::point(20e6),
            distance_km: Span::new(0.01, 0.5),
            switched_cap: 1e-28,
            low: ClassCaps {
                f_max_hz: Span::point(1e9),
                p_max_dbm: Span::point(28.0),
                flops_per_cycle: 4.0,
            },
            high: ClassCaps {
                f_max_hz: Span::point(3e9),
                p_max_dbm: Span::point(33.0),
                flops_per_cycle: 2.0,
            },
            low_end_fraction: LowEndFraction::Fixed(0.2),
            samples: Span::new(800.0, 1200.0),
            variance: Span::new(0.5, 1.5),
            emulator: EmulatorParams::default(),
            penalty: None,
        }
    }

    /// Reference dynamic setup: per-episode truncated-normal low-end share,
    /// capability/bandwidth ranges instead of fixed values, per-round
    /// distances.
    pub fn dynamic_default(workers: usize) -> Self {
        EnvConfig {
            kind: EnvKind::Dynamic,
            bandwidth_hz: Span::new(5e6, 20e6),
            low: ClassCaps {
                f_max_hz: Span::new(1e9, 3e9),
                p_max_dbm: Span::new(23.0, 28.0),
                flops_per_cycle: 4.0,
            },
            high: ClassCaps {
                f_max_hz: Span::new(3.2e9, 5e9),
                p_max_dbm: Span::new(29.0, 33.0),
                flops_per_cycle: 2.0,
            },
            low_end_fraction: LowEndFraction::TruncNormal {
                mean_pct: 15.0,
                sd_pct: 12.0,
                min_pct: 0.0,
                max_pct: 60.0,
            },
            ..Self::static_default(workers)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.workers == 0 {
            return fail("worker count must be at least 1".into());
        }
        if !(self.alpha_flops > 0.0 && self.size_bits > 0.0 && self.deadline_s > 0.0) {
            return fail("alpha_flops, size_bits and deadline_s must be positive".into());
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) || !(self.epsilon0 > 0.0 && self.epsilon0 < 1.0) {
            return fail("eta must lie in (0,1] and epsilon0 in (0,1)".into());
        }
        if self.n0_w_hz <= 0.0 || self.switched_cap <= 0.0 {
            return fail("noise density and switched capacitance must be positive".into());
        }
        if self.bandwidth_hz.lo <= 0.0 || self.distance_km.lo <= 0.0 {
            return fail("bandwidth and distance must be positive".into());
        }
        for (name, class) in [("low", &self.low), ("high", &self.high)] {
            if class.f_max_hz.lo <= 0.0 || class.flops_per_cycle <= 0.0 {
                return fail(format!("{name} class needs positive f_max and flops_per_cycle"));
            }
        }
        if !(0.0..0.5).contains(&self.deadzone_frac) {
            return fail("deadzone_frac must lie in [0, 0.5)".into());
        }
        if self.samples.lo < 1.0 {
            return fail("dataset sample counts must be at least 1".into());
        }
        if self.variance.lo < 0.0 {
            return fail("dataset variance must be nonnegative".into());
        }
        match self.low_end_fraction {
            LowEndFraction::Fixed(f) if !(0.0..=1.0).contains(&f) => {
                return fail("fixed low-end fraction must lie in [0,1]".into());
            }
            LowEndFraction::TruncNormal {
                sd_pct,
                min_pct,
                max_pct,
                ..
            } if sd_pct <= 0.0 || min_pct > max_pct || min_pct < 0.0 || max_pct > 100.0 => {
                return fail("truncated-normal low-end spec is malformed".into());
            }
            _ => {}
        }
        let e = &self.emulator;
        if !(2 <= e.local_iters.0 && e.local_iters.0 <= e.local_iters.1) {
            return fail("local iteration range must satisfy 2 <= lo <= hi".into());
        }
        if !(1 <= e.global_iters.0 && e.global_iters.0 <= e.global_iters.1) {
            return fail("global iteration range must satisfy 1 <= lo <= hi".into());
        }
        if !(0.0..1.0).contains(&e.jitter) {
            return fail("jitter must lie in [0, 1)".into());
        }
        if e.max_rounds_safeguard == 0 {
            return fail("max rounds safeguard must be positive".into());
        }
        if !(e.init_acc.0 > 0.0 && e.init_acc.0 <= e.init_acc.1 && e.init_acc.1 < self.f_star) {
            return fail("initial accuracy range must satisfy 0 < lo <= hi < f_star".into());
        }
        if let Some((mu1, mu2)) = self.penalty {
            if mu1 < 0.0 || mu2 < 0.0 {
                return fail("penalty weights must be nonnegative".into());
            }
        }
        Ok(())
    }
}

fn d_one() -> f64 {
    1.0
}

fn d_deadzone() -> f64 {
    0.05
}

fn d_jitter() -> f64 {
    0.0
}

fn d_max_rounds() -> u32 {
    200
}

fn d_local_iters() -> [u32; 2] {
    [2, 11]
}

fn d_global_iters() -> [u32; 2] {
    [10, 22]
}

fn d_init_acc() -> RawSpan {
    RawSpan::Range([0.15, 0.18])
}

/// On-disk schema. Field names carry the units; values are converted to SI
/// exactly once, in [`ConfigFile::build`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    kind: EnvKind,
    workers: usize,
    #[serde(default)]
    sync: SyncMode,
    #[serde(default = "d_deadzone")]
    deadzone_frac: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    model: ModelSection,
    channel: ChannelSection,
    population: PopulationSection,
    dataset: DatasetSection,
    #[serde(default)]
    emulator: EmulatorSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    penalty: Option<PenaltySection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    alpha_flops: f64,
    size_bits: f64,
    eta: f64,
    epsilon0: f64,
    #[serde(default = "d_one")]
    f_star: f64,
    deadline_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    n0_dbm_hz: f64,
    bandwidth_mhz: RawSpan,
    distance_m: RawSpan,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PopulationSection {
    switched_cap_w_hz3: f64,
    low_end_fraction: LowEndFraction,
    low: ClassSection,
    high: ClassSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassSection {
    f_max_ghz: RawSpan,
    p_max_dbm: RawSpan,
    flops_per_cycle: f64,
}

impl ClassSection {
    fn build(&self) -> Result<ClassCaps, ConfigError> {
        Ok(ClassCaps {
            f_max_hz: self.f_max_ghz.span()?.scaled(1e9),
            p_max_dbm: self.p_max_dbm.span()?,
            flops_per_cycle: self.flops_per_cycle,
        })
    }

    fn from_caps(c: &ClassCaps) -> Self {
        ClassSection {
            f_max_ghz: RawSpan::from_span(c.f_max_hz.scaled(1e-9)),
            p_max_dbm: RawSpan::from_span(c.p_max_dbm),
            flops_per_cycle: c.flops_per_cycle,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    samples: RawSpan,
    variance: RawSpan,
    #[serde(default = "d_init_acc")]
    init_acc: RawSpan,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmulatorSection {
    #[serde(default = "d_local_iters")]
    local_iters: [u32; 2],
    #[serde(default = "d_global_iters")]
    global_iters: [u32; 2],
    #[serde(default = "d_jitter")]
    jitter: f64,
    #[serde(default = "d_max_rounds")]
    max_rounds: u32,
}

impl Default for EmulatorSection {
    fn default() -> Self {
        EmulatorSection {
            local_iters: d_local_iters(),
            global_iters: d_global_iters(),
            jitter: d_jitter(),
            max_rounds: d_max_rounds(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PenaltySection {
    mu1: f64,
    mu2: f64,
}

impl ConfigFile {
    fn build(&self) -> Result<EnvConfig, ConfigError> {
        let init_acc = self.dataset.init_acc.span()?;
        let cfg = EnvConfig {
            kind: self.kind,
            workers: self.workers,
            sync: self.sync,
            deadzone_frac: self.deadzone_frac,
            seed: self.seed,
            alpha_flops: self.model.alpha_flops,
            size_bits: self.model.size_bits,
            eta: self.model.eta,
            epsilon0: self.model.epsilon0,
            f_star: self.model.f_star,
            deadline_s: self.model.deadline_s,
            n0_w_hz: dbm_to_watt(self.channel.n0_dbm_hz),
            bandwidth_hz: self.channel.bandwidth_mhz.span()?.scaled(1e6),
            distance_km: self.channel.distance_m.span()?.scaled(1e-3),
            switched_cap: self.population.switched_cap_w_hz3,
            low: self.population.low.build()?,
            high: self.population.high.build()?,
            low_end_fraction: self.population.low_end_fraction,
            samples: self.dataset.samples.span()?,
            variance: self.dataset.variance.span()?,
            emulator: EmulatorParams {
                local_iters: (self.emulator.local_iters[0], self.emulator.local_iters[1]),
                global_iters: (self.emulator.global_iters[0], self.emulator.global_iters[1]),
                init_acc: (init_acc.lo, init_acc.hi),
                jitter: self.emulator.jitter,
                max_rounds_safeguard: self.emulator.max_rounds,
            },
            penalty: self.penalty.as_ref().map(|p| (p.mu1, p.mu2)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_config(cfg: &EnvConfig) -> Self {
        ConfigFile {
            kind: cfg.kind,
            workers: cfg.workers,
            sync: cfg.sync,
            deadzone_frac: cfg.deadzone_frac,
            seed: cfg.seed,
            model: ModelSection {
                alpha_flops: cfg.alpha_flops,
                size_bits: cfg.size_bits,
                eta: cfg.eta,
                epsilon0: cfg.epsilon0,
                f_star: cfg.f_star,
                deadline_s: cfg.deadline_s,
            },
            channel: ChannelSection {
                n0_dbm_hz: crate::units::watt_to_dbm(cfg.n0_w_hz),
                bandwidth_mhz: RawSpan::from_span(cfg.bandwidth_hz.scaled(1e-6)),
                distance_m: RawSpan::from_span(cfg.distance_km.scaled(1e3)),
            },
            population: PopulationSection {
                switched_cap_w_hz3: cfg.switched_cap,
                low_end_fraction: cfg.low_end_fraction,
                low: ClassSection::from_caps(&cfg.low),
                high: ClassSection::from_caps(&cfg.high),
            },
            dataset: DatasetSection {
                samples: RawSpan::from_span(cfg.samples),
                variance: RawSpan::from_span(cfg.variance),
                init_acc: RawSpan::from_span(Span::new(
                    cfg.emulator.init_acc.0,
                    cfg.emulator.init_acc.1,
                )),
            },
            emulator: EmulatorSection {
                local_iters: [cfg.emulator.local_iters.0, cfg.emulator.local_iters.1],
                global_iters: [cfg.emulator.global_iters.0, cfg.emulator.global_iters.1],
                jitter: cfg.emulator.jitter,
                max_rounds: cfg.emulator.max_rounds_safeguard,
            },
            penalty: cfg.penalty.map(|(mu1, mu2)| PenaltySection { mu1, mu2 }),
        }
    }
}
