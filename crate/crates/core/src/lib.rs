//! Simulation and learning stack for energy-aware scheduling of federated
//! learning over shared wireless links.
//!
//! The crate is organized bottom-up:
//!
//! - [`units`] and [`energy`]: dBm/Watt conversions, path loss, Shannon
//!   rate, and the computation/transmission energy and latency formulas.
//! - [`emulator`]: a statistical stand-in for a real federated-learning run
//!   (local-iteration demand, a sampled global-iteration budget, and a
//!   jittered geometric convergence curve).
//! - [`config`] and [`env`]: experiment configuration and the gym-style
//!   round environment with worker-side or coordinator-side handling of
//!   deadline stragglers.
//! - [`sched`]: best-effort, random, and greedy baseline schedulers.
//! - [`nn`] and [`sac`]: a hand-backpropagated MLP stack and the soft
//!   actor–critic learner with replay, twin critics, and policy checkpoints.
//! - [`metrics`]: per-episode accounting and the frozen CSV schema.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`). Random draws
//! happen in `f64` before conversion, so the same seed produces the same
//! episode regardless of the scalar type. The aliases below fix `f64`, which
//! is what the command-line tools use.

pub mod config;
pub mod emulator;
pub mod energy;
pub mod env;
pub mod metrics;
pub mod nn;
pub mod num;
pub mod sac;
pub mod sched;
pub mod units;

pub use config::{EnvConfig, EnvKind};
pub use env::{episode_seed, SyncMode};
pub use metrics::{EpisodeMetrics, Summary};
pub use num::Real;
pub use sched::Agent;

/// Concrete double-precision instantiations of the generic core types.
pub type Env = env::Env<f64>;
pub type EnvState = env::EnvState<f64>;
pub type StepOutcome = env::StepOutcome<f64>;
pub type NormCaps = env::NormCaps;
pub type FlModelSpec = energy::FlModelSpec<f64>;
pub type WorkerCaps = energy::WorkerCaps<f64>;
pub type Allocation = energy::Allocation<f64>;
pub type EmulatedRun = emulator::EmulatedRun<f64>;
pub type Mlp = nn::Mlp<f64>;
pub type Workspace = nn::Workspace<f64>;
pub type SacAgent = sac::SacAgent<f64>;
pub type SacConfig = sac::SacConfig;
pub type TrainedPolicy = sac::TrainedPolicy<f64>;
pub type PolicyAgent = sac::PolicyAgent<f64>;
pub type ReplayBuffer = sac::ReplayBuffer<f64>;
pub type Transition = sac::Transition<f64>;
