//! Experiment drivers shared by the subcommands: seeded episode loops, agent
//! construction and the plain-text summary tables printed to stdout.
//!
//! Seeding scheme: episode `i` of a run with master seed `s` resets the
//! environment with `episode_seed(s, i)` and hands the agent its own
//! `ChaCha12Rng` seeded with `episode_seed(s ^ AGENT_SEED_SALT, i)`. The two
//! streams never mix, so an agent that draws more or less randomness (RSS vs
//! BES, say) still faces byte-identical environments, and any episode can be
//! replayed in isolation.

use std::path::Path;

use anyhow::{bail, Context, Result};
use flsched_core::metrics::{Accumulator, Stat};
use flsched_core::sac::load_policy;
use flsched_core::sched::{BestEffort, GreedySelection, RandomSelection};
use flsched_core::{
    episode_seed, Agent, Env, EnvConfig, EpisodeMetrics, PolicyAgent, Summary, SyncMode,
    TrainedPolicy,
};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Separates the agents' random stream from the environments'.
pub const AGENT_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// The baseline set `compare` runs when none is given.
pub const DEFAULT_AGENTS: &[&str] = &["bes", "rss", "gss"];

/// Builds a scheduler by name; `sac` additionally needs a checkpoint whose
/// worker count matches `k`.
pub fn make_agent(
    name: &str,
    checkpoint: Option<&Path>,
    k: usize,
) -> Result<Box<dyn Agent<f64>>> {
    match name {
        "bes" => Ok(Box::new(BestEffort)),
        "rss" => Ok(Box::new(RandomSelection)),
        "gss" => Ok(Box::new(GreedySelection::new())),
        "sac" => {
            let path = checkpoint.context("--agent sac needs --checkpoint <FILE>")?;
            let policy: TrainedPolicy = load_policy(path)
                .with_context(|| format!("cannot load policy from {}", path.display()))?;
            policy.require_k(k).with_context(|| {
                format!("checkpoint {} does not fit this environment", path.display())
            })?;
            Ok(Box::new(PolicyAgent::new(policy)))
        }
        other => bail!("unknown agent {other:?} (expected bes, rss, gss or sac)"),
    }
}

/// Runs `episodes` complete episodes and returns one metrics row per episode.
pub fn run_episodes(
    env: &mut Env,
    agent: &mut dyn Agent<f64>,
    episodes: u64,
    master_seed: u64,
) -> Result<Vec<EpisodeMetrics>> {
    let mut rows = Vec::with_capacity(episodes as usize);
    for ep in 0..episodes {
        agent.reset_episode();
        let mut agent_rng =
            ChaCha12Rng::seed_from_u64(episode_seed(master_seed ^ AGENT_SEED_SALT, ep));
        let mut state = env.reset(episode_seed(master_seed, ep));
        let mut acc = Accumulator::new(ep);
        loop {
            let action = agent.act(&state, &mut agent_rng);
            let out = env
                .step(&action)
                .with_context(|| format!("episode {ep} failed"))?;
            agent.observe(&out);
            acc.push(&out);
            let done = out.done;
            state = out.next_state;
            if done {
                break;
            }
        }
        rows.push(acc.finish());
    }
    Ok(rows)
}

/// Builds a fresh environment and a fresh agent, runs them, and summarizes.
/// Every caller that wants shared seeds across variants goes through this with
/// the same `master_seed`.
pub fn run_fresh(
    cfg: &EnvConfig,
    agent_name: &str,
    checkpoint: Option<&Path>,
    episodes: u64,
    master_seed: u64,
) -> Result<Vec<EpisodeMetrics>> {
    let mut env = Env::new(cfg.clone(), master_seed)?;
    let mut agent = make_agent(agent_name, checkpoint, env.k())?;
    run_episodes(&mut env, agent.as_mut(), episodes, master_seed)
}

/// One (synchronization mode, deadline) cell of the sync study.
pub struct SyncCell {
    pub mode: SyncMode,
    pub h_s: f64,
    pub summary: Summary,
}

/// Runs the same seeded episodes under both synchronization modes for every
/// deadline in `deadlines_s`. Worker-side rows come first, mirroring the
/// reading order of the comparison tables.
pub fn sync_study(
    cfg: &EnvConfig,
    agent_name: &str,
    checkpoint: Option<&Path>,
    deadlines_s: &[f64],
    episodes: u64,
    master_seed: u64,
) -> Result<Vec<SyncCell>> {
    let mut cells = Vec::with_capacity(2 * deadlines_s.len());
    for mode in [SyncMode::WorkerSide, SyncMode::CoordinatorSide] {
        for &h_s in deadlines_s {
            if !(h_s > 0.0) {
                bail!("deadline must be positive, got {h_s}");
            }
            let mut cell_cfg = cfg.clone();
            cell_cfg.sync = mode;
            cell_cfg.deadline_s = h_s;
            let rows = run_fresh(&cell_cfg, agent_name, checkpoint, episodes, master_seed)?;
            cells.push(SyncCell {
                mode,
                h_s,
                summary: Summary::from_rows(&rows),
            });
        }
    }
    Ok(cells)
}

pub fn mode_label(mode: SyncMode) -> &'static str {
    match mode {
        SyncMode::WorkerSide => "worker-side",
        SyncMode::CoordinatorSide => "coordinator-side",
    }
}

/// Full mean ± std block for one agent, one metric per line.
pub fn print_summary(title: &str, s: &Summary) {
    println!("{title}");
    println!("  {:<16} {:>16} {:>16}", "metric", "mean", "std");
    for (name, stat) in metric_rows(s) {
        println!("  {:<16} {:>16.6} {:>16.6}", name, stat.mean, stat.std);
    }
}

fn metric_rows(s: &Summary) -> [(&'static str, Stat); 13] {
    [
        ("total_J", s.total_j),
        ("comp_J", s.comp_j),
        ("tx_J", s.tx_j),
        ("wasted_J", s.wasted_j),
        ("reward", s.reward),
        ("p1", s.p1),
        ("p2", s.p2),
        ("rounds", s.rounds),
        ("mean_round_s", s.mean_round_s),
        ("accesses", s.accesses),
        ("occ_s", s.occ_s),
        ("unnec_accesses", s.unnec_accesses),
        ("unnec_occ_s", s.unnec_occ_s),
    ]
}

/// One row per scheduler, shared seeds, headline columns.
pub fn print_compare(rows: &[(String, Summary)]) {
    println!(
        "{:<6} {:>12} {:>12} {:>12} {:>8} {:>8} {:>8} {:>14} {:>10}",
        "agent", "total_J", "std", "wasted_J", "p1", "p2", "rounds", "mean_round_s", "accesses"
    );
    for (name, s) in rows {
        println!(
            "{:<6} {:>12.4} {:>12.4} {:>12.4} {:>8.3} {:>8.3} {:>8.2} {:>14.4} {:>10.2}",
            name,
            s.total_j.mean,
            s.total_j.std,
            s.wasted_j.mean,
            s.p1.mean,
            s.p2.mean,
            s.rounds.mean,
            s.mean_round_s.mean,
            s.accesses.mean,
        );
    }
}

/// One row per (mode, deadline) with the channel-waste columns.
pub fn print_sync_table(cells: &[SyncCell]) {
    println!(
        "{:<17} {:>6} {:>12} {:>12} {:>12} {:>14} {:>12} {:>12}",
        "mode", "H_s", "wasted_J", "std", "unnec_acc", "unnec_occ_s", "accesses", "total_J"
    );
    for c in cells {
        let s = &c.summary;
        println!(
            "{:<17} {:>6} {:>12.4} {:>12.4} {:>12.3} {:>14.4} {:>12.2} {:>12.4}",
            mode_label(c.mode),
            c.h_s,
            s.wasted_j.mean,
            s.wasted_j.std,
            s.unnec_accesses.mean,
            s.unnec_occ_s.mean,
            s.accesses.mean,
            s.total_j.mean,
        );
    }
}
