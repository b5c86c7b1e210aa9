//! `flsched` — train, evaluate and compare energy-aware schedulers for
//! federated learning over a simulated wireless network.
//!
//! Subcommands:
//! * `train` — offline SAC training; writes a policy checkpoint and a
//!   per-episode metrics CSV.
//! * `eval` — one scheduler (baseline or frozen policy) over N episodes;
//!   prints a mean ± std summary, optionally writes the raw CSV.
//! * `compare` — several schedulers on identical environment seeds, one
//!   summary table.
//! * `sync-study` — both synchronization modes across a list of deadlines.
//! * `plot-data` — reduces a training CSV to per-window means for plotting.
//!
//! All runs are deterministic in the master seed: repeating an invocation
//! reproduces every CSV byte for byte.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use flsched_core::metrics::{read_csv_file, window_means, write_csv_file, write_window_csv};
use flsched_core::sac::{save_policy, train, LossReport};
use flsched_core::{Env, EnvConfig, SacAgent, SacConfig, Summary};

use flsched_cli::driver::{
    print_compare, print_summary, print_sync_table, run_fresh, sync_study, AGENT_SEED_SALT,
    DEFAULT_AGENTS,
};

#[derive(Parser)]
#[command(
    name = "flsched",
    version,
    about = "Energy-aware scheduling benchmark for federated learning over wireless links",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a SAC policy offline; writes a checkpoint and a per-episode CSV.
    Train(TrainArgs),
    /// Evaluate one scheduler and print a mean ± std summary.
    Eval(EvalArgs),
    /// Run several schedulers on identical seeds and print one table.
    Compare(CompareArgs),
    /// Evaluate both synchronization modes across a list of deadlines.
    SyncStudy(SyncStudyArgs),
    /// Reduce a training CSV to averaged windows for plotting.
    PlotData(PlotDataArgs),
}

/// Options every experiment shares: which environment, which master seed.
#[derive(Args)]
struct EnvOpts {
    /// Environment description (TOML; see configs/ for presets).
    #[arg(long, value_name = "FILE")]
    env: PathBuf,
    /// Master seed. Overrides a `seed` key in the config file; defaults to 0.
    #[arg(long)]
    seed: Option<u64>,
}

impl EnvOpts {
    fn load(&self) -> Result<(EnvConfig, u64)> {
        let cfg = EnvConfig::from_path(&self.env)?;
        let seed = self.seed.or(cfg.seed).unwrap_or(0);
        Ok((cfg, seed))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    env: EnvOpts,
    /// Training episodes.
    #[arg(long, default_value_t = 20_000)]
    episodes: u64,
    /// Where the trained policy goes.
    #[arg(long, value_name = "FILE", default_value = "policy.ckpt")]
    checkpoint: PathBuf,
    /// Where the per-episode metrics go.
    #[arg(long, value_name = "FILE", default_value = "train.csv")]
    csv: PathBuf,
    /// Hidden layer widths, comma separated (default depends on worker count).
    #[arg(long, value_name = "N,N,...", value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial optimizer step size.
    #[arg(long)]
    lr: Option<f64>,
    /// Multiplicative step-size decay factor.
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Episodes between step-size decays.
    #[arg(long)]
    lr_decay_every: Option<u64>,
    /// Initial entropy temperature.
    #[arg(long)]
    alpha: Option<f64>,
    /// Entropy target (default −2K).
    #[arg(long, allow_hyphen_values = true)]
    target_entropy: Option<f64>,
    /// Target-network averaging factor.
    #[arg(long)]
    polyak: Option<f64>,
    /// Environment steps between training bursts.
    #[arg(long)]
    train_every: Option<u64>,
    /// Gradient steps per training burst.
    #[arg(long)]
    gradient_steps: Option<u64>,
    /// Environment steps before the first training burst.
    #[arg(long)]
    warmup: Option<u64>,
    /// Replay buffer capacity in transitions.
    #[arg(long)]
    buffer: Option<usize>,
    /// Episodes between progress lines (0 silences them).
    #[arg(long, default_value_t = 1000)]
    log_every: u64,
}

impl TrainArgs {
    fn sac_config(&self, k: usize) -> SacConfig {
        let mut cfg = SacConfig::for_workers(k);
        if let Some(h) = &self.hidden {
            cfg.hidden = h.clone();
        }
        macro_rules! set {
            ($field:ident, $opt:expr) => {
                if let Some(v) = $opt {
                    cfg.$field = v;
                }
            };
        }
        set!(batch_size, self.batch_size);
        set!(lr, self.lr);
        set!(lr_decay, self.lr_decay);
        set!(lr_decay_every, self.lr_decay_every);
        set!(alpha_init, self.alpha);
        set!(polyak, self.polyak);
        set!(train_every, self.train_every);
        set!(gradient_steps, self.gradient_steps);
        set!(warmup_steps, self.warmup);
        set!(buffer_capacity, self.buffer);
        if self.target_entropy.is_some() {
            cfg.target_entropy = self.target_entropy;
        }
        cfg
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    env: EnvOpts,
    /// Scheduler: bes, rss, gss or sac.
    #[arg(long)]
    agent: String,
    #[arg(long, default_value_t = 100)]
    episodes: u64,
    /// Policy checkpoint (required with --agent sac).
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Also write the per-episode rows here.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    env: EnvOpts,
    /// Schedulers to run, comma separated.
    #[arg(long, value_name = "NAME,...", value_delimiter = ',')]
    agents: Option<Vec<String>>,
    #[arg(long, default_value_t = 100)]
    episodes: u64,
    /// Policy checkpoint (needed if the list contains sac).
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Also write one per-episode CSV per scheduler into this directory.
    #[arg(long, value_name = "DIR")]
    csv_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SyncStudyArgs {
    #[command(flatten)]
    env: EnvOpts,
    /// Deadlines in seconds, comma separated.
    #[arg(long, value_name = "S,...", value_delimiter = ',', default_value = "13,8,6")]
    h: Vec<f64>,
    /// Scheduler driving the rounds.
    #[arg(long, default_value = "rss")]
    agent: String,
    #[arg(long, default_value_t = 200)]
    episodes: u64,
    /// Policy checkpoint (required with --agent sac).
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct PlotDataArgs {
    /// Training CSV produced by `train`.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Window length in episodes.
    #[arg(long, default_value_t = 2500)]
    window: usize,
    /// Where the per-window means go.
    #[arg(long, value_name = "FILE", default_value = "plot.csv")]
    out: PathBuf,
}

fn main() -> ExitCode {
    // die quietly when the consumer of a pipe goes away (`flsched ... | head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train(args) => run_train(args),
        Cmd::Eval(args) => run_eval(args),
        Cmd::Compare(args) => run_compare(args),
        Cmd::SyncStudy(args) => run_sync_study(args),
        Cmd::PlotData(args) => run_plot_data(args),
    }
}

fn run_train(args: TrainArgs) -> Result<()> {
    let (cfg, seed) = args.env.load()?;
    let mut env = Env::new(cfg, seed)?;
    let k = env.k();
    let mut agent = SacAgent::new(
        k,
        env.norm_caps().clone(),
        args.sac_config(k),
        seed ^ AGENT_SEED_SALT,
    );
    log::info!(
        "training {} episodes with {} workers, seed {seed}",
        args.episodes,
        k
    );

    let log_every = args.log_every;
    let mut last_report: Option<LossReport> = None;
    let rows = train(&mut env, &mut agent, args.episodes, seed, |m, report| {
        if let Some(r) = report {
            last_report = Some(*r);
        }
        if log_every > 0 && (m.episode + 1) % log_every == 0 {
            match last_report {
                Some(r) => log::info!(
                    "episode {:>7}  reward {:>10.3}  total {:>9.3} J  p1 {:>2}  alpha {:.4}  critic {:.4}",
                    m.episode + 1,
                    m.reward,
                    m.total_j,
                    m.p1,
                    r.alpha,
                    r.critic_loss,
                ),
                None => log::info!(
                    "episode {:>7}  reward {:>10.3}  total {:>9.3} J  p1 {:>2}  (no update yet)",
                    m.episode + 1,
                    m.reward,
                    m.total_j,
                    m.p1,
                ),
            }
        }
    })?;

    write_csv_file(&args.csv, &rows)
        .with_context(|| format!("cannot write {}", args.csv.display()))?;
    save_policy(&agent.export_policy(), &args.checkpoint)
        .with_context(|| format!("cannot write {}", args.checkpoint.display()))?;

    let tail = rows.len().min(1000);
    if tail > 0 {
        let s = Summary::from_rows(&rows[rows.len() - tail..]);
        print_summary(&format!("last {tail} episodes:"), &s);
    }
    println!("checkpoint: {}", args.checkpoint.display());
    println!("metrics:    {}", args.csv.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let (cfg, seed) = args.env.load()?;
    let rows = run_fresh(
        &cfg,
        &args.agent,
        args.checkpoint.as_deref(),
        args.episodes,
        seed,
    )?;
    if let Some(path) = &args.csv {
        write_csv_file(path, &rows).with_context(|| format!("cannot write {}", path.display()))?;
    }
    let s = Summary::from_rows(&rows);
    print_summary(
        &format!(
            "agent={} episodes={} seed={seed} ({} workers):",
            args.agent, args.episodes, cfg.workers
        ),
        &s,
    );
    Ok(())
}

fn run_compare(args: CompareArgs) -> Result<()> {
    let (cfg, seed) = args.env.load()?;
    let names: Vec<String> = match &args.agents {
        Some(list) if !list.is_empty() => list.clone(),
        _ => DEFAULT_AGENTS.iter().map(|s| s.to_string()).collect(),
    };
    if let Some(dir) = &args.csv_dir {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let mut table = Vec::with_capacity(names.len());
    for name in &names {
        let rows = run_fresh(&cfg, name, args.checkpoint.as_deref(), args.episodes, seed)?;
        if let Some(dir) = &args.csv_dir {
            let path = dir.join(format!("{name}.csv"));
            write_csv_file(&path, &rows)
                .with_context(|| format!("cannot write {}", path.display()))?;
        }
        table.push((name.clone(), Summary::from_rows(&rows)));
    }
    println!(
        "episodes={} seed={seed} ({} workers, shared seeds)",
        args.episodes, cfg.workers
    );
    print_compare(&table);
    Ok(())
}

fn run_sync_study(args: SyncStudyArgs) -> Result<()> {
    let (cfg, seed) = args.env.load()?;
    if args.h.is_empty() {
        bail!("--h needs at least one deadline");
    }
    let cells = sync_study(
        &cfg,
        &args.agent,
        args.checkpoint.as_deref(),
        &args.h,
        args.episodes,
        seed,
    )?;
    println!(
        "agent={} episodes={} seed={seed} ({} workers, shared seeds per cell)",
        args.agent, args.episodes, cfg.workers
    );
    print_sync_table(&cells);
    Ok(())
}

fn run_plot_data(args: PlotDataArgs) -> Result<()> {
    if args.window == 0 {
        bail!("--window must be positive");
    }
    let rows = read_csv_file(&args.input)
        .with_context(|| format!("cannot read {}", args.input.display()))?;
    let windows = window_means(&rows, args.window);
    let file = File::create(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let mut w = BufWriter::new(file);
    write_window_csv(&mut w, &windows)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    w.flush()?;
    println!(
        "{} episodes -> {} windows of {} -> {}",
        rows.len(),
        windows.len(),
        args.window,
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_the_documented_examples() {
        Cli::try_parse_from([
            "flsched", "eval", "--agent", "bes", "--episodes", "100", "--env", "static5.toml",
        ])
        .unwrap();
        Cli::try_parse_from(["flsched", "sync-study", "--env", "e.toml", "--h", "13,8,6"])
            .unwrap();
        Cli::try_parse_from([
            "flsched", "plot-data", "--input", "train.csv", "--window", "2500",
        ])
        .unwrap();
        Cli::try_parse_from([
            "flsched", "train", "--env", "e.toml", "--episodes", "50", "--hidden", "32,32",
            "--target-entropy", "-6",
        ])
        .unwrap();
    }

    #[test]
    fn unknown_flags_are_rejected() {
        assert!(Cli::try_parse_from(["flsched", "eval", "--agent", "bes", "--frobnicate"]).is_err());
        assert!(Cli::try_parse_from(["flsched", "evaluate"]).is_err());
    }

    #[test]
    fn agent_list_splits_on_commas() {
        let cli = Cli::try_parse_from([
            "flsched", "compare", "--env", "e.toml", "--agents", "bes,rss",
        ])
        .unwrap();
        match cli.cmd {
            Cmd::Compare(args) => assert_eq!(args.agents.unwrap(), ["bes", "rss"]),
            _ => unreachable!(),
        }
    }
}
