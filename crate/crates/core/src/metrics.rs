//! Per-episode accounting and CSV serialization.
//!
//! Every experiment driver reduces episodes to one [`EpisodeMetrics`] row and
//! appends it to a CSV file. The column order is frozen (see [`CSV_HEADER`])
//! and the schema version is recorded in a leading comment line, so files can
//! be diffed byte-for-byte across runs and parsed back without guesswork.
//!
//! `total_J` counts only energy spent on updates that made it into the global
//! model (computation + transmission); energy burned on discarded updates is
//! reported separately in `wasted_J`.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::env::StepOutcome;
use crate::num::Real;

/// Bumped whenever a column is added, removed, or reordered.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Leading comment line of every metrics CSV.
pub const CSV_COMMENT: &str = "# flsched metrics csv v1";

/// Frozen column order.
pub const CSV_HEADER: &str = "episode,total_J,comp_J,tx_J,wasted_J,reward,p1,p2,rounds,mean_round_s,accesses,occ_s,unnec_accesses,unnec_occ_s";

/// One episode reduced to the quantities the experiment tables report.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: u64,
    /// Computation + transmission energy of delivered updates, J.
    pub total_j: f64,
    pub comp_j: f64,
    pub tx_j: f64,
    /// Energy spent on updates that were discarded, J.
    pub wasted_j: f64,
    /// Sum of per-round rewards.
    pub reward: f64,
    /// Deadline violations over the episode.
    pub p1: u64,
    /// Rounds in which no worker was assigned both frequency and power.
    pub p2: u64,
    /// Global rounds the episode ran.
    pub rounds: u64,
    /// Mean wall-clock round duration, s.
    pub mean_round_s: f64,
    /// Channel accesses (transmissions that reached the coordinator usefully).
    pub accesses: u64,
    /// Channel occupation by those accesses, s.
    pub occ_s: f64,
    /// Accesses whose payload was discarded.
    pub unnec_accesses: u64,
    /// Channel occupation by discarded payloads, s.
    pub unnec_occ_s: f64,
}

impl EpisodeMetrics {
    /// Render as one CSV row in the frozen column order.
    pub fn to_csv_row(&self) -> String {
        let mut s = String::with_capacity(128);
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.total_j,
            self.comp_j,
            self.tx_j,
            self.wasted_j,
            self.reward,
            self.p1,
            self.p2,
            self.rounds,
            self.mean_round_s,
            self.accesses,
            self.occ_s,
            self.unnec_accesses,
            self.unnec_occ_s,
        );
        s
    }

    /// Parse one CSV row (no header, no comment).
    pub fn from_csv_row(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 14 {
            return Err(format!("expected 14 fields, found {}", fields.len()));
        }
        fn int(s: &str) -> Result<u64, String> {
            s.trim().parse().map_err(|e| format!("bad integer {s:?}: {e}"))
        }
        fn num(s: &str) -> Result<f64, String> {
            s.trim().parse().map_err(|e| format!("bad number {s:?}: {e}"))
        }
        Ok(EpisodeMetrics {
            episode: int(fields[0])?,
            total_j: num(fields[1])?,
            comp_j: num(fields[2])?,
            tx_j: num(fields[3])?,
            wasted_j: num(fields[4])?,
            reward: num(fields[5])?,
            p1: int(fields[6])?,
            p2: int(fields[7])?,
            rounds: int(fields[8])?,
            mean_round_s: num(fields[9])?,
            accesses: int(fields[10])?,
            occ_s: num(fields[11])?,
            unnec_accesses: int(fields[12])?,
            unnec_occ_s: num(fields[13])?,
        })
    }

    fn float_fields(&self) -> [f64; 8] {
        [
            self.total_j,
            self.comp_j,
            self.tx_j,
            self.wasted_j,
            self.reward,
            self.mean_round_s,
            self.occ_s,
            self.unnec_occ_s,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.float_fields().iter().all(|v| v.is_finite())
    }
}

/// Streaming reducer from [`StepOutcome`]s to one [`EpisodeMetrics`] row.
#[derive(Debug, Clone)]
pub struct Accumulator {
    episode: u64,
    comp: f64,
    tx: f64,
    wasted: f64,
    reward: f64,
    p1: u64,
    p2: u64,
    rounds: u64,
    time_sum: f64,
    accesses: u64,
    occ: f64,
    unnec_accesses: u64,
    unnec_occ: f64,
}

impl Accumulator {
    pub fn new(episode: u64) -> Self {
        Accumulator {
            episode,
            comp: 0.0,
            tx: 0.0,
            wasted: 0.0,
            reward: 0.0,
            p1: 0,
            p2: 0,
            rounds: 0,
            time_sum: 0.0,
            accesses: 0,
            occ: 0.0,
            unnec_accesses: 0,
            unnec_occ: 0.0,
        }
    }

    pub fn push<R: Real>(&mut self, out: &StepOutcome<R>) {
        let sum = |v: &[R]| v.iter().map(|x| x.f64()).sum::<f64>();
        self.comp += sum(&out.comp);
        self.tx += sum(&out.tx);
        self.wasted += sum(&out.wasted);
        self.reward += out.reward.f64();
        self.p1 += u64::from(out.p1);
        self.p2 += u64::from(out.p2);
        self.rounds += 1;
        self.time_sum += out.round_time.f64();
        self.accesses += u64::from(out.channel.accesses);
        self.occ += out.channel.occupation_s.f64();
        self.unnec_accesses += u64::from(out.channel.unnecessary_accesses);
        self.unnec_occ += out.channel.unnecessary_s.f64();
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn finish(self) -> EpisodeMetrics {
        let mean_round_s = if self.rounds > 0 {
            self.time_sum / self.rounds as f64
        } else {
            0.0
        };
        EpisodeMetrics {
            episode: self.episode,
            total_j: self.comp + self.tx,
            comp_j: self.comp,
            tx_j: self.tx,
            wasted_j: self.wasted,
            reward: self.reward,
            p1: self.p1,
            p2: self.p2,
            rounds: self.rounds,
            mean_round_s,
            accesses: self.accesses,
            occ_s: self.occ,
            unnec_accesses: self.unnec_accesses,
            unnec_occ_s: self.unnec_occ,
        }
    }
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("missing schema comment line (expected {CSV_COMMENT:?})")]
    MissingComment,
    #[error("unsupported schema line {0:?}")]
    WrongSchema(String),
    #[error("missing or wrong header row: {0:?}")]
    BadHeader(String),
    #[error("line {line}: {msg}")]
    BadRow { line: usize, msg: String },
    #[error("non-finite value in row for episode {0}")]
    NonFinite(u64),
}

/// Write the schema comment, header, and one row per episode.
pub fn write_csv<W: Write>(w: &mut W, rows: &[EpisodeMetrics]) -> Result<(), CsvError> {
    writeln!(w, "{CSV_COMMENT}")?;
    writeln!(w, "{CSV_HEADER}")?;
    for row in rows {
        if !row.is_finite() {
            return Err(CsvError::NonFinite(row.episode));
        }
        writeln!(w, "{}", row.to_csv_row())?;
    }
    Ok(())
}

pub fn write_csv_file<P: AsRef<Path>>(path: P, rows: &[EpisodeMetrics]) -> Result<(), CsvError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv(&mut w, rows)?;
    w.flush()?;
    Ok(())
}

/// Parse a metrics CSV produced by [`write_csv`].
pub fn read_csv<Rd: BufRead>(r: Rd) -> Result<Vec<EpisodeMetrics>, CsvError> {
    let mut lines = r.lines();
    let comment = lines.next().ok_or(CsvError::MissingComment)??;
    if comment.trim() != CSV_COMMENT {
        return Err(CsvError::WrongSchema(comment));
    }
    let header = lines
        .next()
        .ok_or_else(|| CsvError::BadHeader(String::new()))??;
    if header.trim() != CSV_HEADER {
        return Err(CsvError::BadHeader(header));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = EpisodeMetrics::from_csv_row(&line)
            .map_err(|msg| CsvError::BadRow { line: i + 3, msg })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_csv_file<P: AsRef<Path>>(path: P) -> Result<Vec<EpisodeMetrics>, CsvError> {
    read_csv(BufReader::new(File::open(path)?))
}

/// Mean and sample standard deviation of one metric across episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Stat {
        let n = values.clone().count();
        if n == 0 {
            return Stat { mean: 0.0, std: 0.0 };
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            let ss = values.map(|v| (v - mean) * (v - mean)).sum::<f64>();
            (ss / (n - 1) as f64).sqrt()
        };
        Stat { mean, std }
    }

    /// Standard error of the mean.
    pub fn sem(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.std / (n as f64).sqrt()
        }
    }
}

/// Column-wise mean ± std over a set of episodes, as the summary tables print.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub total_j: Stat,
    pub comp_j: Stat,
    pub tx_j: Stat,
    pub wasted_j: Stat,
    pub reward: Stat,
    pub p1: Stat,
    pub p2: Stat,
    pub rounds: Stat,
    pub mean_round_s: Stat,
    pub accesses: Stat,
    pub occ_s: Stat,
    pub unnec_accesses: Stat,
    pub unnec_occ_s: Stat,
}

impl Summary {
    pub fn from_rows(rows: &[EpisodeMetrics]) -> Summary {
        macro_rules! stat {
            ($field:ident) => {
                Stat::of(rows.iter().map(|r| r.$field as f64))
            };
        }
        Summary {
            n: rows.len(),
            total_j: stat!(total_j),
            comp_j: stat!(comp_j),
            tx_j: stat!(tx_j),
            wasted_j: stat!(wasted_j),
            reward: stat!(reward),
            p1: stat!(p1),
            p2: stat!(p2),
            rounds: stat!(rounds),
            mean_round_s: stat!(mean_round_s),
            accesses: stat!(accesses),
            occ_s: stat!(occ_s),
            unnec_accesses: stat!(unnec_accesses),
            unnec_occ_s: stat!(unnec_occ_s),
        }
    }
}

/// One averaging window of a training curve (for plotting).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMean {
    pub first_episode: u64,
    pub last_episode: u64,
    pub n: usize,
    pub total_j: f64,
    pub comp_j: f64,
    pub tx_j: f64,
    pub wasted_j: f64,
    pub reward: f64,
    pub p1: f64,
    pub p2: f64,
    pub rounds: f64,
    pub mean_round_s: f64,
    pub accesses: f64,
    pub occ_s: f64,
    pub unnec_accesses: f64,
    pub unnec_occ_s: f64,
}

/// Header of the reduced CSV emitted by `plot-data`.
pub const WINDOW_CSV_HEADER: &str = "first_episode,last_episode,n,total_J,comp_J,tx_J,wasted_J,reward,p1,p2,rounds,mean_round_s,accesses,occ_s,unnec_accesses,unnec_occ_s";

/// Reduce a training curve to per-window column means. The final window may
/// be shorter if `rows` is not a multiple of `window`.
pub fn window_means(rows: &[EpisodeMetrics], window: usize) -> Vec<WindowMean> {
    assert!(window > 0, "window must be positive");
    rows.chunks(window)
        .map(|chunk| {
            let n = chunk.len();
            let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| {
                chunk.iter().map(f).sum::<f64>() / n as f64
            };
            WindowMean {
                first_episode: chunk.first().map(|r| r.episode).unwrap_or(0),
                last_episode: chunk.last().map(|r| r.episode).unwrap_or(0),
                n,
                total_j: mean(&|r| r.total_j),
                comp_j: mean(&|r| r.comp_j),
                tx_j: mean(&|r| r.tx_j),
                wasted_j: mean(&|r| r.wasted_j),
                reward: mean(&|r| r.reward),
                p1: mean(&|r| r.p1 as f64),
                p2: mean(&|r| r.p2 as f64),
                rounds: mean(&|r| r.rounds as f64),
                mean_round_s: mean(&|r| r.mean_round_s),
                accesses: mean(&|r| r.accesses as f64),
                occ_s: mean(&|r| r.occ_s),
                unnec_accesses: mean(&|r| r.unnec_accesses as f64),
                unnec_occ_s: mean(&|r| r.unnec_occ_s),
            }
        })
        .collect()
}

pub fn write_window_csv<W: Write>(w: &mut W, windows: &[WindowMean]) -> Result<(), CsvError> {
    writeln!(w, "{CSV_COMMENT} window")?;
    writeln!(w, "{WINDOW_CSV_HEADER}")?;
    for win in windows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            win.first_episode,
            win.last_episode,
            win.n,
            win.total_j,
            win.comp_j,
            win.tx_j,
            win.wasted_j,
            win.reward,
            win.p1,
            win.p2,
            win.rounds,
            win.mean_round_s,
            win.accesses,
            win.occ_s,
            win.unnec_accesses,
            win.unnec_occ_s,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample_row(ep: u64, seed: f64) -> EpisodeMetrics {
        EpisodeMetrics {
            episode: ep,
            total_j: 10.0 + seed,
            comp_j: 7.0 + seed,
            tx_j: 3.0,
            wasted_j: 0.5 * seed,
            reward: -(10.0 + seed),
            p1: ep % 3,
            p2: ep % 2,
            rounds: 12 + ep,
            mean_round_s: 4.25,
            accesses: 5 * (12 + ep),
            occ_s: 1.5,
            unnec_accesses: 0,
            unnec_occ_s: 0.0,
        }
    }

    #[test]
    fn row_roundtrip_is_exact() {
        let row = EpisodeMetrics {
            episode: 42,
            total_j: 292.70000000000005,
            comp_j: 280.1,
            tx_j: 12.600000000000001,
            wasted_j: 1e-17,
            reward: -292.7,
            p1: 3,
            p2: 0,
            rounds: 17,
            mean_round_s: 8.461538461538462,
            accesses: 85,
            occ_s: 2.443759614910346,
            unnec_accesses: 1,
            unnec_occ_s: 0.1437596149103464,
        };
        let parsed = EpisodeMetrics::from_csv_row(&row.to_csv_row()).unwrap();
        assert_eq!(parsed, row);
    }

    #[test]
    fn csv_roundtrip_preserves_all_rows() {
        let rows: Vec<_> = (0..25).map(|i| sample_row(i, i as f64 * 0.37)).collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# flsched metrics csv v1\nepisode,total_J,"));
        let parsed = read_csv(buf.as_slice()).unwrap();
        assert_eq!(parsed, rows);
    }

    #[test]
    fn csv_rejects_nan() {
        let mut row = sample_row(0, 0.0);
        row.reward = f64::NAN;
        let mut buf = Vec::new();
        let err = write_csv(&mut buf, &[row]).unwrap_err();
        assert!(matches!(err, CsvError::NonFinite(0)));
    }

    #[test]
    fn csv_rejects_foreign_header() {
        let text = "# someone elses file\nepisode\n";
        let err = read_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(err, CsvError::WrongSchema(_)));
    }

    #[test]
    fn summary_matches_hand_computation() {
        let rows = vec![sample_row(0, 0.0), sample_row(1, 1.0), sample_row(2, 2.0)];
        let s = Summary::from_rows(&rows);
        assert_eq!(s.n, 3);
        // totals are 10, 11, 12
        assert_relative_eq!(s.total_j.mean, 11.0);
        assert_relative_eq!(s.total_j.std, 1.0);
        assert_relative_eq!(s.total_j.sem(3), 1.0 / 3f64.sqrt());
        // single value repeated → zero std
        assert_relative_eq!(s.mean_round_s.mean, 4.25);
        assert_relative_eq!(s.mean_round_s.std, 0.0);
    }

    #[test]
    fn summary_of_parsed_csv_equals_original() {
        let rows: Vec<_> = (0..50).map(|i| sample_row(i, (i as f64).sin())).collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let parsed = read_csv(buf.as_slice()).unwrap();
        let a = Summary::from_rows(&rows);
        let b = Summary::from_rows(&parsed);
        assert!((a.total_j.mean - b.total_j.mean).abs() < 1e-9);
        assert!((a.total_j.std - b.total_j.std).abs() < 1e-9);
        assert!((a.reward.mean - b.reward.mean).abs() < 1e-9);
        assert!((a.wasted_j.std - b.wasted_j.std).abs() < 1e-9);
    }

    #[test]
    fn window_means_cover_trailing_partial_window() {
        let rows: Vec<_> = (0..10).map(|i| sample_row(i, i as f64)).collect();
        let wins = window_means(&rows, 4);
        assert_eq!(wins.len(), 3);
        assert_eq!((wins[0].first_episode, wins[0].last_episode), (0, 3));
        assert_eq!(wins[2].n, 2);
        // totals in the first window are 10, 11, 12, 13
        assert_relative_eq!(wins[0].total_j, 11.5);
        // last window: totals 18, 19
        assert_relative_eq!(wins[2].total_j, 18.5);
    }

    #[test]
    fn accumulator_totals_split_delivered_and_wasted() {
        use crate::config::EnvConfig;
        use crate::env::Env;

        let cfg = EnvConfig::static_default(5);
        let mut env: Env<f64> = Env::new(cfg, 11).unwrap();
        env.reset(3);
        let mut acc = Accumulator::new(0);
        let full = vec![1.0; 10];
        loop {
            let out = env.step(&full).unwrap();
            acc.push(&out);
            if out.done {
                break;
            }
        }
        let m = acc.finish();
        assert_eq!(m.episode, 0);
        assert!(m.rounds >= 10 && m.rounds <= 22);
        assert_relative_eq!(m.total_j, m.comp_j + m.tx_j, max_relative = 1e-12);
        // full-capacity static episodes never miss the deadline
        assert_eq!(m.p1, 0);
        assert_eq!(m.wasted_j, 0.0);
        assert_eq!(m.accesses, 5 * m.rounds);
        assert_relative_eq!(m.reward, -m.total_j, max_relative = 1e-9);
        assert!(m.is_finite());
    }
}
