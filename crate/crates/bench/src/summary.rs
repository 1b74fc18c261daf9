//! Aggregation: per-solve score, best of restarts per channel, mean over
//! channels.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{BenchError, Result};
use crate::experiment::{Algo, ResultRow};

/// An SNR value usable as an ordered map key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snr(pub f64);

impl Eq for Snr {}

impl PartialOrd for Snr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Snr {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    /// Converged WSR for WMMSE, best recorded WSR for MLBF.
    pub score: f64,
    pub iters: usize,
    pub wall_ms: f64,
}

/// `(algo, snr) → channel → restart → stats`.
pub type SolveTable = BTreeMap<(Algo, Snr), BTreeMap<usize, BTreeMap<usize, SolveStats>>>;

pub fn solve_table(rows: &[ResultRow]) -> SolveTable {
    let mut grouped: BTreeMap<(Algo, Snr, usize, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        grouped
            .entry((r.algo, Snr(r.snr_db), r.channel_id, r.restart_id))
            .or_default()
            .push(r);
    }
    let mut table = SolveTable::new();
    for ((algo, snr, channel, restart), mut solve) in grouped {
        solve.sort_by_key(|r| r.iter);
        let score = match algo {
            Algo::Wmmse => solve.last().map_or(f64::NAN, |r| r.wsr),
            Algo::Mlbf => solve.iter().map(|r| r.wsr).fold(f64::NEG_INFINITY, f64::max),
        };
        let stats = SolveStats {
            score,
            iters: solve.len(),
            wall_ms: solve[0].wall_ms,
        };
        table
            .entry((algo, snr))
            .or_default()
            .entry(channel)
            .or_default()
            .insert(restart, stats);
    }
    table
}

/// Best-of-restarts score per channel, for each `(algo, snr)`.
pub fn channel_scores(rows: &[ResultRow]) -> BTreeMap<(Algo, Snr), BTreeMap<usize, f64>> {
    solve_table(rows)
        .into_iter()
        .map(|(key, channels)| {
            let best = channels
                .into_iter()
                .map(|(c, restarts)| {
                    let b = restarts.values().map(|s| s.score).fold(f64::NEG_INFINITY, f64::max);
                    (c, b)
                })
                .collect();
            (key, best)
        })
        .collect()
}

/// Sample mean and standard error of the mean (zero for a single value).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Ratio of means `Σa / Σb` over paired samples with its delta-method
/// standard error.
pub fn ratio_of_means(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let ratio = ma / mb;
    let resid: Vec<f64> = pairs.iter().map(|(a, b)| a - ratio * b).collect();
    let (_, se) = mean_stderr(&resid);
    (ratio, se / mb.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub snr_db: f64,
    pub algo: Algo,
    pub channels: usize,
    pub mean_wsr: f64,
    pub stderr_wsr: f64,
    pub mean_iters: f64,
    pub mean_wall_ms: f64,
}

/// Per `(snr, algo)`: mean and standard error over channels of the
/// best-of-restarts WSR, mean iterations and mean wall time per solve.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(BenchError::Usage("cannot summarize an empty result table".into()));
    }
    let table = solve_table(rows);
    let mut out: Vec<SummaryRow> = table
        .iter()
        .map(|((algo, snr), channels)| {
            let best: Vec<f64> = channels
                .values()
                .map(|r| r.values().map(|s| s.score).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let solves: Vec<&SolveStats> = channels.values().flat_map(|r| r.values()).collect();
            let n = solves.len() as f64;
            let (mean_wsr, stderr_wsr) = mean_stderr(&best);
            SummaryRow {
                snr_db: snr.0,
                algo: *algo,
                channels: channels.len(),
                mean_wsr,
                stderr_wsr,
                mean_iters: solves.iter().map(|s| s.iters as f64).sum::<f64>() / n,
                mean_wall_ms: solves.iter().map(|s| s.wall_ms).sum::<f64>() / n,
            }
        })
        .collect();
    out.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db).then(a.algo.cmp(&b.algo)));
    Ok(out)
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:>8} {:>6} {:>8} {:>10} {:>9} {:>9} {:>11}\n",
        "snr_db", "algo", "channels", "mean_wsr", "stderr", "iters", "wall_ms"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>8.1} {:>6} {:>8} {:>10.4} {:>9.4} {:>9.1} {:>11.1}\n",
            r.snr_db, r.algo, r.channels, r.mean_wsr, r.stderr_wsr, r.mean_iters, r.mean_wall_ms
        ));
    }
    s
}
