//! Multi-restart experiment protocol.
//!
//! For every SNR, channel and restart, both algorithms start from the same
//! random feasible beamformer. Channels are drawn once and reused across
//! SNRs; the initial beamformer direction is shared too, rescaled to each
//! SNR's power budget.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use beamform::channel::{generate_channels, scale_to_power, SystemConfig};
use beamform::meta::{solve_mlbf, MlbfConfig};
use beamform::rng::{derive_stream, streams, GaussianStream};
use beamform::wmmse::{solve_wmmse, Trajectory, WmmseConfig};
use beamform::CMat;
use rayon::prelude::*;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algo {
    Wmmse,
    Mlbf,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Wmmse => "wmmse",
            Algo::Mlbf => "mlbf",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wmmse" => Ok(Algo::Wmmse),
            "mlbf" => Ok(Algo::Mlbf),
            other => Err(BenchError::Usage(format!("unknown algorithm '{other}' (expected wmmse or mlbf)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub snr_db_list: Vec<f64>,
    pub n_channels: usize,
    pub n_restarts: usize,
    pub algos: Vec<Algo>,
    pub seed: u64,
    pub antennas: usize,
    pub users: usize,
    /// Per-user weights; `None` means all ones.
    pub alpha: Option<Vec<f64>>,
    pub wmmse: WmmseConfig,
    pub mlbf: MlbfConfig,
    /// When false every `wall_ms` is written as 0, making output byte-stable.
    pub record_timing: bool,
}

impl Default for ExperimentSpec {
    /// The full protocol: 1000 channels, 10 restarts, T = 500.
    fn default() -> Self {
        Self {
            snr_db_list: vec![10.0, 20.0, 30.0, 40.0],
            n_channels: 1000,
            n_restarts: 10,
            algos: vec![Algo::Wmmse, Algo::Mlbf],
            seed: 0,
            antennas: 4,
            users: 4,
            alpha: None,
            wmmse: WmmseConfig::default(),
            mlbf: MlbfConfig::default(),
            record_timing: true,
        }
    }
}

impl ExperimentSpec {
    /// Settings small enough for a workstation: 20 channels, 3 restarts,
    /// T = 200.
    pub fn desk() -> Self {
        Self {
            n_channels: 20,
            n_restarts: 3,
            mlbf: MlbfConfig {
                outer_steps: 200,
                ..MlbfConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(BenchError::Usage(m));
        if self.snr_db_list.is_empty() {
            return usage("at least one SNR value is required".into());
        }
        if let Some(bad) = self.snr_db_list.iter().find(|s| !s.is_finite()) {
            return usage(format!("SNR values must be finite, got {bad}"));
        }
        if self.n_channels == 0 || self.n_restarts == 0 {
            return usage("channels and restarts must be at least 1".into());
        }
        if self.algos.is_empty() {
            return usage("at least one algorithm is required".into());
        }
        for snr in &self.snr_db_list {
            self.system(*snr).map_err(|e| BenchError::Usage(e.to_string()))?;
        }
        self.wmmse.validate().map_err(|e| BenchError::Usage(e.to_string()))?;
        if self.algos.contains(&Algo::Mlbf) {
            self.mlbf.validate().map_err(|e| BenchError::Usage(e.to_string()))?;
        }
        Ok(())
    }

    pub fn system(&self, snr_db: f64) -> beamform::Result<SystemConfig> {
        match &self.alpha {
            Some(a) => SystemConfig::with_weights(self.antennas, self.users, snr_db, a.clone()),
            None => SystemConfig::from_snr_db(self.antennas, self.users, snr_db),
        }
    }

    /// Random initial beamformer for `(channel, restart)`, scaled to the
    /// full power budget.
    pub fn initial_beamformer(&self, cfg: &SystemConfig, channel: usize, restart: usize) -> CMat {
        let stream = derive_stream(streams::INIT, &[channel as u64, restart as u64]);
        let mut rng = GaussianStream::new(self.seed, stream);
        let v = CMat::random_normal(self.users, self.antennas, &mut rng);
        scale_to_power(&v, cfg.power())
    }

    /// Learner seed for one MLBF solve.
    pub fn learner_seed(&self, snr_index: usize, channel: usize, restart: usize) -> u64 {
        derive_stream(self.seed, &[snr_index as u64, channel as u64, restart as u64])
    }
}

/// One recorded iteration of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub snr_db: f64,
    pub channel_id: usize,
    pub restart_id: usize,
    pub algo: Algo,
    /// 1-based iteration (outer step for MLBF).
    pub iter: usize,
    pub wsr: f64,
    pub power: f64,
    /// Wall time of the whole solve, repeated on each of its rows.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveFailure {
    pub snr_db: f64,
    pub channel_id: usize,
    pub restart_id: usize,
    pub algo: Algo,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<SolveFailure>,
    pub solves: usize,
}

#[derive(Debug, Clone, Copy)]
struct Job {
    snr_index: usize,
    channel: usize,
    restart: usize,
    algo: Algo,
}

fn run_job(spec: &ExperimentSpec, channels: &[CMat], job: Job) -> std::result::Result<Vec<ResultRow>, SolveFailure> {
    let snr_db = spec.snr_db_list[job.snr_index];
    let fail = |e: beamform::Error| SolveFailure {
        snr_db,
        channel_id: job.channel,
        restart_id: job.restart,
        algo: job.algo,
        message: e.to_string(),
    };
    let cfg = spec.system(snr_db).map_err(fail)?;
    let h = &channels[job.channel];
    let v0 = spec.initial_beamformer(&cfg, job.channel, job.restart);
    let start = Instant::now();
    let traj: Trajectory = match job.algo {
        Algo::Wmmse => solve_wmmse(h, &v0, &cfg, &spec.wmmse).map_err(fail)?.1,
        Algo::Mlbf => {
            let seed = spec.learner_seed(job.snr_index, job.channel, job.restart);
            solve_mlbf(h, &v0, &cfg, &spec.mlbf, seed).map_err(fail)?.1
        }
    };
    let wall_ms = if spec.record_timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    Ok(traj
        .wsr
        .iter()
        .zip(&traj.power)
        .enumerate()
        .map(|(k, (&wsr, &power))| ResultRow {
            snr_db,
            channel_id: job.channel,
            restart_id: job.restart,
            algo: job.algo,
            iter: k + 1,
            wsr,
            power,
            wall_ms,
        })
        .collect())
}

/// Worker count from `BEAMFORM_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("BEAMFORM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
}

/// Runs every `(snr, channel, restart, algo)` solve in parallel. Rows come
/// back ordered by that key regardless of scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    run_experiment_with_threads(spec, thread_cap())
}

/// [`run_experiment`] with an explicit worker count (`None`: one per core).
pub fn run_experiment_with_threads(spec: &ExperimentSpec, threads: Option<usize>) -> Result<ExperimentOutput> {
    spec.validate()?;
    let shape_cfg = spec.system(spec.snr_db_list[0])?;
    let channels = generate_channels(&shape_cfg, spec.n_channels, spec.seed).realizations;

    let mut jobs = Vec::new();
    for snr_index in 0..spec.snr_db_list.len() {
        for channel in 0..spec.n_channels {
            for restart in 0..spec.n_restarts {
                for &algo in &spec.algos {
                    jobs.push(Job { snr_index, channel, restart, algo });
                }
            }
        }
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| BenchError::Usage(format!("cannot start worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| jobs.par_iter().map(|job| run_job(spec, &channels, *job)).collect());

    let mut out = ExperimentOutput {
        solves: jobs.len(),
        ..ExperimentOutput::default()
    };
    for r in results {
        match r {
            Ok(rows) => out.rows.extend(rows),
            Err(f) => out.failures.push(f),
        }
    }
    Ok(out)
}
