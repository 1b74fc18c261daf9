//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use beamform::gradcheck;
use beamform::ProjectionMode;
use clap::{Args, Parser, Subcommand};

use crate::config::parse_config;
use crate::error::{BenchError, Result};
use crate::experiment::{run_experiment, Algo, ExperimentSpec};
use crate::summary::{format_summary, summarize};
use crate::table::{read_rows, write_rows};

#[derive(Debug, Parser)]
#[command(name = "beamform", version, about = "WMMSE and meta-learned beamforming experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run solvers over an SNR sweep and write per-iteration rows as CSV.
    Run(RunArgs),
    /// Summarize a result CSV.
    Summarize {
        /// Result CSV written by `run`.
        input: PathBuf,
    },
    /// Run the finite-difference gradient suites.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Comma-separated SNR values in dB.
    #[arg(long)]
    pub snr_db: Option<String>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// wmmse, mlbf, or a comma list of both.
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub outer_steps: Option<usize>,
    /// Inner steps for every block.
    #[arg(long)]
    pub inner_steps: Option<usize>,
    /// Outer steps per meta-update window.
    #[arg(long)]
    pub t_u: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Adam learning rate for all three learners.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Power penalty in the MLBF loss.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub antennas: Option<usize>,
    #[arg(long)]
    pub users: Option<usize>,
    /// Where MLBF projects V: `step` (every inner step) or `outer` (after the inner loop).
    #[arg(long)]
    pub power_mode: Option<String>,
    /// 1000 channels, 10 restarts, T = 500.
    #[arg(long)]
    pub paper_scale: bool,
    /// Write 0 for wall_ms so output is byte-reproducible.
    #[arg(long)]
    pub no_timing: bool,
    /// key = value file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

const KEYS: [&str; 17] = [
    "snr-db", "channels", "restarts", "algo", "seed", "out", "outer-steps", "inner-steps", "t-u", "hidden", "lr",
    "mu", "antennas", "users", "power-mode", "paper-scale", "no-timing",
];

impl RunArgs {
    fn flag_values(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("snr-db", self.snr_db.clone());
        put("channels", self.channels.map(|v| v.to_string()));
        put("restarts", self.restarts.map(|v| v.to_string()));
        put("algo", self.algo.clone());
        put("seed", self.seed.map(|v| v.to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put("outer-steps", self.outer_steps.map(|v| v.to_string()));
        put("inner-steps", self.inner_steps.map(|v| v.to_string()));
        put("t-u", self.t_u.map(|v| v.to_string()));
        put("hidden", self.hidden.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("mu", self.mu.map(|v| v.to_string()));
        put("antennas", self.antennas.map(|v| v.to_string()));
        put("users", self.users.map(|v| v.to_string()));
        put("power-mode", self.power_mode.clone());
        put("paper-scale", self.paper_scale.then(|| "true".to_string()));
        put("no-timing", self.no_timing.then(|| "true".to_string()));
        m
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| BenchError::Usage(format!("invalid value '{v}' for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(BenchError::Usage(format!("invalid value '{v}' for {key}"))),
    }
}

/// Experiment spec and output path from merged settings (flags over config
/// over defaults).
pub fn resolve(settings: &BTreeMap<String, String>) -> Result<(ExperimentSpec, Option<PathBuf>)> {
    if let Some(k) = settings.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(BenchError::Usage(format!("unknown setting '{k}'")));
    }
    let paper = match settings.get("paper-scale") {
        Some(v) => parse_bool("paper-scale", v)?,
        None => false,
    };
    let mut spec = if paper { ExperimentSpec::default() } else { ExperimentSpec::desk() };
    let mut out = None;
    for (k, v) in settings {
        match k.as_str() {
            "snr-db" => {
                spec.snr_db_list = v.split(',').map(|s| parse::<f64>(k, s)).collect::<Result<_>>()?;
            }
            "channels" => spec.n_channels = parse(k, v)?,
            "restarts" => spec.n_restarts = parse(k, v)?,
            "algo" => {
                spec.algos = if v.trim() == "both" {
                    vec![Algo::Wmmse, Algo::Mlbf]
                } else {
                    v.split(',').map(str::parse).collect::<Result<_>>()?
                };
                spec.algos.sort();
                spec.algos.dedup();
            }
            "seed" => spec.seed = parse(k, v)?,
            "out" => out = Some(PathBuf::from(v)),
            "outer-steps" => spec.mlbf.outer_steps = parse(k, v)?,
            "inner-steps" => {
                let n = parse(k, v)?;
                spec.mlbf.inner_u = n;
                spec.mlbf.inner_w = n;
                spec.mlbf.inner_v = n;
            }
            "t-u" => spec.mlbf.update_interval = parse(k, v)?,
            "hidden" => spec.mlbf.hidden = parse(k, v)?,
            "lr" => {
                let lr = parse(k, v)?;
                spec.mlbf.lr_u = lr;
                spec.mlbf.lr_w = lr;
                spec.mlbf.lr_v = lr;
            }
            "mu" => spec.mlbf.mu = parse(k, v)?,
            "antennas" => spec.antennas = parse(k, v)?,
            "users" => spec.users = parse(k, v)?,
            "power-mode" => {
                spec.mlbf.projection = match v.trim() {
                    "step" => ProjectionMode::EveryInnerStep,
                    "outer" => ProjectionMode::AfterInnerLoop,
                    other => return Err(BenchError::Usage(format!("power-mode must be step or outer, got '{other}'"))),
                }
            }
            "no-timing" => spec.record_timing = !parse_bool(k, v)?,
            "paper-scale" => {}
            _ => unreachable!("checked above"),
        }
    }
    spec.validate()?;
    Ok((spec, out))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut settings = match &args.config {
        Some(p) => parse_config(&std::fs::read_to_string(p).map_err(io_err(p))?)?,
        None => BTreeMap::new(),
    };
    settings.extend(args.flag_values());
    let (spec, out) = resolve(&settings)?;
    let output = run_experiment(&spec)?;
    match &out {
        Some(p) => {
            let f = File::create(p).map_err(io_err(p))?;
            write_rows(BufWriter::new(f), &output.rows)?;
        }
        None => write_rows(std::io::stdout().lock(), &output.rows)?,
    }
    for f in &output.failures {
        eprintln!(
            "warning: {} failed at snr {} dB, channel {}, restart {}: {}",
            f.algo, f.snr_db, f.channel_id, f.restart_id, f.message
        );
    }
    if !output.rows.is_empty() {
        eprint!("{}", format_summary(&summarize(&output.rows)?));
    }
    if !output.failures.is_empty() {
        return Err(BenchError::SolvesFailed {
            failed: output.failures.len(),
            total: output.solves,
        });
    }
    Ok(())
}

fn cmd_summarize(input: &Path) -> Result<()> {
    let f = File::open(input).map_err(io_err(input))?;
    let rows = read_rows(f)?;
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(format_summary(&summarize(&rows)?).as_bytes())
        .map_err(io_err(Path::new("<stdout>")))
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let reports = gradcheck::run_all(seed)?;
    let mut failed = 0;
    for r in &reports {
        println!("{r}");
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(BenchError::SolvesFailed {
            failed,
            total: reports.len(),
        });
    }
    Ok(())
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Summarize { input } => cmd_summarize(input),
        Command::Gradcheck { seed } => cmd_gradcheck(*seed),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
