//! Command-line frontend: `sequence`, `analyze`, `simulate` and `run`.
//!
//! Exit status is 0 when at least one trial succeeded, 2 when every trial
//! failed and 1 on usage or configuration errors.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::exec::{self, ExecConfig, SuccessMode};
use crate::profile::{self, RuntimeDistribution, SampleSet};
use crate::sim::{self, Runtime, RuntimeSampler, SimOutcome, SlotPolicy, StrategyKind, StrategySpec};
use crate::stats::{self, Report, TrialOutcome};
use crate::ttl::{mix64, BinSampler, FixedTtl, LubySequence, RngStream, Ttl, TtlSource, Zeta2Sampler};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_ALL_FAILED: u8 = 2;

pub const DEFAULT_CAP: u64 = 3000;
pub const DEFAULT_CACHE_CAPACITY: usize = 4;

#[derive(Debug, Parser)]
#[command(name = "catalyst", version, about = "Restart strategies for randomized programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the TTLs a strategy hands out.
    Sequence(SequenceArgs),
    /// Profile and optimal threshold of an observed runtime sample.
    Analyze(AnalyzeArgs),
    /// Simulate a strategy against a runtime law.
    Simulate(SimulateArgs),
    /// Run a real program under a strategy.
    Run(RunArgs),
    /// Test program with a hidden runtime.
    #[command(hide = true)]
    Sleeper(SleeperArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyName {
    Single,
    Parallel,
    Fixed,
    Counter,
    Zeta2,
    Bin,
    Wide,
    CounterCache,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum PolicyName {
    Unit,
    #[default]
    Doubling,
}

#[derive(Debug, Clone, Args)]
pub struct StrategyArgs {
    #[arg(long, value_enum)]
    pub strategy: StrategyName,
    /// Threshold for `fixed`.
    #[arg(long)]
    pub ttl: Option<u64>,
    /// Cache size for `counter-cache`.
    #[arg(long, default_value_t = DEFAULT_CACHE_CAPACITY)]
    pub capacity: usize,
    /// Slot policy for `wide`.
    #[arg(long, value_enum, default_value_t)]
    pub policy: PolicyName,
}

impl StrategyArgs {
    pub fn kind(&self) -> Result<StrategyKind, String> {
        if self.ttl.is_some() && self.strategy != StrategyName::Fixed {
            return Err("--ttl only applies to the fixed strategy".into());
        }
        Ok(match self.strategy {
            StrategyName::Single => StrategyKind::Single,
            StrategyName::Parallel => StrategyKind::ParallelOr,
            StrategyName::Fixed => {
                let ttl = self.ttl.ok_or("the fixed strategy needs --ttl")?;
                StrategyKind::Fixed {
                    ttl: Ttl::new(ttl).map_err(|e| e.to_string())?,
                }
            }
            StrategyName::Counter => StrategyKind::Counter,
            StrategyName::Zeta2 => StrategyKind::RandomZeta2,
            StrategyName::Bin => StrategyKind::RandomCounter,
            StrategyName::Wide => StrategyKind::Wide {
                policy: match self.policy {
                    PolicyName::Unit => SlotPolicy::Unit,
                    PolicyName::Doubling => SlotPolicy::Doubling,
                },
            },
            StrategyName::CounterCache => StrategyKind::CounterCache {
                capacity: self.capacity,
            },
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct SequenceArgs {
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[arg(short = 'n', default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeInput {
    /// CSV with header `runtime_ticks,censored`.
    #[arg(long, required_unless_present = "dist", conflicts_with = "dist")]
    pub samples: Option<PathBuf>,
    /// Runtime law file.
    #[arg(long)]
    pub dist: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: AnalyzeInput,
    /// Also write the threshold table to DIR/thresholds.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BatchArgs {
    /// Workers per trial (default: three quarters of the hardware threads).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-trial time cap in ticks.
    #[arg(long, default_value_t = DEFAULT_CAP)]
    pub cap: u64,
    /// Write report.csv and trials.jsonl here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub dist: PathBuf,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[command(flatten)]
    pub batch: BatchArgs,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[command(flatten)]
    pub batch: BatchArgs,
    /// Seconds per tick.
    #[arg(long, default_value_t = 1.0)]
    pub tick: f64,
    /// Treat exit status 0 as success instead of the sentinel file.
    #[arg(long)]
    pub exit_code: bool,
    /// Root for per-run working directories.
    #[arg(long)]
    pub workdir: Option<PathBuf>,
    /// Delete working directories of failed trials too.
    #[arg(long)]
    pub discard_failed: bool,
    /// Trials executed concurrently.
    #[arg(long, default_value_t = 1)]
    pub parallel_trials: usize,
    /// Upper bound on suspended runs for `wide`.
    #[arg(long)]
    pub suspended_limit: Option<usize>,
    /// Program and arguments.
    #[arg(last = true, required = true)]
    pub command: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SleeperArgs {
    /// Law to draw the hidden runtime from.
    #[arg(long, required_unless_present = "hidden", conflicts_with = "hidden")]
    pub dist: Option<PathBuf>,
    /// Fixed hidden runtime in ticks.
    #[arg(long)]
    pub hidden: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub tick: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Profile(#[from] profile::ProfileError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    Exec(#[from] exec::ExecError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

type CliResult = Result<u8, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn execute<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
                return EXIT_ERROR;
            }
            let _ = write!(out, "{rendered}");
            return EXIT_OK;
        }
    };
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Sequence(a) => cmd_sequence(&a, out),
        Command::Analyze(a) => cmd_analyze(&a, out, err),
        Command::Simulate(a) => cmd_simulate(&a, out),
        Command::Run(a) => cmd_run(&a, out, err),
        Command::Sleeper(a) => cmd_sleeper(&a),
    }
}

pub fn cmd_sequence(args: &SequenceArgs, out: &mut dyn Write) -> CliResult {
    if args.n == 0 {
        return Err(CliError::Usage("-n must be at least 1".into()));
    }
    let kind = args.strategy.kind().map_err(CliError::Usage)?;
    let rng = RngStream::derive(args.seed, 0);
    let mut source: Box<dyn TtlSource> = match kind {
        StrategyKind::Counter | StrategyKind::CounterCache { .. } => Box::new(LubySequence::new()),
        StrategyKind::Fixed { ttl } => Box::new(FixedTtl(ttl)),
        StrategyKind::RandomZeta2 => Box::new(Zeta2Sampler(rng)),
        StrategyKind::RandomCounter => Box::new(BinSampler(rng)),
        other => {
            return Err(CliError::Usage(format!(
                "{} does not hand out a TTL sequence",
                other.name()
            )))
        }
    };
    for ttl in source.take_ttls(args.n).map_err(sim::SimError::from)? {
        writeln!(out, "{ttl}")?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let dist = match (&args.input.samples, &args.input.dist) {
        (Some(path), _) => {
            let samples = SampleSet::from_csv(File::open(path)?)?;
            if let Some(warning) = samples.censoring_warning() {
                writeln!(err, "warning: {warning}")?;
            }
            profile::empirical_distribution(&samples)?
        }
        (None, Some(path)) => RuntimeDistribution::from_path(path)?,
        (None, None) => return Err(CliError::Usage("pass --samples or --dist".into())),
    };
    let p = profile::compute_profile(&dist)?;
    writeln!(out, "profile: 1/p = {:.4}, t* = {}", p.inv_p, p.t_star)?;
    writeln!(out, "work: {:.4}", p.work)?;
    writeln!(out, "optimal threshold: {}", p.opt_threshold)?;
    writeln!(out, "expected runtime at optimum: {:.4}", p.opt_expected)?;
    writeln!(out)?;
    let table = profile::threshold_table(&dist);
    write_threshold_csv(&table, &mut *out)?;
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        write_threshold_csv(&table, File::create(dir.join("thresholds.csv"))?)?;
    }
    Ok(EXIT_OK)
}

fn write_threshold_csv(rows: &[profile::ThresholdRow], w: impl Write) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "f", "r"])?;
    for row in rows {
        wtr.write_record([row.t.to_string(), format!("{:.4}", row.f), format!("{:.4}", row.r)])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SimRecord<'a> {
    trial: usize,
    strategy: &'a StrategySpec,
    #[serde(flatten)]
    outcome: &'a SimOutcome,
}

fn resolve_workers(requested: Option<usize>, kind: StrategyKind, simulated: bool) -> usize {
    match (requested, kind) {
        (Some(w), _) => w,
        (None, StrategyKind::Single) => 1,
        (None, k) if simulated && k.pauses() => 1,
        (None, _) => exec::default_workers(),
    }
}

fn exit_for(report: &Report) -> u8 {
    if report.successes > 0 {
        EXIT_OK
    } else {
        EXIT_ALL_FAILED
    }
}

fn write_outputs(
    report: &Report,
    out_dir: Option<&Path>,
    out: &mut dyn Write,
    write_log: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
) -> Result<(), CliError> {
    stats::write_csv(std::slice::from_ref(report), &mut *out)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        stats::write_csv(std::slice::from_ref(report), File::create(dir.join("report.csv"))?)?;
        let mut log = BufWriter::new(File::create(dir.join("trials.jsonl"))?);
        write_log(&mut log)?;
        log.flush()?;
    }
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> CliResult {
    let kind = args.strategy.kind().map_err(CliError::Usage)?;
    let dist = RuntimeDistribution::from_path(&args.dist)?;
    let b = &args.batch;
    let spec = StrategySpec::new(kind, resolve_workers(b.workers, kind, true))?;
    let outcomes = sim::run_trials(&dist, spec, b.cap, b.trials, b.seed)?;
    let report = stats::summarize_sim(spec.label(), &outcomes);
    write_outputs(&report, b.out.as_deref(), out, |log| {
        for (trial, outcome) in outcomes.iter().enumerate() {
            serde_json::to_writer(&mut *log, &SimRecord { trial, strategy: &spec, outcome })?;
            log.write_all(b"\n")?;
        }
        Ok(())
    })?;
    Ok(exit_for(&report))
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let kind = args.strategy.kind().map_err(CliError::Usage)?;
    if !(args.tick.is_finite() && args.tick > 0.0) {
        return Err(CliError::Usage("--tick must be a positive number of seconds".into()));
    }
    let b = &args.batch;
    let spec = StrategySpec::new(kind, resolve_workers(b.workers, kind, false))?;
    let mut config = ExecConfig {
        tick: Duration::from_secs_f64(args.tick),
        success_mode: if args.exit_code {
            SuccessMode::ExitCode
        } else {
            SuccessMode::SentinelFile
        },
        keep_failed: !args.discard_failed,
        suspended_limit: args.suspended_limit,
        parallel_trials: args.parallel_trials.max(1),
        ..ExecConfig::default()
    };
    if let Some(root) = &args.workdir {
        config.workdir_root = root.clone();
    }
    let records = exec::run_experiment(&args.command, spec, b.cap, b.trials, b.seed, &config)?;
    for r in &records {
        if let Some(e) = &r.error {
            writeln!(err, "trial {}: {e}", r.trial)?;
        }
    }
    let outcomes: Vec<TrialOutcome> = records.iter().map(TrialOutcome::from).collect();
    let report = stats::summarize(spec.label(), &outcomes);
    write_outputs(&report, b.out.as_deref(), out, |log| {
        for r in &records {
            serde_json::to_writer(&mut *log, r)?;
            log.write_all(b"\n")?;
        }
        Ok(())
    })?;
    Ok(exit_for(&report))
}

/// Samples a hidden runtime, stays busy for that many ticks of unsuspended
/// time, then writes the success file. The draw mixes `--seed` with the
/// per-run id so every run of an experiment gets its own runtime.
pub fn cmd_sleeper(args: &SleeperArgs) -> CliResult {
    if !(args.tick.is_finite() && args.tick > 0.0) {
        return Err(CliError::Usage("--tick must be a positive number of seconds".into()));
    }
    let run_id: u64 = std::env::var(exec::ENV_RUN_ID)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    let runtime = match (args.hidden, &args.dist) {
        (Some(h), _) => Runtime::Finite(h),
        (None, Some(path)) => {
            let dist = RuntimeDistribution::from_path(path)?;
            let mut rng = RngStream::new(mix64(args.seed) ^ run_id);
            RuntimeSampler::new(&dist).sample(&mut rng)
        }
        (None, None) => return Err(CliError::Usage("pass --dist or --hidden".into())),
    };
    let success_file = std::env::var_os(exec::ENV_SUCCESS_FILE)
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Usage(format!("{} is not set", exec::ENV_SUCCESS_FILE)))?;
    let Runtime::Finite(hidden) = runtime else {
        loop {
            thread::sleep(Duration::from_secs(3600));
        }
    };
    // half a tick early so that process start-up stays inside the last tick
    let target = Duration::from_secs_f64((hidden as f64 - 0.5).max(0.0) * args.tick);
    busy_for(target, Duration::from_secs_f64(args.tick / 50.0));
    fs::write(&success_file, format!("{hidden}\n"))?;
    Ok(EXIT_OK)
}

/// Sleeps in short steps, crediting at most two steps per wake-up so time
/// spent stopped is not counted.
fn busy_for(target: Duration, step: Duration) {
    let step = step.clamp(Duration::from_millis(1), Duration::from_millis(50));
    let mut credited = Duration::ZERO;
    let mut last = Instant::now();
    while credited < target {
        thread::sleep(step.min(target - credited));
        let now = Instant::now();
        credited += (now - last).min(2 * step);
        last = now;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (u8, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = execute(
            std::iter::once("catalyst").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn counter_sequence() {
        let (code, out, _) = run(&["sequence", "--strategy", "counter", "-n", "8"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out.split_whitespace().collect::<Vec<_>>(), ["1", "1", "2", "1", "1", "2", "4", "1"]);
    }

    #[test]
    fn fixed_sequence() {
        let (code, out, _) = run(&["sequence", "--strategy", "fixed", "--ttl", "5", "-n", "3"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out, "5\n5\n5\n");
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(&["sequence", "--strategy", "fixed"]).0, EXIT_ERROR);
        assert_eq!(run(&["sequence", "--strategy", "nope"]).0, EXIT_ERROR);
        assert_eq!(run(&["sequence", "--strategy", "counter", "-n", "0"]).0, EXIT_ERROR);
        assert_eq!(run(&["sequence", "--strategy", "single"]).0, EXIT_ERROR);
        assert_eq!(run(&["sequence", "--strategy", "counter", "--ttl", "3"]).0, EXIT_ERROR);
    }

    #[test]
    fn active_time_excludes_long_pauses() {
        let start = Instant::now();
        busy_for(Duration::from_millis(30), Duration::from_millis(2));
        assert!(start.elapsed() >= Duration::from_millis(30));
    }
}
