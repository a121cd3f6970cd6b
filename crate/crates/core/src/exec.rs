//! Runs real OS processes under a restart strategy.
//!
//! Each run lives in its own process group and its own working directory.
//! The wrapped program signals success by writing to the file named in
//! `CATALYST_SUCCESS_FILE` (or, in exit-code mode, by exiting with status 0).
//! Expired runs are killed (stop/start strategies) or suspended with
//! `SIGSTOP` and later resumed with `SIGCONT` (wide search, counter + cache).
//!
//! Time is accounted in ticks of wall-clock granted to a run. A worker's lane
//! clock is the sum of ticks granted to its runs; a trial succeeds at the lane
//! clock of the worker that saw the first success.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fs::{self, File};
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::os::unix::process::CommandExt as _;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use nix::errno::Errno;
use nix::sys::signal::{killpg, Signal};
use nix::unistd::Pid;
use serde::Serialize;
use thiserror::Error;

use crate::sim::{RunCache, SlotPolicy, StrategyKind, StrategySpec};
use crate::ttl::{mix64, BinSampler, LubySequence, RngStream, Ttl, TtlError, TtlSource, Zeta2Sampler};

pub const ENV_WORKDIR: &str = "CATALYST_WORKDIR";
pub const ENV_SUCCESS_FILE: &str = "CATALYST_SUCCESS_FILE";
/// Per-run identifier, distinct for every spawned run of an experiment.
pub const ENV_RUN_ID: &str = "CATALYST_RUN_ID";

const SUCCESS_FILE_NAME: &str = "catalyst.success";

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("failed to spawn {program:?}: {source}")]
    Spawn { program: String, source: io::Error },
    #[error("failed to signal process group {pgid}: {errno}")]
    Signal { pgid: i32, errno: Errno },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Ttl(#[from] TtlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuccessMode {
    /// The run wrote the sentinel file.
    #[default]
    SentinelFile,
    /// The run exited with status 0.
    ExitCode,
}

#[derive(Debug, Clone)]
pub struct ExecConfig {
    /// Wall-clock length of one tick.
    pub tick: Duration,
    /// Directory under which per-run working directories are created.
    pub workdir_root: PathBuf,
    pub success_mode: SuccessMode,
    /// Keep working directories of failed trials.
    pub keep_failed: bool,
    /// Grace between SIGTERM and SIGKILL.
    pub kill_grace: Duration,
    /// Upper bound on suspended wide-search runs; `None` means four per
    /// worker.
    pub suspended_limit: Option<usize>,
    /// Trials executed concurrently, each with its own worker pool.
    pub parallel_trials: usize,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            tick: Duration::from_secs(1),
            workdir_root: std::env::temp_dir().join("catalyst"),
            success_mode: SuccessMode::SentinelFile,
            keep_failed: true,
            kill_grace: Duration::from_secs(2),
            suspended_limit: None,
            parallel_trials: 1,
        }
    }
}

impl ExecConfig {
    /// Polling interval: 100 ms, or a tenth of a tick when ticks are short.
    pub fn poll_interval(&self) -> Duration {
        (self.tick / 10).clamp(Duration::from_millis(1), Duration::from_millis(100))
    }
}

/// `⌊¾ · available parallelism⌋`, at least one.
pub fn default_workers() -> usize {
    let threads = thread::available_parallelism().map_or(1, |n| n.get());
    (threads * 3 / 4).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Suspended,
    Succeeded,
    Killed,
}

/// Accumulated granted time of a run, for cache and agenda ordering.
pub trait Accumulated {
    fn accumulated(&self) -> u64;
}

/// A spawned run in its own process group.
#[derive(Debug)]
pub struct ManagedRun {
    child: Child,
    pgid: Pid,
    accumulated: u64,
    status: RunStatus,
    workdir: PathBuf,
    success_file: PathBuf,
    exit: Option<ExitStatus>,
    kill_grace: Duration,
}

impl Accumulated for ManagedRun {
    fn accumulated(&self) -> u64 {
        self.accumulated
    }
}

impl ManagedRun {
    pub fn pgid(&self) -> i32 {
        self.pgid.as_raw()
    }

    pub fn status(&self) -> RunStatus {
        self.status
    }

    pub fn accumulated_ticks(&self) -> u64 {
        self.accumulated
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn success_file(&self) -> &Path {
        &self.success_file
    }

    fn signal(&self, sig: Signal) -> Result<(), ExecError> {
        match killpg(self.pgid, sig) {
            Ok(()) | Err(Errno::ESRCH) => Ok(()),
            Err(errno) => Err(ExecError::Signal {
                pgid: self.pgid.as_raw(),
                errno,
            }),
        }
    }

    fn poll_exit(&mut self) -> io::Result<Option<ExitStatus>> {
        if self.exit.is_none() {
            self.exit = self.child.try_wait()?;
        }
        Ok(self.exit)
    }

    pub fn suspend(&mut self) -> Result<(), ExecError> {
        if self.status == RunStatus::Running {
            self.signal(Signal::SIGSTOP)?;
            self.status = RunStatus::Suspended;
        }
        Ok(())
    }

    pub fn resume(&mut self) -> Result<(), ExecError> {
        if self.status == RunStatus::Suspended {
            self.signal(Signal::SIGCONT)?;
            self.status = RunStatus::Running;
        }
        Ok(())
    }

    /// Terminates the whole process group: SIGTERM (plus SIGCONT so stopped
    /// members can act on it), then SIGKILL after the grace period.
    pub fn terminate(&mut self) -> Result<(), ExecError> {
        let first = self.signal(Signal::SIGTERM);
        let _ = self.signal(Signal::SIGCONT);
        let deadline = Instant::now() + self.kill_grace;
        while self.poll_exit()?.is_none() && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(2));
        }
        self.signal(Signal::SIGKILL)?;
        if self.exit.is_none() {
            self.exit = Some(self.child.wait()?);
        }
        if self.status != RunStatus::Succeeded {
            self.status = RunStatus::Killed;
        }
        first
    }

    fn is_finished(&self) -> bool {
        matches!(self.status, RunStatus::Succeeded | RunStatus::Killed) && self.exit.is_some()
    }
}

impl Drop for ManagedRun {
    fn drop(&mut self) {
        if !self.is_finished() {
            let _ = killpg(self.pgid, Signal::SIGKILL);
            let _ = self.child.wait();
        }
    }
}

/// Starts `command` in a fresh process group with `workdir` (created here,
/// must not exist yet) as its working directory.
pub fn spawn_run(command: &[String], workdir: &Path, run_id: u64) -> Result<ManagedRun, ExecError> {
    spawn_run_with(command, workdir, run_id, &ExecConfig::default())
}

pub fn spawn_run_with(
    command: &[String],
    workdir: &Path,
    run_id: u64,
    config: &ExecConfig,
) -> Result<ManagedRun, ExecError> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| ExecError::Contract("empty command".into()))?;
    fs::create_dir_all(workdir.parent().unwrap_or(Path::new(".")))?;
    fs::create_dir(workdir)?;
    let workdir = workdir.canonicalize()?;
    let success_file = workdir.join(SUCCESS_FILE_NAME);
    let child = Command::new(program)
        .args(args)
        .current_dir(&workdir)
        .env(ENV_WORKDIR, &workdir)
        .env(ENV_SUCCESS_FILE, &success_file)
        .env(ENV_RUN_ID, run_id.to_string())
        .stdin(Stdio::null())
        .stdout(File::create(workdir.join("stdout.log"))?)
        .stderr(File::create(workdir.join("stderr.log"))?)
        .process_group(0)
        .spawn()
        .map_err(|source| ExecError::Spawn {
            program: program.clone(),
            source,
        })?;
    let pgid = Pid::from_raw(child.id() as i32);
    Ok(ManagedRun {
        child,
        pgid,
        accumulated: 0,
        status: RunStatus::Running,
        workdir,
        success_file,
        exit: None,
        kill_grace: config.kill_grace,
    })
}

/// Whether the run has signalled success.
pub fn detect_success(run: &mut ManagedRun, mode: SuccessMode) -> bool {
    match mode {
        SuccessMode::SentinelFile => run.success_file.exists(),
        SuccessMode::ExitCode => matches!(run.poll_exit(), Ok(Some(s)) if s.success()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpiryMode {
    KillOnExpiry,
    SuspendOnExpiry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GrantResult {
    /// Success after this many ticks of the grant.
    Succeeded(u64),
    /// The full grant ran out.
    Expired,
    /// The run exited without success after this many ticks.
    Died(u64),
    /// Stopped early because another worker succeeded.
    Interrupted(u64),
}

fn ticks_of(elapsed: Duration, tick: Duration) -> u64 {
    (elapsed.as_secs_f64() / tick.as_secs_f64()).ceil().max(1.0) as u64
}

/// Lets `run` execute for `grant` more ticks.
pub fn enforce_ttl(
    run: &mut ManagedRun,
    grant: u64,
    mode: ExpiryMode,
    config: &ExecConfig,
) -> Result<GrantResult, ExecError> {
    enforce_grant(run, grant, mode, config, None)
}

fn enforce_grant(
    run: &mut ManagedRun,
    grant: u64,
    mode: ExpiryMode,
    config: &ExecConfig,
    stop: Option<&AtomicBool>,
) -> Result<GrantResult, ExecError> {
    if grant == 0 {
        return Err(ExecError::Contract("a grant must be at least one tick".into()));
    }
    if matches!(run.status, RunStatus::Succeeded | RunStatus::Killed) {
        return Err(ExecError::Contract("run is no longer alive".into()));
    }
    let outcome = drive(run, grant, mode, config, stop);
    if outcome.is_err() {
        let _ = run.terminate();
    }
    outcome
}

fn drive(
    run: &mut ManagedRun,
    grant: u64,
    mode: ExpiryMode,
    config: &ExecConfig,
    stop: Option<&AtomicBool>,
) -> Result<GrantResult, ExecError> {
    run.resume()?;
    let start = Instant::now();
    let budget = config.tick * grant as u32;
    let poll = config.poll_interval();
    let finish = |run: &mut ManagedRun, used: u64| {
        let used = used.min(grant);
        run.accumulated += used;
        used
    };
    loop {
        let elapsed = start.elapsed();
        if detect_success(run, config.success_mode) {
            let used = finish(run, ticks_of(elapsed, config.tick));
            run.status = RunStatus::Succeeded;
            run.terminate()?;
            return Ok(GrantResult::Succeeded(used));
        }
        if run.poll_exit()?.is_some() {
            // one more look: the sentinel may land just before exit
            if detect_success(run, config.success_mode) {
                continue;
            }
            let used = finish(run, ticks_of(elapsed, config.tick));
            run.terminate()?;
            return Ok(GrantResult::Died(used));
        }
        if stop.is_some_and(|s| s.load(Ordering::Acquire)) {
            let used = finish(run, ticks_of(elapsed, config.tick));
            run.terminate()?;
            return Ok(GrantResult::Interrupted(used));
        }
        if elapsed >= budget {
            break;
        }
        thread::sleep(poll.min(budget - elapsed));
    }
    if detect_success(run, config.success_mode) {
        let used = finish(run, grant);
        run.status = RunStatus::Succeeded;
        run.terminate()?;
        return Ok(GrantResult::Succeeded(used));
    }
    finish(run, grant);
    match mode {
        ExpiryMode::KillOnExpiry => run.terminate()?,
        ExpiryMode::SuspendOnExpiry => run.suspend()?,
    }
    Ok(GrantResult::Expired)
}

/// A TTL to run for, possibly continuing a suspended run. For a resumed run
/// the grant is `ttl − accumulated`.
#[derive(Debug)]
pub struct Assignment<R> {
    pub ttl: Ttl,
    pub resumed: Option<R>,
    /// Wide-search copy id.
    pub copy: Option<u64>,
}

impl<R: Accumulated> Assignment<R> {
    pub fn grant(&self) -> u64 {
        self.ttl.get() - self.resumed.as_ref().map_or(0, |r| r.accumulated())
    }
}

enum Shared<R> {
    Stateless,
    Counter(LubySequence),
    CounterCache {
        luby: LubySequence,
        cache: RunCache<R>,
    },
    Wide {
        agenda: BinaryHeap<Reverse<(u64, u64)>>,
        parked: HashMap<u64, R>,
        next_fresh: u64,
        policy: SlotPolicy,
        limit: usize,
    },
}

/// Per-worker state: private TTL sampler for the random strategies.
pub struct WorkerLocal {
    sampler: Option<Box<dyn TtlSource + Send>>,
    done: bool,
}

impl WorkerLocal {
    pub fn new(kind: StrategyKind, seed: u64, worker: u64) -> Self {
        let stream = RngStream::derive(seed, worker);
        let sampler: Option<Box<dyn TtlSource + Send>> = match kind {
            StrategyKind::RandomZeta2 => Some(Box::new(Zeta2Sampler(stream))),
            StrategyKind::RandomCounter => Some(Box::new(BinSampler(stream))),
            _ => None,
        };
        WorkerLocal {
            sampler,
            done: false,
        }
    }
}

/// Shared source of assignments for all workers of a trial.
pub struct Dispenser<R> {
    kind: StrategyKind,
    cap: u64,
    shared: Mutex<Shared<R>>,
    peak_parked: AtomicUsize,
}

impl<R: Accumulated> Dispenser<R> {
    pub fn new(spec: StrategySpec, cap: u64, suspended_limit: Option<usize>) -> Self {
        let shared = match spec.kind {
            StrategyKind::Counter => Shared::Counter(LubySequence::new()),
            StrategyKind::CounterCache { capacity } => Shared::CounterCache {
                luby: LubySequence::new(),
                cache: RunCache::new(capacity),
            },
            StrategyKind::Wide { policy } => Shared::Wide {
                agenda: BinaryHeap::new(),
                parked: HashMap::new(),
                next_fresh: 1,
                policy,
                limit: suspended_limit.unwrap_or(4 * spec.workers).max(1),
            },
            _ => Shared::Stateless,
        };
        Dispenser {
            kind: spec.kind,
            cap,
            shared: Mutex::new(shared),
            peak_parked: AtomicUsize::new(0),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Shared<R>> {
        self.shared.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Next assignment for a worker, or `None` when the strategy has nothing
    /// more for it (single and parallel-OR run once per worker).
    pub fn next_assignment(&self, local: &mut WorkerLocal) -> Result<Option<Assignment<R>>, ExecError> {
        let fresh = |ttl| Ok(Some(Assignment { ttl, resumed: None, copy: None }));
        match self.kind {
            StrategyKind::Single | StrategyKind::ParallelOr => {
                if std::mem::replace(&mut local.done, true) {
                    return Ok(None);
                }
                fresh(Ttl::new(self.cap)?)
            }
            StrategyKind::Fixed { ttl } => fresh(ttl),
            StrategyKind::RandomZeta2 | StrategyKind::RandomCounter => {
                let ttl = local
                    .sampler
                    .as_mut()
                    .expect("random strategies carry a sampler")
                    .next_ttl()?;
                fresh(ttl)
            }
            StrategyKind::Counter => match &mut *self.lock() {
                Shared::Counter(luby) => fresh(luby.next_ttl()?),
                _ => unreachable!("dispenser state matches its kind"),
            },
            StrategyKind::CounterCache { .. } => match &mut *self.lock() {
                Shared::CounterCache { luby, cache } => {
                    let ttl = luby.next_ttl()?;
                    let resumed = cache.take_below(ttl.get()).map(|(_, run)| run);
                    Ok(Some(Assignment { ttl, resumed, copy: None }))
                }
                _ => unreachable!("dispenser state matches its kind"),
            },
            StrategyKind::Wide { .. } => match &mut *self.lock() {
                Shared::Wide {
                    agenda,
                    parked,
                    next_fresh,
                    policy,
                    ..
                } => {
                    let take_parked = matches!(agenda.peek(), Some(Reverse((due, _))) if *due <= *next_fresh);
                    if take_parked {
                        let Reverse((_, copy)) = agenda.pop().expect("peeked");
                        let run = parked.remove(&copy).expect("agenda entries are parked");
                        let acc = run.accumulated();
                        let grant = match policy {
                            SlotPolicy::Unit => 1,
                            SlotPolicy::Doubling => acc.max(1),
                        };
                        Ok(Some(Assignment {
                            ttl: Ttl::new(acc + grant)?,
                            resumed: Some(run),
                            copy: Some(copy),
                        }))
                    } else {
                        let copy = *next_fresh;
                        *next_fresh += 1;
                        Ok(Some(Assignment {
                            ttl: Ttl::ONE,
                            resumed: None,
                            copy: Some(copy),
                        }))
                    }
                }
                _ => unreachable!("dispenser state matches its kind"),
            },
        }
    }

    /// Returns a suspended run after an expired grant. Runs that must die
    /// (stop/start strategies, cache or agenda overflow) are handed back to
    /// the caller to terminate outside the lock.
    pub fn give_back(&self, run: R, copy: Option<u64>) -> Vec<R> {
        let mut shared = self.lock();
        let (evicted, parked) = match &mut *shared {
            Shared::CounterCache { cache, .. } => {
                let evicted = cache.insert(run.accumulated(), run).map(|(_, r)| r);
                (evicted.into_iter().collect(), cache.len())
            }
            Shared::Wide {
                agenda,
                parked,
                limit,
                ..
            } => {
                let copy = copy.expect("wide runs carry a copy id");
                agenda.push(Reverse((copy.saturating_mul(run.accumulated() + 1), copy)));
                parked.insert(copy, run);
                let mut evicted = Vec::new();
                if parked.len() > *limit {
                    let lightest = parked
                        .iter()
                        .map(|(&id, r)| (r.accumulated(), id))
                        .min()
                        .map(|(_, id)| id)
                        .expect("nonempty");
                    agenda.retain(|Reverse((_, id))| *id != lightest);
                    evicted.push(parked.remove(&lightest).expect("present"));
                }
                (evicted, parked.len())
            }
            _ => (vec![run], 0),
        };
        self.peak_parked.fetch_max(parked, Ordering::Relaxed);
        evicted
    }

    /// Takes every parked run out of the dispenser.
    pub fn drain(&self) -> Vec<R> {
        match &mut *self.lock() {
            Shared::CounterCache { cache, .. } => cache.drain().collect(),
            Shared::Wide { agenda, parked, .. } => {
                agenda.clear();
                parked.drain().map(|(_, r)| r).collect()
            }
            _ => Vec::new(),
        }
    }

    pub fn parked(&self) -> usize {
        match &*self.lock() {
            Shared::CounterCache { cache, .. } => cache.len(),
            Shared::Wide { parked, .. } => parked.len(),
            _ => 0,
        }
    }

    /// Largest number of simultaneously parked runs seen so far.
    pub fn peak_parked(&self) -> usize {
        self.peak_parked.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttemptResult {
    Success,
    Expired,
    Died,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttemptLog {
    pub worker: usize,
    pub ttl: u64,
    /// Ticks actually granted in this attempt.
    pub granted: u64,
    pub resumed: bool,
    pub result: AttemptResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum TrialResult {
    Success { elapsed_ticks: u64 },
    Failure { cap: u64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRecord {
    pub strategy: StrategySpec,
    pub trial: usize,
    pub seed: u64,
    pub outcome: TrialResult,
    pub attempts: Vec<AttemptLog>,
    pub wall_seconds: f64,
    pub peak_suspended: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Process groups spawned during the trial.
    #[serde(skip)]
    pub process_groups: Vec<i32>,
}

impl ExperimentRecord {
    pub fn succeeded(&self) -> bool {
        matches!(self.outcome, TrialResult::Success { .. })
    }

    pub fn elapsed_ticks(&self) -> Option<u64> {
        match self.outcome {
            TrialResult::Success { elapsed_ticks } => Some(elapsed_ticks),
            TrialResult::Failure { .. } => None,
        }
    }
}

impl From<&ExperimentRecord> for crate::stats::TrialOutcome {
    fn from(r: &ExperimentRecord) -> Self {
        match r.outcome {
            TrialResult::Success { elapsed_ticks } => Self::Success(elapsed_ticks as f64),
            TrialResult::Failure { .. } => Self::Failure,
        }
    }
}

/// Whether any process of group `pgid` is still alive. Zombies waiting for
/// a reaper (killed grandchildren reparented to init) do not count.
pub fn process_group_alive(pgid: i32) -> bool {
    if matches!(killpg(Pid::from_raw(pgid), None), Err(Errno::ESRCH)) {
        return false;
    }
    live_members(pgid).unwrap_or(true)
}

#[cfg(target_os = "linux")]
fn live_members(pgid: i32) -> Option<bool> {
    for entry in fs::read_dir("/proc").ok()?.flatten() {
        let Ok(stat) = fs::read_to_string(entry.path().join("stat")) else {
            continue;
        };
        // pid (comm) state ppid pgrp ...
        let Some(rest) = stat.rfind(')').map(|i| &stat[i + 1..]) else {
            continue;
        };
        let mut fields = rest.split_whitespace();
        let state = fields.next();
        let pgrp = fields.nth(1).and_then(|f| f.parse::<i32>().ok());
        if pgrp == Some(pgid) && !matches!(state, Some("Z" | "X")) {
            return Some(true);
        }
    }
    Some(false)
}

#[cfg(not(target_os = "linux"))]
fn live_members(_pgid: i32) -> Option<bool> {
    None
}

struct TrialCtx<'a> {
    command: &'a [String],
    spec: StrategySpec,
    cap: u64,
    seed: u64,
    trial_dir: PathBuf,
    config: &'a ExecConfig,
    dispenser: Dispenser<ManagedRun>,
    stop: AtomicBool,
    runs: AtomicU64,
    winner: Mutex<Option<u64>>,
    log: Mutex<Vec<AttemptLog>>,
    groups: Mutex<Vec<i32>>,
    errors: Mutex<Vec<String>>,
}

impl TrialCtx<'_> {
    fn spawn(&self) -> Result<ManagedRun, ExecError> {
        let n = self.runs.fetch_add(1, Ordering::Relaxed);
        let dir = self.trial_dir.join(format!("run-{n:05}"));
        let run = spawn_run_with(self.command, &dir, mix64(self.seed ^ mix64(n)), self.config)?;
        self.groups.lock().unwrap().push(run.pgid());
        Ok(run)
    }

    fn record(&self, entry: AttemptLog) {
        self.log.lock().unwrap().push(entry);
    }

    fn fail(&self, err: ExecError) {
        self.errors.lock().unwrap().push(err.to_string());
    }

    fn kill_all(&self, runs: Vec<ManagedRun>) {
        for mut run in runs {
            if let Err(e) = run.terminate() {
                self.fail(e);
            }
        }
    }

    fn worker(&self, index: usize) {
        let mut local = WorkerLocal::new(self.spec.kind, self.seed, index as u64);
        let mode = if self.spec.kind.pauses() {
            ExpiryMode::SuspendOnExpiry
        } else {
            ExpiryMode::KillOnExpiry
        };
        let mut lane = 0u64;
        while !self.stop.load(Ordering::Acquire) && lane < self.cap {
            let assignment = match self.dispenser.next_assignment(&mut local) {
                Ok(Some(a)) => a,
                Ok(None) => break,
                Err(e) => {
                    self.fail(e);
                    break;
                }
            };
            let grant = assignment.grant().min(self.cap - lane);
            let ttl = assignment.ttl.get();
            let resumed = assignment.resumed.is_some();
            let mut run = match assignment.resumed {
                Some(run) => run,
                None => match self.spawn() {
                    Ok(run) => run,
                    Err(e) => {
                        self.fail(e);
                        break;
                    }
                },
            };
            let outcome = enforce_grant(&mut run, grant, mode, self.config, Some(&self.stop));
            let (granted, result) = match outcome {
                Ok(GrantResult::Succeeded(used)) => {
                    lane += used;
                    let mut winner = self.winner.lock().unwrap();
                    if winner.is_none() {
                        *winner = Some(lane);
                        self.stop.store(true, Ordering::Release);
                        (used, AttemptResult::Success)
                    } else {
                        (used, AttemptResult::Interrupted)
                    }
                }
                Ok(GrantResult::Expired) => {
                    lane += grant;
                    if run.status() == RunStatus::Suspended {
                        let evicted = self.dispenser.give_back(run, assignment.copy);
                        self.kill_all(evicted);
                    }
                    (grant, AttemptResult::Expired)
                }
                Ok(GrantResult::Died(used)) => {
                    lane += used;
                    (used, AttemptResult::Died)
                }
                Ok(GrantResult::Interrupted(used)) => {
                    lane += used;
                    (used, AttemptResult::Interrupted)
                }
                Err(e) => {
                    self.fail(e);
                    break;
                }
            };
            self.record(AttemptLog {
                worker: index,
                ttl,
                granted,
                resumed,
                result,
            });
        }
    }
}

fn experiment_dir(root: &Path, seed: u64) -> PathBuf {
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos());
    root.join(format!("exp-{}-{nanos:x}-{seed:x}", std::process::id()))
}

fn run_trial(
    command: &[String],
    spec: StrategySpec,
    cap: u64,
    trial: usize,
    seed: u64,
    exp_dir: &Path,
    config: &ExecConfig,
) -> ExperimentRecord {
    let started = Instant::now();
    let ctx = TrialCtx {
        command,
        spec,
        cap,
        seed,
        trial_dir: exp_dir.join(format!("trial-{trial:05}")),
        config,
        dispenser: Dispenser::new(spec, cap, config.suspended_limit),
        stop: AtomicBool::new(false),
        runs: AtomicU64::new(0),
        winner: Mutex::new(None),
        log: Mutex::new(Vec::new()),
        groups: Mutex::new(Vec::new()),
        errors: Mutex::new(Vec::new()),
    };
    thread::scope(|s| {
        for w in 0..spec.workers {
            let ctx = &ctx;
            s.spawn(move || ctx.worker(w));
        }
    });
    ctx.kill_all(ctx.dispenser.drain());
    let winner = *ctx.winner.lock().unwrap();
    let outcome = match winner {
        Some(elapsed_ticks) => TrialResult::Success { elapsed_ticks },
        None => TrialResult::Failure { cap },
    };
    if (winner.is_some() || !config.keep_failed) && ctx.trial_dir.exists() {
        if let Err(e) = fs::remove_dir_all(&ctx.trial_dir) {
            ctx.fail(e.into());
        }
    }
    let errors = ctx.errors.into_inner().unwrap();
    ExperimentRecord {
        strategy: spec,
        trial,
        seed,
        outcome,
        attempts: ctx.log.into_inner().unwrap(),
        wall_seconds: started.elapsed().as_secs_f64(),
        peak_suspended: ctx.dispenser.peak_parked(),
        error: (!errors.is_empty()).then(|| errors.join("; ")),
        process_groups: ctx.groups.into_inner().unwrap(),
    }
}

/// Runs `trials` independent trials of `command` under `spec`. Trial `i`
/// uses seed `seed + i`; per-trial failures end up in the record instead of
/// aborting the batch.
pub fn run_experiment(
    command: &[String],
    spec: StrategySpec,
    cap_ticks: u64,
    trials: usize,
    seed: u64,
    config: &ExecConfig,
) -> Result<Vec<ExperimentRecord>, ExecError> {
    if command.is_empty() {
        return Err(ExecError::Contract("empty command".into()));
    }
    if cap_ticks == 0 {
        return Err(ExecError::Contract("cap must be at least one tick".into()));
    }
    let spec = StrategySpec::new(spec.kind, spec.workers)
        .map_err(|e| ExecError::Contract(e.to_string()))?;
    let exp_dir = experiment_dir(&config.workdir_root, seed);
    let next = AtomicUsize::new(0);
    let records = Mutex::new(Vec::with_capacity(trials));
    thread::scope(|s| {
        for _ in 0..config.parallel_trials.clamp(1, trials.max(1)) {
            s.spawn(|| loop {
                let trial = next.fetch_add(1, Ordering::Relaxed);
                if trial >= trials {
                    break;
                }
                let seed = seed.wrapping_add(trial as u64);
                let rec = run_trial(command, spec, cap_ticks, trial, seed, &exp_dir, config);
                records.lock().unwrap().push(rec);
            });
        }
    });
    if exp_dir.exists() && fs::read_dir(&exp_dir)?.next().is_none() {
        fs::remove_dir(&exp_dir)?;
    }
    let mut records = records.into_inner().unwrap();
    records.sort_by_key(|r| r.trial);
    Ok(records)
}

/// Appends one JSON object per record.
pub fn append_jsonl(records: &[ExperimentRecord], path: &Path) -> io::Result<()> {
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    for r in records {
        serde_json::to_writer(&mut file, r)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[derive(Debug, PartialEq)]
    struct Fake(u64);

    impl Accumulated for Fake {
        fn accumulated(&self) -> u64 {
            self.0
        }
    }

    fn solo(kind: StrategyKind) -> StrategySpec {
        StrategySpec::solo(kind)
    }

    #[test]
    fn counter_dispenser_follows_luby() {
        let d: Dispenser<Fake> = Dispenser::new(solo(StrategyKind::Counter), 3000, None);
        let mut local = WorkerLocal::new(StrategyKind::Counter, 0, 0);
        let ttls: Vec<u64> = (0..8)
            .map(|_| d.next_assignment(&mut local).unwrap().unwrap().ttl.get())
            .collect();
        assert_eq!(ttls, [1, 1, 2, 1, 1, 2, 4, 1]);
    }

    #[test]
    fn cache_resumes_the_heaviest_run_below_the_ttl() {
        let kind = StrategyKind::CounterCache { capacity: 4 };
        let d: Dispenser<Fake> = Dispenser::new(solo(kind), 3000, None);
        let mut local = WorkerLocal::new(kind, 0, 0);
        // burn the 1,1,2,1,1,2 prefix so the next TTL is 4
        for _ in 0..6 {
            let a = d.next_assignment(&mut local).unwrap().unwrap();
            assert!(a.resumed.is_none());
        }
        assert!(d.give_back(Fake(1), None).is_empty());
        assert!(d.give_back(Fake(3), None).is_empty());
        let a = d.next_assignment(&mut local).unwrap().unwrap();
        assert_eq!(a.ttl.get(), 4);
        assert_eq!(a.resumed, Some(Fake(3)));
        assert_eq!(a.grant(), 1);
        assert_eq!(d.parked(), 1);
    }

    #[test]
    fn cache_capacity_and_eviction() {
        let kind = StrategyKind::CounterCache { capacity: 2 };
        let d: Dispenser<Fake> = Dispenser::new(solo(kind), 3000, None);
        assert!(d.give_back(Fake(4), None).is_empty());
        assert!(d.give_back(Fake(2), None).is_empty());
        assert_eq!(d.give_back(Fake(8), None), vec![Fake(2)]);
        assert_eq!(d.parked(), 2);
        assert_eq!(d.peak_parked(), 2);
        assert_eq!(d.drain().len(), 2);
    }

    #[test]
    fn fixed_and_one_shot_dispensers() {
        let five = Ttl::new(5).unwrap();
        let d: Dispenser<Fake> = Dispenser::new(solo(StrategyKind::Fixed { ttl: five }), 3000, None);
        let mut local = WorkerLocal::new(StrategyKind::Fixed { ttl: five }, 0, 0);
        for _ in 0..3 {
            let a = d.next_assignment(&mut local).unwrap().unwrap();
            assert_eq!((a.ttl, a.resumed.is_none()), (five, true));
        }
        let d: Dispenser<Fake> = Dispenser::new(solo(StrategyKind::Single), 20, None);
        let mut local = WorkerLocal::new(StrategyKind::Single, 0, 0);
        assert_eq!(d.next_assignment(&mut local).unwrap().unwrap().ttl.get(), 20);
        assert!(d.next_assignment(&mut local).unwrap().is_none());
    }

    #[test]
    fn wide_dispenser_schedule() {
        let kind = StrategyKind::Wide { policy: SlotPolicy::Doubling };
        let d: Dispenser<Fake> = Dispenser::new(solo(kind), 3000, Some(2));
        let mut local = WorkerLocal::new(kind, 0, 0);
        let a = d.next_assignment(&mut local).unwrap().unwrap();
        assert_eq!((a.copy, a.ttl.get()), (Some(1), 1));
        d.give_back(Fake(1), Some(1));
        // copy 1 due at 2 beats fresh copy 2 on the tie
        let a = d.next_assignment(&mut local).unwrap().unwrap();
        assert_eq!((a.copy, a.ttl.get(), a.grant()), (Some(1), 2, 1));
        d.give_back(Fake(2), Some(1));
        let a = d.next_assignment(&mut local).unwrap().unwrap();
        assert_eq!((a.copy, a.resumed.is_none()), (Some(2), true));
        d.give_back(Fake(1), Some(2));
        let a = d.next_assignment(&mut local).unwrap().unwrap();
        assert_eq!((a.copy, a.ttl.get(), a.grant()), (Some(1), 4, 2));
        // over the limit of two parked runs: the lightest goes
        d.give_back(Fake(4), Some(1));
        let a = d.next_assignment(&mut local).unwrap().unwrap();
        assert_eq!(a.copy, Some(3));
        let evicted = d.give_back(Fake(1), Some(3));
        assert_eq!(evicted.len(), 1);
        assert_eq!(evicted[0].0, 1);
        assert_eq!(d.parked(), 2);
    }

    #[test]
    fn random_dispensers_are_worker_local_and_seeded() {
        let kind = StrategyKind::RandomCounter;
        let d: Dispenser<Fake> = Dispenser::new(solo(kind), 3000, None);
        let draw = |worker| {
            let mut local = WorkerLocal::new(kind, 77, worker);
            (0..16)
                .map(|_| d.next_assignment(&mut local).unwrap().unwrap().ttl.get())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(0), draw(0));
        assert_ne!(draw(0), draw(1));
    }

    #[test]
    fn counter_dispenser_is_linearizable() {
        let d: Dispenser<Fake> = Dispenser::new(
            StrategySpec::new(StrategyKind::Counter, 8).unwrap(),
            3000,
            None,
        );
        let per_worker = 500;
        let all = Mutex::new(Vec::new());
        thread::scope(|s| {
            for w in 0..8 {
                let (d, all) = (&d, &all);
                s.spawn(move || {
                    let mut local = WorkerLocal::new(StrategyKind::Counter, 0, w);
                    let got: Vec<u64> = (0..per_worker)
                        .map(|_| d.next_assignment(&mut local).unwrap().unwrap().ttl.get())
                        .collect();
                    all.lock().unwrap().extend(got);
                });
            }
        });
        let mut seen = BTreeMap::new();
        for t in all.into_inner().unwrap() {
            *seen.entry(t).or_insert(0) += 1;
        }
        let mut expected = BTreeMap::new();
        let mut luby = LubySequence::new();
        for t in luby.take_ttls(8 * per_worker).unwrap() {
            *expected.entry(t.get()).or_insert(0) += 1;
        }
        assert_eq!(seen, expected);
    }

    #[test]
    fn poll_interval_scales_with_short_ticks() {
        let mut c = ExecConfig::default();
        assert_eq!(c.poll_interval(), Duration::from_millis(100));
        c.tick = Duration::from_millis(100);
        assert_eq!(c.poll_interval(), Duration::from_millis(10));
        assert!(default_workers() >= 1);
    }

    #[test]
    fn tick_rounding() {
        let tick = Duration::from_millis(100);
        assert_eq!(ticks_of(Duration::from_millis(1), tick), 1);
        assert_eq!(ticks_of(Duration::from_millis(100), tick), 1);
        assert_eq!(ticks_of(Duration::from_millis(101), tick), 2);
    }
}
