//! Seeded discrete-event simulation of restart strategies against a known
//! runtime law.
//!
//! Every attempt draws a hidden runtime `X` from the law. A stop/start attempt
//! with TTL `t` succeeds iff `X ≤ t` and is charged `min(X, t)` ticks. The
//! pause/resume strategies (wide search, counter + cache) keep hidden runtimes
//! of suspended runs and charge only the ticks actually granted.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::RuntimeDistribution;
use crate::ttl::{
    BinSampler, FixedTtl, LubySequence, RngStream, Ttl, TtlError, TtlSource, Zeta2Sampler,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid strategy: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Ttl(#[from] TtlError),
}

/// Slot sizing for wide search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotPolicy {
    /// One tick per activation; copy `i` runs at speed `1/i`.
    Unit,
    /// Each activation grants the copy's current accumulated runtime (one
    /// tick for a fresh copy).
    #[default]
    Doubling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StrategyKind {
    /// One run, never restarted (its TTL is the trial cap).
    Single,
    /// Independent runs on every worker, stop at the first success.
    ParallelOr,
    Fixed { ttl: Ttl },
    /// Counter search: shared Luby sequence.
    Counter,
    RandomZeta2,
    /// Random counter search: TTLs drawn from BIN.
    RandomCounter,
    Wide { policy: SlotPolicy },
    CounterCache { capacity: usize },
}

impl StrategyKind {
    /// Command-line name of the strategy.
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Single => "single",
            StrategyKind::ParallelOr => "parallel",
            StrategyKind::Fixed { .. } => "fixed",
            StrategyKind::Counter => "counter",
            StrategyKind::RandomZeta2 => "zeta2",
            StrategyKind::RandomCounter => "bin",
            StrategyKind::Wide { .. } => "wide",
            StrategyKind::CounterCache { .. } => "counter-cache",
        }
    }

    /// Whether the strategy needs suspend/resume of runs.
    pub fn pauses(&self) -> bool {
        matches!(self, StrategyKind::Wide { .. } | StrategyKind::CounterCache { .. })
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyKind::Single => write!(f, "Single"),
            StrategyKind::ParallelOr => write!(f, "Parallel"),
            StrategyKind::Fixed { ttl } => write!(f, "TTL {ttl}"),
            StrategyKind::Counter => write!(f, "Counter"),
            StrategyKind::RandomZeta2 => write!(f, "Random zeta(2)"),
            StrategyKind::RandomCounter => write!(f, "Random counter"),
            StrategyKind::Wide { policy: SlotPolicy::Doubling } => write!(f, "Wide"),
            StrategyKind::Wide { policy: SlotPolicy::Unit } => write!(f, "Wide (unit)"),
            StrategyKind::CounterCache { .. } => write!(f, "Counter+Cache"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategySpec {
    #[serde(flatten)]
    pub kind: StrategyKind,
    pub workers: usize,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind, workers: usize) -> Result<Self, SimError> {
        if workers == 0 {
            return Err(SimError::InvalidSpec("at least one worker is required".into()));
        }
        match kind {
            StrategyKind::Single if workers != 1 => {
                return Err(SimError::InvalidSpec("single runs on exactly one worker".into()))
            }
            StrategyKind::CounterCache { capacity: 0 } => {
                return Err(SimError::InvalidSpec("cache capacity must be positive".into()))
            }
            _ => {}
        }
        Ok(StrategySpec { kind, workers })
    }

    /// Single-worker shorthand.
    pub fn solo(kind: StrategyKind) -> Self {
        StrategySpec { kind, workers: 1 }
    }

    pub fn label(&self) -> String {
        if self.workers > 1 {
            format!("{} x{}", self.kind, self.workers)
        } else {
            self.kind.to_string()
        }
    }
}

/// A hidden runtime: finite ticks or never terminates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Runtime {
    Finite(u64),
    Infinite,
}

impl Runtime {
    /// Whether a run with this runtime finishes within `budget` ticks.
    pub fn within(self, budget: u64) -> bool {
        matches!(self, Runtime::Finite(x) if x <= budget)
    }
}

/// Inversion sampler over a law: atoms in tick order, +∞ last.
#[derive(Debug, Clone)]
pub struct RuntimeSampler {
    ticks: Vec<u64>,
    cumulative: Vec<f64>,
}

impl RuntimeSampler {
    pub fn new(dist: &RuntimeDistribution) -> Self {
        let mut acc = 0.0;
        let (ticks, cumulative) = dist
            .atoms()
            .iter()
            .map(|&(t, p)| {
                acc += p;
                (t, acc)
            })
            .unzip();
        RuntimeSampler { ticks, cumulative }
    }

    pub fn from_uniform(&self, u: f64) -> Runtime {
        let idx = self.cumulative.partition_point(|&c| c <= u);
        match self.ticks.get(idx) {
            Some(&t) => Runtime::Finite(t),
            None => Runtime::Infinite,
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Runtime {
        self.from_uniform(rng.uniform())
    }
}

pub fn sample_runtime(dist: &RuntimeDistribution, rng: &mut RngStream) -> Runtime {
    RuntimeSampler::new(dist).sample(rng)
}

/// Result of one simulated strategy execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimOutcome {
    pub success: bool,
    /// Strategy wall-clock in ticks; equals the cap on failure.
    pub time_to_success: u64,
    /// Ticks spent across all workers and runs.
    pub total_work: u64,
    /// Runs started (wide search: copies instantiated; counter + cache:
    /// assignments handed out).
    pub attempts: u64,
    pub seed: u64,
    /// Largest number of simultaneously suspended runs.
    pub peak_suspended: usize,
}

enum Sources {
    Shared(Box<dyn TtlSource>),
    PerWorker(Vec<Box<dyn TtlSource>>),
}

impl Sources {
    fn next(&mut self, worker: usize) -> Result<Ttl, TtlError> {
        match self {
            Sources::Shared(src) => src.next_ttl(),
            Sources::PerWorker(srcs) => srcs[worker].next_ttl(),
        }
    }
}

/// Simulates a stop/start strategy (single, fixed, counter, random ζ(2),
/// random counter) with `spec.workers` workers in lock-step.
pub fn simulate_ttl_strategy(
    dist: &RuntimeDistribution,
    spec: StrategySpec,
    cap: u64,
    rng: &mut RngStream,
) -> Result<SimOutcome, SimError> {
    ttl_strategy(&RuntimeSampler::new(dist), spec, cap, rng)
}

fn ttl_strategy(
    sampler: &RuntimeSampler,
    spec: StrategySpec,
    cap: u64,
    rng: &mut RngStream,
) -> Result<SimOutcome, SimError> {
    let workers = spec.workers;
    let mut sources = match spec.kind {
        StrategyKind::Single => {
            let cap_ttl = Ttl::new(cap).map_err(|_| SimError::InvalidSpec("cap must be positive".into()))?;
            Sources::Shared(Box::new(FixedTtl(cap_ttl)))
        }
        StrategyKind::Fixed { ttl } => Sources::Shared(Box::new(FixedTtl(ttl))),
        StrategyKind::Counter => Sources::Shared(Box::new(LubySequence::new())),
        StrategyKind::RandomZeta2 | StrategyKind::RandomCounter => {
            let base = rng.next_u64();
            Sources::PerWorker(
                (0..workers as u64)
                    .map(|w| {
                        let stream = RngStream::derive(base, w);
                        if spec.kind == StrategyKind::RandomZeta2 {
                            Box::new(Zeta2Sampler(stream)) as Box<dyn TtlSource>
                        } else {
                            Box::new(BinSampler(stream))
                        }
                    })
                    .collect(),
            )
        }
        other => {
            return Err(SimError::InvalidSpec(format!(
                "{} is not a stop/start strategy",
                other.name()
            )))
        }
    };

    // (end time, 0 = success / 1 = expiry, worker); successes pop first on ties
    let mut events: BinaryHeap<Reverse<(u64, u8, usize)>> = BinaryHeap::with_capacity(workers);
    let mut attempts = 0u64;
    let mut start = |now: u64, worker: usize, events: &mut BinaryHeap<_>| -> Result<(), SimError> {
        let ttl = sources.next(worker)?.get();
        attempts += 1;
        let event = match sampler.sample(rng) {
            Runtime::Finite(x) if x <= ttl => (now.saturating_add(x), 0, worker),
            _ => (now.saturating_add(ttl), 1, worker),
        };
        events.push(Reverse(event));
        Ok(())
    };
    for w in 0..workers {
        start(0, w, &mut events)?;
    }
    let elapsed = loop {
        let Reverse((end, kind, worker)) = events.pop().expect("every worker has an event");
        if end > cap {
            break None;
        }
        if kind == 0 {
            break Some(end);
        }
        start(end, worker, &mut events)?;
    };
    Ok(finish(elapsed, cap, workers as u64 * elapsed.unwrap_or(cap), attempts, rng, 0))
}

fn finish(
    elapsed: Option<u64>,
    cap: u64,
    total_work: u64,
    attempts: u64,
    rng: &RngStream,
    peak_suspended: usize,
) -> SimOutcome {
    SimOutcome {
        success: elapsed.is_some(),
        time_to_success: elapsed.unwrap_or(cap),
        total_work,
        attempts,
        seed: rng.seed(),
        peak_suspended,
    }
}

/// Parallel-OR: `p` independent runs, the first to finish wins.
pub fn simulate_parallel_or(
    dist: &RuntimeDistribution,
    p: usize,
    cap: u64,
    rng: &mut RngStream,
) -> Result<SimOutcome, SimError> {
    parallel_or(&RuntimeSampler::new(dist), p, cap, rng)
}

fn parallel_or(
    sampler: &RuntimeSampler,
    p: usize,
    cap: u64,
    rng: &mut RngStream,
) -> Result<SimOutcome, SimError> {
    if p == 0 {
        return Err(SimError::InvalidSpec("at least one worker is required".into()));
    }
    let best = (0..p).map(|_| sampler.sample(rng)).min().expect("p >= 1");
    let elapsed = match best {
        Runtime::Finite(x) if x <= cap => Some(x),
        _ => None,
    };
    Ok(finish(elapsed, cap, p as u64 * elapsed.unwrap_or(cap), p as u64, rng, 0))
}

/// One slot handed out by the wide-search scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WideSlot {
    pub copy: u64,
    /// Lead-copy time at which the slot is due.
    pub lead_time: u64,
    pub grant: u64,
    /// True when this slot starts the copy.
    pub fresh: bool,
}

/// Scheduler state for wide search: copy `i` is due whenever the lead time
/// reaches `i · (run_ticks + 1)`, so under the unit policy it has run exactly
/// `⌊t/i⌋` ticks at lead time `t`.
#[derive(Debug, Clone, Default)]
pub struct WideState {
    run_ticks: Vec<u64>,
    agenda: BinaryHeap<Reverse<(u64, u64)>>,
    now: u64,
    policy: SlotPolicy,
}

impl WideState {
    pub fn new(policy: SlotPolicy) -> Self {
        WideState {
            policy,
            ..Default::default()
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn copies(&self) -> usize {
        self.run_ticks.len()
    }

    /// Accumulated ticks of copy `id` (1-based), if instantiated.
    pub fn run_ticks(&self, id: u64) -> Option<u64> {
        self.run_ticks.get(id.checked_sub(1)? as usize).copied()
    }

    fn next_fresh(&self) -> u64 {
        self.run_ticks.len() as u64 + 1
    }

    /// Lead time of the next slot.
    pub fn peek_due(&self) -> u64 {
        let fresh = self.next_fresh();
        match self.agenda.peek() {
            Some(Reverse((due, _))) if *due <= fresh => *due,
            _ => fresh,
        }
    }

    /// Pops the due copy (ties → smaller id), grants it a slot and schedules
    /// its next activation.
    pub fn next_slot(&mut self) -> WideSlot {
        let fresh_id = self.next_fresh();
        let (due, copy, fresh) = match self.agenda.peek() {
            Some(&Reverse((due, id))) if due <= fresh_id => {
                self.agenda.pop();
                (due, id, false)
            }
            _ => {
                self.run_ticks.push(0);
                (fresh_id, fresh_id, true)
            }
        };
        self.now = due;
        let run = &mut self.run_ticks[copy as usize - 1];
        let grant = match self.policy {
            SlotPolicy::Unit => 1,
            SlotPolicy::Doubling => (*run).max(1),
        };
        *run += grant;
        let next = copy.saturating_mul(*run + 1);
        self.agenda.push(Reverse((next, copy)));
        WideSlot {
            copy,
            lead_time: due,
            grant,
            fresh,
        }
    }

    /// Removes a copy from the schedule for good.
    pub fn retire(&mut self, copy: u64) {
        self.agenda.retain(|Reverse((_, id))| *id != copy);
    }
}

pub fn wide_next_slot(mut state: WideState) -> (WideState, WideSlot) {
    let slot = state.next_slot();
    (state, slot)
}

/// Single-worker wide search. All slots due at the same lead time form one
/// step; success is decided at the end of the step, won by the smallest copy
/// that reached its hidden runtime.
pub fn simulate_wide(
    dist: &RuntimeDistribution,
    cap: u64,
    rng: &mut RngStream,
    policy: SlotPolicy,
) -> Result<SimOutcome, SimError> {
    wide(&RuntimeSampler::new(dist), cap, rng, policy)
}

fn wide(
    sampler: &RuntimeSampler,
    cap: u64,
    rng: &mut RngStream,
    policy: SlotPolicy,
) -> Result<SimOutcome, SimError> {
    let mut state = WideState::new(policy);
    let mut hidden: Vec<Runtime> = Vec::new();
    let mut work = 0u64;
    loop {
        let step = state.peek_due();
        let mut won = false;
        while state.peek_due() == step {
            let slot = state.next_slot();
            if slot.fresh {
                hidden.push(sampler.sample(rng));
            }
            let after = state.run_ticks(slot.copy).expect("slot copy exists");
            let before = after - slot.grant;
            match hidden[slot.copy as usize - 1] {
                Runtime::Finite(x) if x <= after => {
                    work += x - before;
                    won = true;
                    state.retire(slot.copy);
                }
                _ => work += slot.grant,
            }
        }
        let copies = state.copies();
        if won && work <= cap {
            return Ok(finish(Some(work), cap, work, copies as u64, rng, copies - 1));
        }
        if work >= cap {
            return Ok(finish(None, cap, cap, copies as u64, rng, copies.saturating_sub(1)));
        }
    }
}

/// Fixed-capacity store of suspended runs keyed by accumulated ticks.
#[derive(Debug, Clone)]
pub struct RunCache<T> {
    entries: BTreeMap<(u64, u64), T>,
    capacity: usize,
    next_id: u64,
}

impl<T> RunCache<T> {
    pub fn new(capacity: usize) -> Self {
        RunCache {
            entries: BTreeMap::new(),
            capacity,
            next_id: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Removes the run with the largest accumulated time strictly below
    /// `ttl` (ties → most recently stored).
    pub fn take_below(&mut self, ttl: u64) -> Option<(u64, T)> {
        let key = *self.entries.range(..(ttl, 0)).next_back()?.0;
        self.entries.remove(&key).map(|run| (key.0, run))
    }

    /// Stores a suspended run; if that overflows the cache, the lightest run
    /// (ties → oldest) is evicted and returned so the caller can kill it.
    pub fn insert(&mut self, accumulated: u64, run: T) -> Option<(u64, T)> {
        self.next_id += 1;
        self.entries.insert((accumulated, self.next_id), run);
        if self.entries.len() > self.capacity {
            self.entries.pop_first().map(|((acc, _), run)| (acc, run))
        } else {
            None
        }
    }

    pub fn accumulated(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().map(|k| k.0)
    }

    pub fn drain(&mut self) -> impl Iterator<Item = T> + '_ {
        std::mem::take(&mut self.entries).into_values()
    }
}

/// Single-worker counter search where expired runs are suspended into a
/// cache and resumed by later, larger TTLs.
pub fn simulate_counter_cache(
    dist: &RuntimeDistribution,
    capacity: usize,
    cap: u64,
    rng: &mut RngStream,
) -> Result<SimOutcome, SimError> {
    counter_cache(&RuntimeSampler::new(dist), capacity, cap, rng)
}

fn counter_cache(
    sampler: &RuntimeSampler,
    capacity: usize,
    cap: u64,
    rng: &mut RngStream,
) -> Result<SimOutcome, SimError> {
    if capacity == 0 {
        return Err(SimError::InvalidSpec("cache capacity must be positive".into()));
    }
    let mut luby = LubySequence::new();
    let mut cache: RunCache<Runtime> = RunCache::new(capacity);
    let (mut time, mut assignments, mut peak) = (0u64, 0u64, 0usize);
    loop {
        let ttl = luby.next_ttl()?.get();
        assignments += 1;
        let (acc, hidden) = cache
            .take_below(ttl)
            .unwrap_or_else(|| (0, sampler.sample(rng)));
        let (charge, done) = match hidden {
            Runtime::Finite(x) if x <= ttl => (x - acc, true),
            _ => (ttl - acc, false),
        };
        if time.saturating_add(charge) > cap {
            return Ok(finish(None, cap, cap, assignments, rng, peak));
        }
        time += charge;
        if done {
            return Ok(finish(Some(time), cap, time, assignments, rng, peak));
        }
        cache.insert(ttl, hidden);
        peak = peak.max(cache.len());
    }
}

/// Runs one trial of any strategy. Wide search and counter + cache are
/// simulated on a single worker.
pub fn simulate(
    dist: &RuntimeDistribution,
    spec: StrategySpec,
    cap: u64,
    rng: &mut RngStream,
) -> Result<SimOutcome, SimError> {
    simulate_with(&RuntimeSampler::new(dist), spec, cap, rng)
}

fn simulate_with(
    sampler: &RuntimeSampler,
    spec: StrategySpec,
    cap: u64,
    rng: &mut RngStream,
) -> Result<SimOutcome, SimError> {
    let spec = StrategySpec::new(spec.kind, spec.workers)?;
    if spec.kind.pauses() && spec.workers != 1 {
        return Err(SimError::InvalidSpec(format!(
            "{} is simulated on a single worker; use the executor for parallel runs",
            spec.kind.name()
        )));
    }
    match spec.kind {
        StrategyKind::ParallelOr => parallel_or(sampler, spec.workers, cap, rng),
        StrategyKind::Wide { policy } => wide(sampler, cap, rng, policy),
        StrategyKind::CounterCache { capacity } => counter_cache(sampler, capacity, cap, rng),
        _ => ttl_strategy(sampler, spec, cap, rng),
    }
}

/// Runs `trials` independent trials; trial `i` is seeded with
/// `base_seed + i`.
pub fn run_trials(
    dist: &RuntimeDistribution,
    spec: StrategySpec,
    cap: u64,
    trials: usize,
    base_seed: u64,
) -> Result<Vec<SimOutcome>, SimError> {
    let sampler = RuntimeSampler::new(dist);
    (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(base_seed.wrapping_add(i));
            simulate_with(&sampler, spec, cap, &mut rng)
        })
        .collect()
}
