//! TTL generation for every restart strategy.
//!
//! A TTL is the budget, in ticks, granted to a single run before it is killed
//! (stop/start) or suspended (pause/resume). This module provides the
//! deterministic counter sequence, the fixed sequence, the two random
//! samplers (ζ(2) and BIN) and the k-front geometry used to reason about
//! prefixes of a sequence.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;
use std::sync::OnceLock;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TtlError {
    #[error("ttl must be at least one tick")]
    Zero,
    #[error("bit length is undefined for zero")]
    BitLengthOfZero,
    #[error("k-front of an empty sequence")]
    EmptyFront,
    #[error("64-bit overflow while generating {0}")]
    Overflow(&'static str),
}

/// A positive number of ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Ttl(u64);

impl Ttl {
    pub const ONE: Ttl = Ttl(1);

    pub fn new(ticks: u64) -> Result<Self, TtlError> {
        if ticks == 0 {
            Err(TtlError::Zero)
        } else {
            Ok(Ttl(ticks))
        }
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl TryFrom<u64> for Ttl {
    type Error = TtlError;

    fn try_from(ticks: u64) -> Result<Self, Self::Error> {
        Ttl::new(ticks)
    }
}

impl From<Ttl> for u64 {
    fn from(ttl: Ttl) -> u64 {
        ttl.0
    }
}

impl fmt::Display for Ttl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Anything that hands out an endless stream of TTLs.
pub trait TtlSource {
    fn next_ttl(&mut self) -> Result<Ttl, TtlError>;

    fn take_ttls(&mut self, n: usize) -> Result<Vec<Ttl>, TtlError> {
        (0..n).map(|_| self.next_ttl()).collect()
    }
}

/// Seeded uniform variate stream.
///
/// Two streams built from the same seed produce identical variates. Backed by
/// ChaCha8 so the output does not depend on the platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
    bits: u64,
    bits_left: u32,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bits: 0,
            bits_left: 0,
        }
    }

    /// Independent child stream, e.g. one per worker of a trial.
    pub fn derive(seed: u64, stream: u64) -> Self {
        RngStream::new(mix64(seed ^ mix64(stream.wrapping_add(0x9e37_79b9_7f4a_7c15))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// A fair coin.
    pub fn bit(&mut self) -> bool {
        if self.bits_left == 0 {
            self.bits = self.rng.next_u64();
            self.bits_left = 64;
        }
        let b = self.bits & 1 == 1;
        self.bits >>= 1;
        self.bits_left -= 1;
        b
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The counter-search (Luby) sequence `1 | 1,2 | 1 | 1,2,4 | 1 | ...`.
///
/// The counter is incremented and every power of two dividing it is emitted,
/// smallest first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LubySequence {
    counter: u64,
    pending: VecDeque<Ttl>,
}

impl LubySequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// TTLs still to be emitted for the current counter value.
    pub fn pending(&self) -> impl Iterator<Item = Ttl> + '_ {
        self.pending.iter().copied()
    }
}

impl TtlSource for LubySequence {
    fn next_ttl(&mut self) -> Result<Ttl, TtlError> {
        if self.pending.is_empty() {
            self.counter = self
                .counter
                .checked_add(1)
                .ok_or(TtlError::Overflow("luby counter"))?;
            let top = self.counter.trailing_zeros();
            self.pending.extend((0..=top).map(|i| Ttl(1 << i)));
        }
        Ok(self.pending.pop_front().expect("refilled above"))
    }
}

/// Functional form of [`LubySequence::next_ttl`].
pub fn luby_next(mut state: LubySequence) -> Result<(LubySequence, Ttl), TtlError> {
    let ttl = state.next_ttl()?;
    Ok((state, ttl))
}

/// `Δ, Δ, Δ, ...`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedTtl(pub Ttl);

impl TtlSource for FixedTtl {
    fn next_ttl(&mut self) -> Result<Ttl, TtlError> {
        Ok(fixed_next(self.0))
    }
}

pub fn fixed_next(delta: Ttl) -> Ttl {
    delta
}

/// Normalizing constant `6/π²` of the ζ(2) law.
pub const ZETA2_C: f64 = 6.0 / (PI * PI);

const ZETA2_TABLE_LEN: usize = 1 << 16;

fn zeta2_cdf_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut sum = 0.0;
        let mut comp = 0.0;
        (1..=ZETA2_TABLE_LEN)
            .map(|i| {
                let x = (i as f64).powi(-2);
                neumaier_add(&mut sum, &mut comp, x);
                ZETA2_C * (sum + comp)
            })
            .collect()
    })
}

pub(crate) fn neumaier_add(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

/// `P[X > n]` for large `n`, via the asymptotic expansion of the trigamma
/// function: `Σ_{i>n} 1/i² = ψ'(n+1)`.
fn zeta2_tail(n: u64) -> f64 {
    let x = n as f64 + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    ZETA2_C * inv * (1.0 + inv * (0.5 + inv * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 / 42.0))))
}

/// Cumulative mass `P[X ≤ n]` of the ζ(2) law.
pub fn zeta2_cdf(n: u64) -> f64 {
    match n {
        0 => 0.0,
        n if n as usize <= ZETA2_TABLE_LEN => zeta2_cdf_table()[n as usize - 1],
        n => 1.0 - zeta2_tail(n),
    }
}

/// Inverts the ζ(2) CDF: the smallest `i` with `P[X ≤ i] ≥ u`.
pub fn zeta2_from_uniform(u: f64) -> Result<Ttl, TtlError> {
    let table = zeta2_cdf_table();
    let idx = table.partition_point(|&c| c < u);
    if idx < table.len() {
        return Ok(Ttl(idx as u64 + 1));
    }
    // Beyond the table: P[X > n] ≤ 1 - u is monotone in n, and
    // c/(n+1) ≤ P[X > n] ≤ c/n brackets the answer.
    let target = 1.0 - u;
    if target <= 0.0 {
        return Err(TtlError::Overflow("zeta2 sample"));
    }
    let hi_f = (ZETA2_C / target).ceil() + 1.0;
    if hi_f >= u64::MAX as f64 {
        return Err(TtlError::Overflow("zeta2 sample"));
    }
    let (mut lo, mut hi) = (ZETA2_TABLE_LEN as u64 + 1, hi_f as u64);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if zeta2_tail(mid) <= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(Ttl(lo))
}

pub fn sample_zeta2(rng: &mut RngStream) -> Result<Ttl, TtlError> {
    zeta2_from_uniform(rng.uniform())
}

/// Builds a BIN value from a stream of fair coins.
///
/// The string starts as `1`. At each step one coin decides whether the string
/// is finalized (`true`) and, if not, a second coin is appended as the next
/// bit.
pub fn sample_bin_with(mut coin: impl FnMut() -> bool) -> Result<Ttl, TtlError> {
    let mut value: u64 = 1;
    while !coin() {
        if value >> 63 != 0 {
            return Err(TtlError::Overflow("bin sample"));
        }
        value = (value << 1) | u64::from(coin());
    }
    Ok(Ttl(value))
}

pub fn sample_bin(rng: &mut RngStream) -> Result<Ttl, TtlError> {
    sample_bin_with(|| rng.bit())
}

/// Random TTLs drawn from the ζ(2) law.
#[derive(Debug, Clone)]
pub struct Zeta2Sampler(pub RngStream);

impl TtlSource for Zeta2Sampler {
    fn next_ttl(&mut self) -> Result<Ttl, TtlError> {
        sample_zeta2(&mut self.0)
    }
}

/// Random TTLs drawn from the BIN law (random counter search).
#[derive(Debug, Clone)]
pub struct BinSampler(pub RngStream);

impl TtlSource for BinSampler {
    fn next_ttl(&mut self) -> Result<Ttl, TtlError> {
        sample_bin(&mut self.0)
    }
}

/// Number of binary digits of `t`.
pub fn bit_length(t: u64) -> Result<u32, TtlError> {
    if t == 0 {
        Err(TtlError::BitLengthOfZero)
    } else {
        Ok(u64::BITS - t.leading_zeros())
    }
}

/// A prefix of a TTL sequence sorted non-increasingly, read as a bar graph of
/// unit-width bars.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KFront {
    bars: Vec<Ttl>,
}

impl KFront {
    pub fn bars(&self) -> &[Ttl] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    /// Whether the profile point `(x, y)` lies under the front.
    pub fn dominates(&self, x: f64, y: f64) -> bool {
        let col = x.ceil();
        if col.is_nan() || col < 1.0 || col > self.bars.len() as f64 {
            return false;
        }
        self.bars[col as usize - 1].get() as f64 >= y
    }
}

pub fn k_front(ttls: &[Ttl]) -> Result<KFront, TtlError> {
    if ttls.is_empty() {
        return Err(TtlError::EmptyFront);
    }
    let mut bars = ttls.to_vec();
    bars.sort_unstable_by(|a, b| b.cmp(a));
    Ok(KFront { bars })
}

pub fn front_dominates(front: &KFront, x: f64, y: f64) -> bool {
    front.dominates(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ttls(v: &[u64]) -> Vec<Ttl> {
        v.iter().map(|&t| Ttl::new(t).unwrap()).collect()
    }

    fn raw(v: &[Ttl]) -> Vec<u64> {
        v.iter().map(|t| t.get()).collect()
    }

    #[test]
    fn luby_prefix() {
        let mut seq = LubySequence::new();
        let got = raw(&seq.take_ttls(8).unwrap());
        assert_eq!(got, [1, 1, 2, 1, 1, 2, 4, 1]);
    }

    #[test]
    fn luby_counters_six_to_eight() {
        // c=6 → 1,2; c=7 → 1; c=8 → 1,2,4,8 (emissions 9..=15)
        let mut seq = LubySequence::new();
        let got = raw(&seq.take_ttls(15).unwrap());
        assert_eq!(&got[8..], &[1, 2, 1, 1, 2, 4, 8]);
        assert_eq!(seq.counter(), 8);
        assert_eq!(seq.pending().count(), 0);
    }

    #[test]
    fn luby_functional_form() {
        let (state, t) = luby_next(LubySequence::new()).unwrap();
        assert_eq!(t, Ttl::ONE);
        assert_eq!(state.counter(), 1);
        let (state, _) = luby_next(state).unwrap();
        assert_eq!(raw(&state.pending().collect::<Vec<_>>()), [2]);
    }

    #[test]
    fn luby_overflow_is_an_error() {
        let mut seq = LubySequence {
            counter: u64::MAX,
            pending: VecDeque::new(),
        };
        assert_eq!(seq.next_ttl(), Err(TtlError::Overflow("luby counter")));
    }

    #[test]
    fn fixed_is_constant() {
        let five = Ttl::new(5).unwrap();
        let mut src = FixedTtl(five);
        assert!(src.take_ttls(1000).unwrap().iter().all(|&t| t == five));
        assert_eq!(fixed_next(Ttl::ONE), Ttl::ONE);
        assert_eq!(fixed_next(Ttl::new(3).unwrap()).get(), 3);
    }

    #[test]
    fn zero_ttl_rejected() {
        assert_eq!(Ttl::new(0), Err(TtlError::Zero));
    }

    #[test]
    fn zeta2_inversion_points() {
        assert_eq!(zeta2_from_uniform(0.30).unwrap().get(), 1);
        assert_eq!(zeta2_from_uniform(0.70).unwrap().get(), 2);
        assert_eq!(zeta2_from_uniform(0.0).unwrap().get(), 1);
    }

    #[test]
    fn zeta2_tail_region_matches_table_boundary() {
        let n = ZETA2_TABLE_LEN as u64;
        let diff = (zeta2_cdf(n) - (1.0 - zeta2_tail(n))).abs();
        assert!(diff < 1e-14, "{diff}");
        // a variate just above the last table entry lands right after it
        let u = zeta2_cdf(n) + 1e-12;
        let t = zeta2_from_uniform(u).unwrap().get();
        assert!(t > n && t < n + 100, "{t}");
        // far tail still inverts to a finite, consistent value
        let u = 1.0 - 1e-12;
        let t = zeta2_from_uniform(u).unwrap().get();
        assert!(zeta2_tail(t) <= 1.0 - u && zeta2_tail(t - 1) > 1.0 - u);
    }

    #[test]
    fn zeta2_tail_bound() {
        for n in 2..=200u64 {
            assert!(1.0 - zeta2_cdf(n) <= ZETA2_C / (n - 1) as f64);
        }
        for n in [70_000u64, 1 << 20, 1 << 40] {
            assert!(1.0 - zeta2_cdf(n) <= ZETA2_C / (n - 1) as f64);
        }
    }

    #[test]
    fn bin_decision_stream() {
        // continue, bit 0, continue, bit 1, finalize → 101₂
        let mut coins = [false, false, false, true, true].into_iter();
        let v = sample_bin_with(|| coins.next().unwrap()).unwrap();
        assert_eq!(v.get(), 5);
        let v = sample_bin_with(|| true).unwrap();
        assert_eq!(v.get(), 1);
    }

    #[test]
    fn bin_overflow() {
        assert_eq!(
            sample_bin_with(|| false),
            Err(TtlError::Overflow("bin sample"))
        );
    }

    #[test]
    fn bit_lengths() {
        assert_eq!(bit_length(1), Ok(1));
        assert_eq!(bit_length(4), Ok(3));
        assert_eq!(bit_length(7), Ok(3));
        assert_eq!(bit_length(u64::MAX), Ok(64));
        assert_eq!(bit_length(0), Err(TtlError::BitLengthOfZero));
    }

    #[test]
    fn fronts() {
        let f = k_front(&ttls(&[1, 2, 7, 1, 3, 2, 7, 1])).unwrap();
        assert_eq!(raw(f.bars()), [7, 7, 3, 2, 2, 1, 1, 1]);
        assert_eq!(raw(k_front(&ttls(&[1])).unwrap().bars()), [1]);
        assert_eq!(raw(k_front(&ttls(&[1, 1, 2])).unwrap().bars()), [2, 1, 1]);
        assert_eq!(k_front(&[]), Err(TtlError::EmptyFront));
    }

    #[test]
    fn front_lookup() {
        let f = k_front(&ttls(&[7, 7, 3, 2, 2, 1, 1, 1])).unwrap();
        assert!(front_dominates(&f, 2.0, 7.0));
        assert!(!front_dominates(&f, 2.0, 8.0));
        assert!(front_dominates(&f, 1.0, 7.0));
        assert!(front_dominates(&f, 2.5, 3.0));
        assert!(!front_dominates(&f, 8.5, 1.0));
    }

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<_> = (0..32).map({
            let mut r = RngStream::new(42);
            move |_| r.next_u64()
        }).collect();
        let b: Vec<_> = (0..32).map({
            let mut r = RngStream::new(42);
            move |_| r.next_u64()
        }).collect();
        assert_eq!(a, b);
        assert_ne!(RngStream::derive(42, 0).next_u64(), RngStream::derive(42, 1).next_u64());
    }
}
