//! Runtime laws and the quantities derived from them: the proxy runtime
//! `R(t) = t / P[X ≤ t]`, the expected runtime `f(t)` of a fixed-threshold
//! restart, the optimal threshold, and the profile `(1/p, t*)`.
//!
//! For a discrete law both `f` and `R` attain their minimum on a support atom,
//! so every minimization here scans the finite support only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ttl::{neumaier_add, Ttl};

/// Tolerance on the total mass of an in-memory distribution.
pub const MASS_TOLERANCE: f64 = 1e-9;
/// Tolerance on the total mass of a distribution read from a file.
pub const FILE_MASS_TOLERANCE: f64 = 1e-6;
/// Censored fraction above which analysis output carries a warning.
pub const CENSORED_WARNING_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("P[X <= {0}] is zero; the quantity is undefined at this threshold")]
    Undefined(u64),
    #[error("distribution has no finite atom")]
    NoFiniteAtom,
    #[error("sample set has no successful run")]
    NoSuccesses,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("inconsistent samples: {0}")]
    InconsistentSamples(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A discrete runtime law over integer ticks plus an atom at +∞ (never
/// terminates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeDistribution {
    atoms: Vec<(u64, f64)>,
    infinite_mass: f64,
}

fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for v in values {
        neumaier_add(&mut s, &mut c, v);
    }
    s + c
}

impl RuntimeDistribution {
    /// Builds a law from `(tick, probability)` atoms and the mass at +∞.
    /// Duplicate ticks are merged and zero-mass atoms dropped.
    pub fn new(
        atoms: impl IntoIterator<Item = (u64, f64)>,
        infinite_mass: f64,
    ) -> Result<Self, ProfileError> {
        Self::with_tolerance(atoms, infinite_mass, MASS_TOLERANCE)
    }

    fn with_tolerance(
        atoms: impl IntoIterator<Item = (u64, f64)>,
        infinite_mass: f64,
        tolerance: f64,
    ) -> Result<Self, ProfileError> {
        let invalid = |m: String| Err(ProfileError::InvalidDistribution(m));
        let mut merged: BTreeMap<u64, f64> = BTreeMap::new();
        for (tick, p) in atoms {
            if tick == 0 {
                return invalid("runtimes are at least one tick".into());
            }
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("probability {p} of tick {tick} outside [0, 1]"));
            }
            *merged.entry(tick).or_default() += p;
        }
        if !(0.0..=1.0).contains(&infinite_mass) {
            return invalid(format!("infinite mass {infinite_mass} outside [0, 1]"));
        }
        let atoms: Vec<(u64, f64)> = merged.into_iter().filter(|&(_, p)| p > 0.0).collect();
        let total = compensated_sum(atoms.iter().map(|a| a.1).chain([infinite_mass]));
        if (total - 1.0).abs() > tolerance {
            return invalid(format!("total mass {total} differs from 1"));
        }
        if atoms.is_empty() && infinite_mass < 1.0 {
            return invalid("no finite atom carries mass".into());
        }
        Ok(RuntimeDistribution {
            atoms,
            infinite_mass,
        })
    }

    /// A law that always terminates after exactly `ticks`.
    pub fn deterministic(ticks: u64) -> Result<Self, ProfileError> {
        Self::new([(ticks, 1.0)], 0.0)
    }

    /// Finite atoms in increasing tick order.
    pub fn atoms(&self) -> &[(u64, f64)] {
        &self.atoms
    }

    pub fn infinite_mass(&self) -> f64 {
        self.infinite_mass
    }

    pub fn support(&self) -> impl Iterator<Item = u64> + '_ {
        self.atoms.iter().map(|a| a.0)
    }

    /// `P[X ≤ t]`.
    pub fn cdf(&self, t: u64) -> f64 {
        compensated_sum(self.atoms.iter().take_while(|a| a.0 <= t).map(|a| a.1))
    }

    /// Multiplies every support time by `s`.
    pub fn scaled(&self, s: u64) -> Result<Self, ProfileError> {
        let atoms = self
            .atoms
            .iter()
            .map(|&(t, p)| {
                t.checked_mul(s)
                    .map(|t| (t, p))
                    .ok_or_else(|| ProfileError::InvalidDistribution("tick overflow".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(atoms, self.infinite_mass)
    }

    /// Parses the text format: one `<tick> <probability>` per line, an
    /// optional `inf <probability>` line, `#` comments.
    pub fn parse(text: &str) -> Result<Self, ProfileError> {
        let mut atoms = Vec::new();
        let mut infinite = 0.0;
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| ProfileError::Parse {
                line: idx + 1,
                msg: msg.to_string(),
            };
            let mut fields = line.split_whitespace();
            let (Some(tick), Some(prob), None) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(err("expected `<tick> <probability>`"));
            };
            let prob: f64 = prob.parse().map_err(|_| err("bad probability"))?;
            if tick.eq_ignore_ascii_case("inf") {
                infinite += prob;
            } else {
                let tick: u64 = tick.parse().map_err(|_| err("bad tick"))?;
                atoms.push((tick, prob));
            }
        }
        let raw = Self::with_tolerance(atoms, infinite, FILE_MASS_TOLERANCE)?;
        raw.normalized()
    }

    fn normalized(self) -> Result<Self, ProfileError> {
        let total = compensated_sum(self.atoms.iter().map(|a| a.1).chain([self.infinite_mass]));
        Self::new(
            self.atoms.into_iter().map(|(t, p)| (t, p / total)),
            self.infinite_mass / total,
        )
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ProfileError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Renders the law in the text format accepted by [`Self::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, p) in &self.atoms {
            let _ = writeln!(out, "{t} {p}");
        }
        if self.infinite_mass > 0.0 {
            let _ = writeln!(out, "inf {}", self.infinite_mass);
        }
        out
    }

    /// Per support point: `(t, P[X ≤ t], Σ_{x≤t} x·p(x), P[X > t])`.
    fn prefix_scan(&self) -> Vec<(u64, f64, f64, f64)> {
        let n = self.atoms.len();
        // suffix sums so P[X > t] never comes from 1 - cdf cancellation
        let mut tail = vec![0.0; n];
        let (mut s, mut c) = (self.infinite_mass, 0.0);
        for i in (0..n).rev() {
            tail[i] = s + c;
            neumaier_add(&mut s, &mut c, self.atoms[i].1);
        }
        let (mut mass, mut mass_c) = (0.0, 0.0);
        let (mut first, mut first_c) = (0.0, 0.0);
        self.atoms
            .iter()
            .zip(tail)
            .map(|(&(t, p), tail)| {
                neumaier_add(&mut mass, &mut mass_c, p);
                neumaier_add(&mut first, &mut first_c, t as f64 * p);
                (t, mass + mass_c, first + first_c, tail)
            })
            .collect()
    }

    fn parts_at(&self, t: u64) -> (f64, f64, f64) {
        let (mut mass, mut mass_c, mut first, mut first_c) = (0.0, 0.0, 0.0, 0.0);
        let (mut tail, mut tail_c) = (self.infinite_mass, 0.0);
        for &(x, p) in &self.atoms {
            if x <= t {
                neumaier_add(&mut mass, &mut mass_c, p);
                neumaier_add(&mut first, &mut first_c, x as f64 * p);
            } else {
                neumaier_add(&mut tail, &mut tail_c, p);
            }
        }
        (mass + mass_c, first + first_c, tail + tail_c)
    }
}

fn ttl_f(mass: f64, first: f64, tail: f64, t: u64) -> f64 {
    first / mass + tail / mass * t as f64
}

/// `R(t) = t / P[X ≤ t]`.
pub fn proxy_runtime(dist: &RuntimeDistribution, t: Ttl) -> Result<f64, ProfileError> {
    let mass = dist.cdf(t.get());
    if mass <= 0.0 {
        return Err(ProfileError::Undefined(t.get()));
    }
    Ok(t.get() as f64 / mass)
}

/// Expected total runtime of restarting with the fixed threshold `t`:
/// `f(t) = E[X | X ≤ t] + (P[X > t] / P[X ≤ t])·t`.
pub fn expected_ttl_runtime(dist: &RuntimeDistribution, t: Ttl) -> Result<f64, ProfileError> {
    let (mass, first, tail) = dist.parts_at(t.get());
    if mass <= 0.0 {
        return Err(ProfileError::Undefined(t.get()));
    }
    Ok(ttl_f(mass, first, tail, t.get()))
}

/// The threshold minimizing `f`, with `f` at that point. Ties go to the
/// smallest threshold.
pub fn optimal_threshold(dist: &RuntimeDistribution) -> Result<(Ttl, f64), ProfileError> {
    let mut best: Option<(u64, f64)> = None;
    for (t, mass, first, tail) in dist.prefix_scan() {
        let f = ttl_f(mass, first, tail, t);
        if best.is_none_or(|(_, b)| f < b) {
            best = Some((t, f));
        }
    }
    let (t, f) = best.ok_or(ProfileError::NoFiniteAtom)?;
    Ok((Ttl::new(t).expect("support ticks are positive"), f))
}

/// The profile `(1/p, t*)` of a law together with its optimal threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Profile {
    /// `1/p` where `p = P[X ≤ t*]`.
    pub inv_p: f64,
    /// Minimizer of the proxy runtime.
    pub t_star: Ttl,
    /// `t* / p`.
    pub work: f64,
    pub opt_threshold: Ttl,
    /// `f(opt_threshold)`, the best expected runtime of any restart strategy.
    pub opt_expected: f64,
}

pub fn compute_profile(dist: &RuntimeDistribution) -> Result<Profile, ProfileError> {
    let mut best: Option<(u64, f64, f64)> = None;
    for (t, mass, _, _) in dist.prefix_scan() {
        let r = t as f64 / mass;
        if best.is_none_or(|(_, b, _)| r < b) {
            best = Some((t, r, mass));
        }
    }
    let (t_star, work, mass) = best.ok_or(ProfileError::NoFiniteAtom)?;
    let (opt_threshold, opt_expected) = optimal_threshold(dist)?;
    Ok(Profile {
        inv_p: 1.0 / mass,
        t_star: Ttl::new(t_star).expect("support ticks are positive"),
        work,
        opt_threshold,
        opt_expected,
    })
}

/// One row of the threshold table printed by the analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub t: u64,
    pub f: f64,
    pub r: f64,
}

/// `f(t)` and `R(t)` at every support point.
pub fn threshold_table(dist: &RuntimeDistribution) -> Vec<ThresholdRow> {
    dist.prefix_scan()
        .into_iter()
        .map(|(t, mass, first, tail)| ThresholdRow {
            t,
            f: ttl_f(mass, first, tail, t),
            r: t as f64 / mass,
        })
        .collect()
}

/// Observed runtimes, possibly censored by an experiment cap.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleSet {
    pub successes: Vec<u64>,
    pub censored_at: Option<u64>,
    pub n_censored: usize,
}

#[derive(Debug, Deserialize)]
struct SampleRow {
    runtime_ticks: u64,
    censored: u8,
}

impl SampleSet {
    pub fn new(
        successes: Vec<u64>,
        censored_at: Option<u64>,
        n_censored: usize,
    ) -> Result<Self, ProfileError> {
        if n_censored > 0 && censored_at.is_none() {
            return Err(ProfileError::InconsistentSamples(
                "censored runs without a cap".into(),
            ));
        }
        if let Some(cap) = censored_at {
            if let Some(&bad) = successes.iter().find(|&&s| s > cap) {
                return Err(ProfileError::InconsistentSamples(format!(
                    "success at {bad} exceeds cap {cap}"
                )));
            }
        }
        Ok(SampleSet {
            successes,
            censored_at,
            n_censored,
        })
    }

    /// Reads CSV with header `runtime_ticks,censored`. The cap is taken as the
    /// largest censored runtime.
    pub fn from_csv(reader: impl Read) -> Result<Self, ProfileError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["runtime_ticks", "censored"] {
            return Err(ProfileError::Parse {
                line: 1,
                msg: "expected header `runtime_ticks,censored`".into(),
            });
        }
        let mut successes = Vec::new();
        let mut cap: Option<u64> = None;
        let mut n_censored = 0;
        for (i, row) in rdr.deserialize::<SampleRow>().enumerate() {
            let row = row?;
            match row.censored {
                0 => successes.push(row.runtime_ticks),
                1 => {
                    n_censored += 1;
                    cap = Some(cap.map_or(row.runtime_ticks, |c| c.max(row.runtime_ticks)));
                }
                other => {
                    return Err(ProfileError::Parse {
                        line: i + 2,
                        msg: format!("censored must be 0 or 1, got {other}"),
                    })
                }
            }
        }
        Self::new(successes, cap, n_censored)
    }

    pub fn len(&self) -> usize {
        self.successes.len() + self.n_censored
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.n_censored as f64 / self.len() as f64
        }
    }

    pub fn censoring_warning(&self) -> Option<String> {
        let frac = self.censored_fraction();
        (frac > CENSORED_WARNING_FRACTION).then(|| {
            format!(
                "warning: {:.1}% of runs were censored; censored runs are treated as never \
                 terminating, so the estimated tail is pessimistic",
                100.0 * frac
            )
        })
    }
}

/// Frequency law of the samples; censored runs become mass at +∞.
pub fn empirical_distribution(samples: &SampleSet) -> Result<RuntimeDistribution, ProfileError> {
    if samples.successes.is_empty() {
        return Err(ProfileError::NoSuccesses);
    }
    let n = samples.len() as f64;
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for &s in &samples.successes {
        if s == 0 {
            return Err(ProfileError::InconsistentSamples(
                "runtimes are at least one tick".into(),
            ));
        }
        *counts.entry(s).or_default() += 1;
    }
    RuntimeDistribution::new(
        counts.into_iter().map(|(t, c)| (t, c as f64 / n)),
        samples.n_censored as f64 / n,
    )
}
