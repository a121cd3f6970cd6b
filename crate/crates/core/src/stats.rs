//! Descriptive statistics over trial outcomes, in the usual results-table
//! layout: successes, failures, then mean / median / standard deviation /
//! min / max over the successful trials only.

use std::fmt::Write as _;
use std::io;

use serde::Serialize;
use thiserror::Error;

use crate::sim::SimOutcome;
use crate::ttl::neumaier_add;

pub const CSV_HEADER: [&str; 9] = [
    "simulation", "n", "succs", "fails", "mean", "median", "std_dev", "min", "max",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("alpha-median of an empty sample")]
    Empty,
    #[error("alpha must lie in (0, 1)")]
    Alpha,
}

/// How a single trial ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TrialOutcome {
    /// Succeeded after this many ticks.
    Success(f64),
    /// Hit the cap.
    Failure,
}

impl From<&SimOutcome> for TrialOutcome {
    fn from(o: &SimOutcome) -> Self {
        if o.success {
            TrialOutcome::Success(o.time_to_success as f64)
        } else {
            TrialOutcome::Failure
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Descriptive {
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation (`n − 1` denominator); zero for one sample.
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub label: String,
    pub n: usize,
    pub successes: usize,
    pub failures: usize,
    /// Absent when no trial succeeded.
    pub stats: Option<Descriptive>,
}

/// Summarizes a batch. Statistics cover successful trials only.
pub fn summarize(label: impl Into<String>, outcomes: &[TrialOutcome]) -> Report {
    let mut times: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| match o {
            TrialOutcome::Success(t) => Some(*t),
            TrialOutcome::Failure => None,
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let stats = (!times.is_empty()).then(|| describe_sorted(&times));
    Report {
        label: label.into(),
        n: outcomes.len(),
        successes: times.len(),
        failures: outcomes.len() - times.len(),
        stats,
    }
}

pub fn summarize_sim(label: impl Into<String>, outcomes: &[SimOutcome]) -> Report {
    let outcomes: Vec<TrialOutcome> = outcomes.iter().map(TrialOutcome::from).collect();
    summarize(label, &outcomes)
}

fn describe_sorted(sorted: &[f64]) -> Descriptive {
    let n = sorted.len() as f64;
    let (mut s, mut c) = (0.0, 0.0);
    for &x in sorted {
        neumaier_add(&mut s, &mut c, x);
    }
    let mean = (s + c) / n;
    let (mut ss, mut sc) = (0.0, 0.0);
    for &x in sorted {
        neumaier_add(&mut ss, &mut sc, (x - mean) * (x - mean));
    }
    let std_dev = if sorted.len() > 1 {
        ((ss + sc) / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Descriptive {
        mean,
        median: alpha_median_sorted(sorted, 0.5),
        std_dev,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    }
}

/// The smallest sample value `t` with `P[X < t] ≤ α` and `P[X > t] ≤ 1 − α`
/// under the empirical law. `α = 1/2` gives the lower median.
pub fn alpha_median(samples: &[f64], alpha: f64) -> Result<f64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::Alpha);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(alpha_median_sorted(&sorted, alpha))
}

fn alpha_median_sorted(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    let slack = 1e-12 * n as f64;
    let mut i = 0;
    while i < n {
        let x = sorted[i];
        let below = i;
        let mut j = i;
        while j < n && sorted[j] == x {
            j += 1;
        }
        let above = n - j;
        if below as f64 <= alpha * n as f64 + slack
            && above as f64 <= (1.0 - alpha) * n as f64 + slack
        {
            return x;
        }
        i = j;
    }
    sorted[n - 1]
}

fn fmt2(x: f64) -> String {
    format!("{x:.2}")
}

impl Report {
    fn csv_fields(&self) -> Vec<String> {
        let mut row = vec![
            self.label.clone(),
            self.n.to_string(),
            self.successes.to_string(),
            self.failures.to_string(),
        ];
        match &self.stats {
            Some(s) => row.extend([s.mean, s.median, s.std_dev, s.min, s.max].map(fmt2)),
            None => row.extend(std::iter::repeat_n(String::new(), 5)),
        }
        row
    }
}

/// Writes reports as CSV, one row per strategy.
pub fn write_csv<W: io::Write>(reports: &[Report], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(CSV_HEADER)?;
    for r in reports {
        wtr.write_record(r.csv_fields())?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn to_csv_string(reports: &[Report]) -> String {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

/// Plain-text table for terminals.
pub fn render_table(reports: &[Report]) -> String {
    let width = reports.iter().map(|r| r.label.len()).max().unwrap_or(0).max(10);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$} {:>6} {:>6} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "Simulation", "#", "Succs", "Fails", "Mean", "Median", "Std Dev", "Min", "Max"
    );
    for r in reports {
        let _ = write!(
            out,
            "{:<width$} {:>6} {:>6} {:>6}",
            r.label, r.n, r.successes, r.failures
        );
        match &r.stats {
            Some(s) => {
                for v in [s.mean, s.median, s.std_dev, s.min, s.max] {
                    let _ = write!(out, " {v:>10.2}");
                }
            }
            None => {
                for _ in 0..5 {
                    let _ = write!(out, " {:>10}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}
