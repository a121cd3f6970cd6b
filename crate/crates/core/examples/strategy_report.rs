//! Simulates every strategy against a runtime law file (or a built-in law)
//! and prints the results table followed by the same data as CSV.
//!
//!     cargo run --release --example strategy_report -- law.txt

use catalyst::profile::RuntimeDistribution;
use catalyst::sim::{run_trials, SlotPolicy, StrategyKind, StrategySpec};
use catalyst::stats::{render_table, summarize_sim, to_csv_string};
use catalyst::ttl::Ttl;

const BUILT_IN: &str = "\
# mostly quick, sometimes slow, sometimes never
2 0.45
60 0.25
900 0.05
inf 0.25
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let law = match std::env::args().nth(1) {
        Some(path) => RuntimeDistribution::from_path(path.as_ref())?,
        None => RuntimeDistribution::parse(BUILT_IN)?,
    };
    let cap = 3000;
    let trials = 2000;
    let specs = [
        StrategySpec::solo(StrategyKind::Single),
        StrategySpec::new(StrategyKind::ParallelOr, 4)?,
        StrategySpec::solo(StrategyKind::Fixed { ttl: Ttl::new(2)? }),
        StrategySpec::solo(StrategyKind::Counter),
        StrategySpec::new(StrategyKind::Counter, 4)?,
        StrategySpec::solo(StrategyKind::RandomZeta2),
        StrategySpec::solo(StrategyKind::RandomCounter),
        StrategySpec::solo(StrategyKind::Wide { policy: SlotPolicy::Doubling }),
        StrategySpec::solo(StrategyKind::CounterCache { capacity: 4 }),
    ];
    let mut reports = Vec::new();
    for spec in specs {
        let outcomes = run_trials(&law, spec, cap, trials, 2024)?;
        reports.push(summarize_sim(spec.label(), &outcomes));
    }
    print!("{}", render_table(&reports));
    println!();
    print!("{}", to_csv_string(&reports));
    Ok(())
}
