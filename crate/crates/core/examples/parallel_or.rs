//! Running 64 copies side by side without restarts still fails about half
//! the time on the one-in-a-hundred law: (99/100)^64 ≈ 0.5256.

use catalyst::profile::RuntimeDistribution;
use catalyst::sim::{run_trials, StrategyKind, StrategySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let law = RuntimeDistribution::new([(1, 0.01)], 0.99)?;
    let trials = 100_000;
    for workers in [1, 8, 64, 256] {
        let spec = StrategySpec::new(StrategyKind::ParallelOr, workers)?;
        let outcomes = run_trials(&law, spec, 3000, trials, 42)?;
        let fails = outcomes.iter().filter(|o| !o.success).count();
        println!(
            "{workers:>4} workers: failure rate {:.4} (exact {:.4})",
            fails as f64 / trials as f64,
            0.99f64.powi(workers as i32)
        );
    }
    Ok(())
}
