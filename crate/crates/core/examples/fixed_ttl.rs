//! The classic motivating law: a run finishes in one tick with probability
//! 1/100 and otherwise never. Restarting every tick gives an expected
//! runtime of 100 ticks; never restarting fails 99% of the time.

use catalyst::profile::{compute_profile, expected_ttl_runtime, RuntimeDistribution};
use catalyst::sim::{run_trials, StrategyKind, StrategySpec};
use catalyst::stats::summarize_sim;
use catalyst::ttl::Ttl;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let law = RuntimeDistribution::new([(1, 0.01)], 0.99)?;
    let profile = compute_profile(&law)?;
    println!(
        "optimal threshold {} with expected runtime {:.1}",
        profile.opt_threshold, profile.opt_expected
    );
    println!("f(1) = {:.1}", expected_ttl_runtime(&law, Ttl::ONE)?);

    let cap = 3000;
    let trials = 10_000;
    for kind in [StrategyKind::Fixed { ttl: Ttl::ONE }, StrategyKind::Single] {
        let spec = StrategySpec::solo(kind);
        let outcomes = run_trials(&law, spec, cap, trials, 1)?;
        let r = summarize_sim(spec.label(), &outcomes);
        let mean = r.stats.map_or(f64::NAN, |s| s.mean);
        println!("{:<8} succs {:>5}  fails {:>5}  mean {mean:.1}", r.label, r.successes, r.failures);
    }
    Ok(())
}
