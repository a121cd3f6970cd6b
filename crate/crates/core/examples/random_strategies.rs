//! Draws TTLs from the zeta(2) and BIN laws and compares the randomized
//! strategies with counter search on a few scaled single-atom laws.

use catalyst::profile::RuntimeDistribution;
use catalyst::sim::{run_trials, StrategyKind, StrategySpec};
use catalyst::stats::summarize_sim;
use catalyst::ttl::{sample_bin, sample_zeta2, RngStream};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = RngStream::new(7);
    let zeta: Vec<u64> = (0..12).map(|_| sample_zeta2(&mut rng).map(|t| t.get())).collect::<Result<_, _>>()?;
    let bin: Vec<u64> = (0..12).map(|_| sample_bin(&mut rng).map(|t| t.get())).collect::<Result<_, _>>()?;
    println!("zeta(2): {zeta:?}");
    println!("BIN:     {bin:?}");

    for w in [10, 100, 1000] {
        let law = RuntimeDistribution::deterministic(w)?;
        println!("\nhidden runtime {w}");
        for kind in [StrategyKind::Counter, StrategyKind::RandomZeta2, StrategyKind::RandomCounter] {
            let spec = StrategySpec::solo(kind);
            let outcomes = run_trials(&law, spec, u64::MAX / 4, 2000, 3)?;
            let r = summarize_sim(spec.label(), &outcomes);
            let s = r.stats.expect("all trials succeed without a cap");
            println!("  {:<16} mean {:>10.1}  ({:.1} x runtime)", r.label, s.mean, s.mean / w as f64);
        }
    }
    Ok(())
}
