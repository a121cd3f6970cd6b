//! Counter search with a cache of suspended runs. On a deterministic law
//! the cache turns the repeated short attempts into progress.

use catalyst::profile::RuntimeDistribution;
use catalyst::sim::{simulate, StrategyKind, StrategySpec};
use catalyst::ttl::RngStream;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for w in [5, 50, 500] {
        let law = RuntimeDistribution::deterministic(w)?;
        let plain = simulate(&law, StrategySpec::solo(StrategyKind::Counter), 1 << 40, &mut RngStream::new(0))?;
        println!("runtime {w}: counter total work {}", plain.total_work);
        for capacity in [1, 2, 4, 16] {
            let spec = StrategySpec::solo(StrategyKind::CounterCache { capacity });
            let o = simulate(&law, spec, 1 << 40, &mut RngStream::new(0))?;
            println!(
                "  cache {capacity:>2}: total work {:>6}  attempts {:>5}  peak cached {}",
                o.total_work, o.attempts, o.peak_suspended
            );
        }
    }
    Ok(())
}
