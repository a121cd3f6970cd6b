//! Wide search gives copy i one tick out of every i. Prints the schedule
//! and simulates both slot policies on a heavy-tailed law.

use catalyst::profile::RuntimeDistribution;
use catalyst::sim::{run_trials, SlotPolicy, StrategyKind, StrategySpec, WideState};
use catalyst::stats::summarize_sim;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut state = WideState::new(SlotPolicy::Unit);
    println!("lead time -> copy");
    while state.peek_due() <= 6 {
        let slot = state.next_slot();
        println!("{:>4} -> {}{}", slot.lead_time, slot.copy, if slot.fresh { " (new)" } else { "" });
    }
    let t = state.now();
    for i in 1..=state.copies() as u64 {
        println!("copy {i}: {} ticks (floor({t}/{i}) = {})", state.run_ticks(i).unwrap_or(0), t / i);
    }

    let law = RuntimeDistribution::new([(2, 0.3), (40, 0.2)], 0.5)?;
    for policy in [SlotPolicy::Unit, SlotPolicy::Doubling] {
        let spec = StrategySpec::solo(StrategyKind::Wide { policy });
        let outcomes = run_trials(&law, spec, 3000, 5000, 11)?;
        let r = summarize_sim(spec.label(), &outcomes);
        let copies = outcomes.iter().map(|o| o.attempts).sum::<u64>() as f64 / outcomes.len() as f64;
        let peak = outcomes.iter().map(|o| o.peak_suspended).max().unwrap_or(0);
        println!(
            "{:<12} mean {:>7.2}  copies/trial {copies:.2}  peak suspended {peak}",
            r.label,
            r.stats.map_or(f64::NAN, |s| s.mean)
        );
    }
    Ok(())
}
