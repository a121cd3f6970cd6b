//! Estimates the optimal restart threshold from observed runtimes, some of
//! them censored by the experiment cap.

use catalyst::profile::{compute_profile, empirical_distribution, threshold_table, SampleSet};

const SAMPLES: &str = "\
runtime_ticks,censored
3,0
4,0
3,0
250,0
3,0
900,0
5,0
3000,1
3000,1
4,0
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let samples = SampleSet::from_csv(SAMPLES.as_bytes())?;
    if let Some(w) = samples.censoring_warning() {
        eprintln!("warning: {w}");
    }
    let law = empirical_distribution(&samples)?;
    let p = compute_profile(&law)?;
    println!("{} samples, {:.0}% censored", samples.len(), 100.0 * samples.censored_fraction());
    println!("profile (1/p, t*) = ({:.3}, {})  work {:.2}", p.inv_p, p.t_star, p.work);
    println!("restart every {} ticks: expected {:.2}", p.opt_threshold, p.opt_expected);
    println!("\n{:>6} {:>10} {:>10}", "t", "f(t)", "R(t)");
    for row in threshold_table(&law) {
        println!("{:>6} {:>10.2} {:>10.2}", row.t, row.f, row.r);
    }
    Ok(())
}
