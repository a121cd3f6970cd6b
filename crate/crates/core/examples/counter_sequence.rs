//! Prints the first TTLs of counter search and the k-front they induce.
//!
//!     cargo run --example counter_sequence -- 32

use catalyst::ttl::{k_front, LubySequence, TtlSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args().nth(1).map_or(Ok(32), |s| s.parse())?;
    let mut luby = LubySequence::new();
    let ttls = luby.take_ttls(n)?;
    let line: Vec<String> = ttls.iter().map(|t| t.to_string()).collect();
    println!("{}", line.join(" "));
    println!("counter after {n} TTLs: {}", luby.counter());

    let front = k_front(&ttls)?;
    let bars: Vec<String> = front.bars().iter().map(|t| t.to_string()).collect();
    println!("k-front bars (tallest first): {}", bars.join(" "));
    Ok(())
}
