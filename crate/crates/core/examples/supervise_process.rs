//! Supervises a real program. The shell script below succeeds on about one
//! start in four (after a short delay) and otherwise hangs; counter search
//! restarts it until a run writes `$CATALYST_SUCCESS_FILE`.

use std::time::Duration;

use catalyst::exec::{run_experiment, ExecConfig};
use catalyst::sim::{StrategyKind, StrategySpec};
use catalyst::stats::{render_table, summarize, TrialOutcome};

const SCRIPT: &str = r#"
r=$(( CATALYST_RUN_ID % 4 ))
if [ "$r" -eq 0 ]; then sleep 0.15; echo done > "$CATALYST_SUCCESS_FILE"; else sleep 1000; fi
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let command = vec!["sh".to_string(), "-c".to_string(), SCRIPT.to_string()];
    let config = ExecConfig {
        tick: Duration::from_millis(100),
        workdir_root: std::env::temp_dir().join("catalyst-example"),
        keep_failed: false,
        kill_grace: Duration::from_millis(200),
        ..ExecConfig::default()
    };
    let mut reports = Vec::new();
    for kind in [StrategyKind::Counter, StrategyKind::Fixed { ttl: catalyst::ttl::Ttl::new(2)? }] {
        let spec = StrategySpec::solo(kind);
        let records = run_experiment(&command, spec, 200, 5, 1, &config)?;
        for r in &records {
            println!("{} trial {}: {:?} after {} attempts", spec.label(), r.trial, r.outcome, r.attempts.len());
        }
        let outcomes: Vec<TrialOutcome> = records.iter().map(TrialOutcome::from).collect();
        reports.push(summarize(spec.label(), &outcomes));
    }
    print!("\n{}", render_table(&reports));
    Ok(())
}
