//! Runs the passaging fixture with an optional `SCENARIO@INDEX[:PHASE]` fault and prints the event log.

use labrun_core::env::EnvConfig;
use labrun_core::fixtures;
use labrun_core::sim::{mass_balance, run_program, FaultInjection, NoMonitor};

fn main() {
    let env = EnvConfig::default_lab();
    let faults: Vec<FaultInjection> = std::env::args()
        .skip(1)
        .map(|s| FaultInjection::parse_spec(&s).unwrap_or_else(|e| panic!("{e}")))
        .collect();
    let log =
        run_program(&fixtures::passaging(), &env, faults, &mut NoMonitor).expect("fault plan");
    for e in &log.events {
        let at = e.index.map_or("-".to_string(), |i| i.to_string());
        println!("{:>4} {:>3} {:>8.1}s {}", e.seq, at, e.clock, e.kind.name());
    }
    println!("status: {}", log.status);
    for (liquid, v) in mass_balance(&log.world) {
        println!("  {liquid:<24} {v:>8.3} mL");
    }
}
