//! HepG2 medium change with a missing-tip fault: detect, suspend, replan with the remaining program, finish.

use labrun_core::detector::Detector;
use labrun_core::env::EnvConfig;
use labrun_core::ir::{render_program, ProtocolProgram};
use labrun_core::orchestrator::{execute_pipeline, FixtureProvider, Resolution, RunInput};
use labrun_core::sim::FaultInjection;

fn main() {
    let env = EnvConfig::default_lab();
    let detector = Detector::standard(&env).expect("calibration");
    let input = RunInput::Query("How to change the medium for HepG2 cells in detail?".into());
    let fault = FaultInjection::new(2, 1).expect("scenario 2");
    let mut session = execute_pipeline(
        &input,
        &env,
        &FixtureProvider::builtin(),
        detector,
        vec![fault],
    )
    .expect("pipeline");
    println!("status after first pass: {}", session.status());
    let alert = session.open_alert().expect("alert raised").clone();
    println!("alert {}: {}", alert.id, alert.message);
    let pc = session.executor().pc();
    let rest = ProtocolProgram::new(session.executor().program().instructions[pc..].to_vec());
    let text = render_program(&rest);
    println!("replanning with:\n{text}");
    session
        .resolve_alert(alert.id, &Resolution::ReplaceProgram { program: text })
        .expect("replan accepted");
    println!("final status: {}", session.run());
    println!("{} events", session.events().len());
}
