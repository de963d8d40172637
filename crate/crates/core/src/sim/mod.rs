//! Discrete-event simulated lab: concrete world state, micro-phase execution of the
//! eleven primitives, fault scenarios, and the frames and events a run produces.

mod exec;
mod fault;
mod phase;
mod world;

use thiserror::Error;

pub use exec::{
    run_program, step, AlertCause, EventKind, ExecutionEvent, Executor, FrameSubject, Monitor,
    NoMonitor, ObservationFrame, RunLog, RunStatus, StepResult, Verdict,
};
pub use fault::{
    scenario, FaultInjection, Perturbation, Scenario, SourceReq, Trigger, TriggerPoint, SCENARIOS,
};
pub use phase::{action_classes, phase_spec, phases, ActionClass, Fact, Phase, PhaseSpec, Stage};
pub use world::{
    mass_balance, new_world, Centrifuge, ContainerState, Jams, Liquids, Location, Pipette,
    Platforms, WorldState,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown fault scenario {0}")]
    UnknownScenario(u8),
    #[error("scenario {scenario_id} cannot trigger at instruction {index}: {reason}")]
    IncompatibleTrigger {
        scenario_id: u8,
        index: usize,
        reason: String,
    },
    #[error("operation not allowed while the run is {0}")]
    InvalidState(RunStatus),
}
