use serde::{Deserialize, Serialize};

use super::provider::WorkflowProvider;
use crate::checker::{
    check_program, check_program_from, AbstractLabState, CheckError, CheckFinding, CheckedProgram,
};
use crate::detector::{AnomalyReport, Detector};
use crate::env::EnvConfig;
use crate::ir::{parse_program, FunctionRegistry, IrError, ProtocolProgram};
use crate::sim::{
    AlertCause, EventKind, ExecutionEvent, Executor, FaultInjection, RunLog, RunStatus, SimError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "text", rename_all = "snake_case")]
pub enum RunInput {
    Program(String),
    Query(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("workflow provider failed: {0}")]
    ProviderFailure(String),
    #[error("protocol does not parse: {0}")]
    ParseFailure(IrError),
    #[error("{0}")]
    UnrepairableProgram(CheckError),
    #[error("fault plan rejected: {0}")]
    FaultPlan(SimError),
}

impl PipelineError {
    pub fn findings(&self) -> &[CheckFinding] {
        match self {
            PipelineError::UnrepairableProgram(e) => e.findings(),
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OrchestratorError {
    #[error("no alert {0}")]
    UnknownAlert(u32),
    #[error("alert {0} is already resolved")]
    AlertNotOpen(u32),
    #[error("run is {0}, not awaiting a replan")]
    RunNotSuspended(RunStatus),
    #[error("run is already {0}")]
    AlreadyTerminal(RunStatus),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Resolution {
    Resume,
    Abort,
    ReplaceProgram { program: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertOutcome {
    Resumed,
    Aborted,
    Replanned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "resolution", rename_all = "snake_case")]
pub enum AlertState {
    Open,
    Resolved(AlertOutcome),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub id: u32,
    /// Sequence number of the AlertRaised event.
    pub seq: u64,
    pub index: Option<usize>,
    pub cause: AlertCause,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<AnomalyReport>,
    pub state: AlertState,
    pub created_clock: f64,
}

/// Parses protocol text with the builtin registry.
pub fn parse_protocol(text: &str) -> Result<ProtocolProgram, PipelineError> {
    parse_program(text, &FunctionRegistry::builtin()).map_err(PipelineError::ParseFailure)
}

/// One monitored run: executor, detector and the alerts it has raised.
#[derive(Clone)]
pub struct RunSession {
    env: EnvConfig,
    executor: Executor,
    detector: Detector,
    alerts: Vec<Alert>,
    transcript: Option<String>,
    checked: CheckedProgram,
    scanned: usize,
}

impl RunSession {
    /// Resolves, parses and checks the protocol, then arms the executor. Nothing runs yet.
    pub fn start(
        input: &RunInput,
        env: &EnvConfig,
        provider: &dyn WorkflowProvider,
        detector: Detector,
        faults: Vec<FaultInjection>,
    ) -> Result<Self, PipelineError> {
        let (text, transcript) = match input {
            RunInput::Program(t) => (t.clone(), None),
            RunInput::Query(q) => {
                let t = provider
                    .generate(q, env)
                    .map_err(|e| PipelineError::ProviderFailure(e.to_string()))?;
                (t.clone(), Some(t))
            }
        };
        let program = parse_protocol(&text)?;
        let checked = check_program(&program, env).map_err(PipelineError::UnrepairableProgram)?;
        let mut executor = Executor::new(checked.program.clone(), env, faults)
            .map_err(PipelineError::FaultPlan)?;
        executor.note_check(checked.findings.len(), checked.repairs());
        Ok(Self {
            env: env.clone(),
            executor,
            detector,
            alerts: Vec::new(),
            transcript,
            checked,
            scanned: 0,
        })
    }

    pub fn status(&self) -> RunStatus {
        self.executor.status()
    }

    pub fn events(&self) -> &[ExecutionEvent] {
        self.executor.events()
    }

    pub fn alerts(&self) -> &[Alert] {
        &self.alerts
    }

    pub fn open_alert(&self) -> Option<&Alert> {
        self.alerts.iter().find(|a| a.state == AlertState::Open)
    }

    pub fn transcript(&self) -> Option<&str> {
        self.transcript.as_deref()
    }

    pub fn checked(&self) -> &CheckedProgram {
        &self.checked
    }

    pub fn executor(&self) -> &Executor {
        &self.executor
    }

    pub fn env(&self) -> &EnvConfig {
        &self.env
    }

    /// Executes one micro-phase; returns how many events it appended.
    pub fn step(&mut self) -> usize {
        let n = self.executor.step(&mut self.detector);
        self.scan();
        n
    }

    /// Steps until the run completes or suspends.
    pub fn run(&mut self) -> RunStatus {
        while self.status() == RunStatus::Running {
            self.step();
        }
        self.status()
    }

    fn scan(&mut self) {
        let events = self.executor.events();
        for e in &events[self.scanned..] {
            if let EventKind::AlertRaised {
                cause,
                message,
                report,
            } = &e.kind
            {
                let state = match cause {
                    AlertCause::OperatorStop => AlertState::Resolved(AlertOutcome::Aborted),
                    _ => AlertState::Open,
                };
                self.alerts.push(Alert {
                    id: self.alerts.len() as u32 + 1,
                    seq: e.seq,
                    index: e.index,
                    cause: cause.clone(),
                    message: message.clone(),
                    report: report.clone(),
                    state,
                    created_clock: e.clock,
                });
            }
        }
        self.scanned = events.len();
    }

    /// Parses and checks `text` against the current world, as a replacement would be.
    pub fn check_replacement(&self, text: &str) -> Result<CheckedProgram, PipelineError> {
        let program = parse_protocol(text)?;
        let start = AbstractLabState::from_world(self.executor.world());
        check_program_from(&program, &self.env, start).map_err(PipelineError::UnrepairableProgram)
    }

    /// Applies an operator decision to an open alert. A rejected replacement leaves the alert open.
    pub fn resolve_alert(
        &mut self,
        alert_id: u32,
        resolution: &Resolution,
    ) -> Result<(), OrchestratorError> {
        let pos = self
            .alerts
            .iter()
            .position(|a| a.id == alert_id)
            .ok_or(OrchestratorError::UnknownAlert(alert_id))?;
        if self.alerts[pos].state != AlertState::Open {
            return Err(OrchestratorError::AlertNotOpen(alert_id));
        }
        let status = self.status();
        if status != RunStatus::AwaitingReplan {
            return Err(OrchestratorError::RunNotSuspended(status));
        }
        let suspended = |e: SimError| match e {
            SimError::InvalidState(s) => OrchestratorError::RunNotSuspended(s),
            other => OrchestratorError::Pipeline(PipelineError::FaultPlan(other)),
        };
        let outcome = match resolution {
            Resolution::Resume => {
                self.executor.resume().map_err(suspended)?;
                AlertOutcome::Resumed
            }
            Resolution::Abort => {
                self.executor.abort_run().map_err(suspended)?;
                AlertOutcome::Aborted
            }
            Resolution::ReplaceProgram { program } => {
                let checked = self.check_replacement(program)?;
                self.executor
                    .replace_program(checked.program.clone())
                    .map_err(suspended)?;
                self.executor
                    .note_check(checked.findings.len(), checked.repairs());
                self.checked = checked;
                AlertOutcome::Replanned
            }
        };
        self.alerts[pos].state = AlertState::Resolved(outcome);
        self.scan();
        Ok(())
    }

    pub fn emergency_stop(&mut self) -> Result<(), OrchestratorError> {
        self.executor
            .emergency_stop()
            .map_err(|_| OrchestratorError::AlreadyTerminal(self.status()))?;
        for a in &mut self.alerts {
            if a.state == AlertState::Open {
                a.state = AlertState::Resolved(AlertOutcome::Aborted);
            }
        }
        self.scan();
        Ok(())
    }

    pub fn into_log(self) -> RunLog {
        self.executor.into_log()
    }
}

/// Runs the whole pipeline to completion or the first suspension.
pub fn execute_pipeline(
    input: &RunInput,
    env: &EnvConfig,
    provider: &dyn WorkflowProvider,
    detector: Detector,
    faults: Vec<FaultInjection>,
) -> Result<RunSession, PipelineError> {
    let mut session = RunSession::start(input, env, provider, detector, faults)?;
    session.run();
    Ok(session)
}
