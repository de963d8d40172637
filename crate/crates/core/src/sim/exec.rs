use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fault::{FaultInjection, Perturbation};
use super::phase::{phases, ActionClass, Fact, Phase, PhaseSpec, Stage};
use super::world::{draw, new_world, pour, Location, WorldState};
use super::SimError;
use crate::checker::is_enzyme;
use crate::detector::AnomalyReport;
use crate::env::{ContainerKind, EnvConfig, CELL_SUSPENSION};
use crate::ir::{Instruction, Primitive, ProtocolProgram};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    AwaitingReplan,
    Completed,
    Aborted,
    Failed,
    Interrupted,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        !matches!(self, RunStatus::Running | RunStatus::AwaitingReplan)
    }

    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Running => "running",
            RunStatus::AwaitingReplan => "awaiting_replan",
            RunStatus::Completed => "completed",
            RunStatus::Aborted => "aborted",
            RunStatus::Failed => "failed",
            RunStatus::Interrupted => "interrupted",
        }
    }
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameSubject {
    pub container: Option<String>,
    pub source: Option<String>,
    pub source_kind: Option<ContainerKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub frame_id: u64,
    pub class: ActionClass,
    pub stage: Stage,
    pub index: usize,
    pub subject: FrameSubject,
    pub facts: BTreeMap<String, bool>,
    pub clock: f64,
}

impl ObservationFrame {
    pub fn fact(&self, fact: Fact) -> Option<bool> {
        self.facts.get(fact.name()).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AlertCause {
    Anomaly { scenario_id: Option<u8> },
    PhysicalViolation { phase: Phase },
    OperatorStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    RunStarted {
        instructions: usize,
    },
    ActionStarted {
        function: String,
    },
    FaultInjected {
        scenario_id: u8,
        phase: Phase,
        description: String,
    },
    FrameEmitted {
        frame: ObservationFrame,
    },
    Warning {
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        report: Option<AnomalyReport>,
    },
    AlertRaised {
        cause: AlertCause,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        report: Option<AnomalyReport>,
    },
    ActionCompleted,
    ActionAborted {
        phase: Option<Phase>,
        reason: String,
    },
    CheckCompleted {
        findings: usize,
        repairs: usize,
    },
    AlertResolved {
        resolution: String,
    },
    ProgramReplaced {
        instructions: usize,
    },
    RunFinished {
        status: RunStatus,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::RunStarted { .. } => "run_started",
            EventKind::ActionStarted { .. } => "action_started",
            EventKind::FaultInjected { .. } => "fault_injected",
            EventKind::FrameEmitted { .. } => "frame_emitted",
            EventKind::Warning { .. } => "warning",
            EventKind::AlertRaised { .. } => "alert_raised",
            EventKind::ActionCompleted => "action_completed",
            EventKind::ActionAborted { .. } => "action_aborted",
            EventKind::CheckCompleted { .. } => "check_completed",
            EventKind::AlertResolved { .. } => "alert_resolved",
            EventKind::ProgramReplaced { .. } => "program_replaced",
            EventKind::RunFinished { .. } => "run_finished",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionEvent {
    pub seq: u64,
    pub revision: u32,
    pub index: Option<usize>,
    pub clock: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Outcome of showing one frame to a monitor.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass,
    /// Flagged by screening, cleared on closer inspection.
    Suppressed(AnomalyReport),
    Confirmed(AnomalyReport),
}

pub trait Monitor {
    fn observe(&mut self, frame: &ObservationFrame) -> Verdict;
}

/// Monitor that passes every frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoMonitor;

impl Monitor for NoMonitor {
    fn observe(&mut self, _: &ObservationFrame) -> Verdict {
        Verdict::Pass
    }
}

impl<F: FnMut(&ObservationFrame) -> Verdict> Monitor for F {
    fn observe(&mut self, frame: &ObservationFrame) -> Verdict {
        self(frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub program: ProtocolProgram,
    pub revision: u32,
    pub events: Vec<ExecutionEvent>,
    pub world: WorldState,
    pub reports: Vec<AnomalyReport>,
    pub status: RunStatus,
}

impl RunLog {
    pub fn frames(&self) -> impl Iterator<Item = &ObservationFrame> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::FrameEmitted { frame } => Some(frame),
            _ => None,
        })
    }

    /// One JSON object per line.
    pub fn events_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Armed {
    injection: FaultInjection,
    phase: Phase,
    fired: bool,
}

#[derive(Debug, Clone, Default)]
struct Ctx {
    targets: Vec<String>,
    source: Option<String>,
    carries_cells: bool,
}

impl Ctx {
    fn target(&self) -> Option<&str> {
        self.targets.first().map(String::as_str)
    }
}

/// Micro-phase interpreter for one run.
#[derive(Debug, Clone)]
pub struct Executor {
    env: EnvConfig,
    program: ProtocolProgram,
    world: WorldState,
    faults: Vec<Armed>,
    pc: usize,
    phase: usize,
    ctx: Ctx,
    revision: u32,
    status: RunStatus,
    events: Vec<ExecutionEvent>,
    reports: Vec<AnomalyReport>,
    next_frame: u64,
    started: bool,
}

impl Executor {
    pub fn new(
        program: ProtocolProgram,
        env: &EnvConfig,
        faults: Vec<FaultInjection>,
    ) -> Result<Self, SimError> {
        Self::with_world(program, env, new_world(env), faults)
    }

    pub fn with_world(
        program: ProtocolProgram,
        env: &EnvConfig,
        world: WorldState,
        faults: Vec<FaultInjection>,
    ) -> Result<Self, SimError> {
        let mut ex = Self {
            env: env.clone(),
            program,
            world,
            faults: Vec::new(),
            pc: 0,
            phase: 0,
            ctx: Ctx::default(),
            revision: 0,
            status: RunStatus::Running,
            events: Vec::new(),
            reports: Vec::new(),
            next_frame: 0,
            started: false,
        };
        for f in faults {
            ex.inject_fault(f)?;
        }
        Ok(ex)
    }

    pub fn inject_fault(&mut self, injection: FaultInjection) -> Result<(), SimError> {
        let phase = injection.validate(&self.program)?;
        self.faults.push(Armed {
            injection,
            phase,
            fired: false,
        });
        Ok(())
    }

    pub fn status(&self) -> RunStatus {
        self.status
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn program(&self) -> &ProtocolProgram {
        &self.program
    }

    pub fn events(&self) -> &[ExecutionEvent] {
        &self.events
    }

    pub fn reports(&self) -> &[AnomalyReport] {
        &self.reports
    }

    pub fn revision(&self) -> u32 {
        self.revision
    }

    /// Index of the next (or interrupted) instruction.
    pub fn pc(&self) -> usize {
        self.pc
    }

    pub fn into_log(self) -> RunLog {
        RunLog {
            program: self.program,
            revision: self.revision,
            events: self.events,
            world: self.world,
            reports: self.reports,
            status: self.status,
        }
    }

    fn emit(&mut self, index: Option<usize>, kind: EventKind) {
        self.events.push(ExecutionEvent {
            seq: self.events.len() as u64,
            revision: self.revision,
            index,
            clock: self.world.clock,
            kind,
        });
    }

    /// Runs until the status leaves `Running`.
    pub fn run(&mut self, monitor: &mut dyn Monitor) -> RunStatus {
        while self.status == RunStatus::Running {
            self.step(monitor);
        }
        self.status
    }

    /// Executes one micro-phase (or run start/finish bookkeeping). Returns the number of new events.
    pub fn step(&mut self, monitor: &mut dyn Monitor) -> usize {
        let before = self.events.len();
        if self.status != RunStatus::Running {
            return 0;
        }
        if !self.started {
            self.started = true;
            self.emit(
                None,
                EventKind::RunStarted {
                    instructions: self.program.len(),
                },
            );
        }
        if self.pc >= self.program.len() {
            self.status = RunStatus::Completed;
            self.emit(
                None,
                EventKind::RunFinished {
                    status: RunStatus::Completed,
                },
            );
            return self.events.len() - before;
        }
        let instr = self.program.instructions[self.pc].clone();
        let Some(prim) = instr.primitive() else {
            self.suspend(
                None,
                format!("`{}` is not an executable primitive", instr.function),
            );
            return self.events.len() - before;
        };
        let table = phases(prim);
        if self.phase == 0 {
            self.ctx = self.resolve_ctx(&instr, prim);
            self.emit(
                Some(self.pc),
                EventKind::ActionStarted {
                    function: instr.function.clone(),
                },
            );
        }
        let spec = &table[self.phase];
        self.run_phase(&instr, prim, spec, monitor);
        if self.status == RunStatus::Running {
            self.phase += 1;
            if self.phase == table.len() {
                self.complete_action();
            }
        }
        self.events.len() - before
    }

    fn resolve_ctx(&self, instr: &Instruction, prim: Primitive) -> Ctx {
        let targets = instr.containers();
        let source = if prim == Primitive::AddLiquid {
            let liquid = instr.text_arg("liquid_type").unwrap_or_default();
            self.resolve_source(
                liquid,
                targets.first().map(String::as_str).unwrap_or_default(),
            )
        } else {
            None
        };
        let carries_cells = source
            .as_deref()
            .and_then(|s| self.world.container(s))
            .is_some_and(|c| c.kind != ContainerKind::Bottle && c.suspended);
        Ctx {
            targets,
            source,
            carries_cells,
        }
    }

    fn resolve_source(&self, liquid: &str, target: &str) -> Option<String> {
        let workspace = |id: &String, c: &super::world::ContainerState| {
            id != target
                && c.location.in_workspace()
                && matches!(c.kind, ContainerKind::Dish | ContainerKind::Tube)
        };
        let w = &self.world;
        if liquid == CELL_SUSPENSION {
            return w
                .containers
                .iter()
                .find(|(id, c)| workspace(id, c) && c.suspended && c.volume() > 0.0)
                .map(|(id, _)| id.clone());
        }
        w.containers
            .iter()
            .find(|(_, c)| {
                c.kind == ContainerKind::Bottle
                    && c.location != Location::Discarded
                    && c.liquid.contains_key(liquid)
            })
            .or_else(|| {
                w.containers
                    .iter()
                    .find(|(id, c)| workspace(id, c) && c.liquid.contains_key(liquid))
            })
            .map(|(id, _)| id.clone())
    }

    fn fire_faults(&mut self, phase: Phase, post: bool) {
        let mut fired = Vec::new();
        for armed in &mut self.faults {
            let inj = &armed.injection;
            let is_post = inj.scenario().effect == Perturbation::TipDrop;
            if inj.trigger.index == self.pc
                && armed.phase == phase
                && is_post == post
                && (!armed.fired || inj.sticky)
            {
                armed.fired = true;
                fired.push(inj.clone());
            }
        }
        for inj in fired {
            let s = inj.scenario();
            self.perturb(s.effect);
            self.emit(
                Some(self.pc),
                EventKind::FaultInjected {
                    scenario_id: s.id,
                    phase,
                    description: inj.description.clone(),
                },
            );
        }
    }

    fn spill_held(&mut self) {
        let held = std::mem::take(&mut self.world.pipette.held);
        pour(&mut self.world.spilled, held);
    }

    fn perturb(&mut self, effect: Perturbation) {
        let target = self.ctx.target().map(str::to_string);
        let source = self.ctx.source.clone();
        let w = &mut self.world;
        let unseat = |w: &mut WorldState, id: Option<String>| {
            if let Some(c) = id.and_then(|id| w.containers.get_mut(&id)) {
                c.seated = false;
            }
        };
        let jam_lid = |w: &mut WorldState, id: Option<String>| {
            if let Some(id) = id {
                if let Some(c) = w.containers.get_mut(&id) {
                    c.lid_open = false;
                }
                w.jams.lids.insert(id);
            }
        };
        match effect {
            Perturbation::TargetUnseated | Perturbation::TubeMissing => unseat(w, target),
            Perturbation::SourceUnseated => unseat(w, source),
            Perturbation::TargetLidJam => jam_lid(w, target),
            Perturbation::SourceLidJam => jam_lid(w, source),
            Perturbation::PlatformJam => {
                w.jams.platform = true;
                w.platforms.raised = false;
            }
            Perturbation::RotorJam | Perturbation::RotorDisplaced => {
                w.centrifuge.rotor_in_place = false
            }
            Perturbation::TipPickupJam => {
                w.jams.tip_pickup = true;
                w.pipette.tip_attached = false;
                self.spill_held();
            }
            Perturbation::TipDrop => {
                w.pipette.tip_attached = false;
                self.spill_held();
            }
        }
    }

    fn open_lid(&mut self, id: Option<&str>) {
        let Some(id) = id else { return };
        if self.world.jams.lids.contains(id) {
            return;
        }
        if let Some(c) = self.world.containers.get_mut(id) {
            let reachable =
                c.seated && (c.location.in_workspace() || c.kind == ContainerKind::Bottle);
            if reachable && c.kind != ContainerKind::Waste {
                c.lid_open = true;
            }
        }
    }

    fn setup(&mut self, prim: Primitive, phase: Phase) {
        let target = self.ctx.target().map(str::to_string);
        match phase {
            Phase::AttachTip => {
                if !self.world.jams.tip_pickup {
                    self.world.pipette.tip_attached = true;
                }
            }
            Phase::OpenLid | Phase::Decap => self.open_lid(target.as_deref()),
            Phase::OpenSource => {
                let source = self.ctx.source.clone();
                self.open_lid(source.as_deref());
            }
            Phase::Aspirate if prim == Primitive::RemoveLiquid => self.raise_platform(),
            Phase::Dispense | Phase::Pipetting => {
                self.raise_platform();
                self.open_lid(target.as_deref());
            }
            Phase::Resuspend => self.open_lid(target.as_deref()),
            Phase::Agitate => {
                if let Some(c) = target.and_then(|t| self.world.containers.get_mut(&t)) {
                    c.lid_open = false;
                }
            }
            _ => {}
        }
    }

    fn raise_platform(&mut self) {
        if !self.world.jams.platform {
            self.world.platforms.raised = true;
        }
    }

    fn duration(&self, instr: &Instruction, phase: Phase) -> f64 {
        let d = &self.env.durations;
        match phase {
            Phase::Retrieve => d.retrieve,
            Phase::Store => d.store,
            Phase::Incubate => instr.number_arg("detachment_time").unwrap_or(0.0) * 60.0,
            Phase::AttachTip => d.attach_tip,
            Phase::OpenLid | Phase::OpenSource => d.open_lid,
            Phase::Aspirate => d.aspirate,
            Phase::EjectWaste => d.eject_waste,
            Phase::Dispense => d.dispense,
            Phase::Pipetting => d.pipetting,
            Phase::Agitate => d.agitate,
            Phase::Load => d.centrifuge_load,
            Phase::Spin => instr.number_arg("time").unwrap_or(0.0) * 60.0,
            Phase::Unload => d.centrifuge_unload,
            Phase::Resuspend => d.resuspend,
            Phase::Decap => d.decap,
            Phase::Pour => d.pour,
            Phase::Pick => d.pick,
            Phase::Discard => d.discard,
        }
    }

    fn run_phase(
        &mut self,
        instr: &Instruction,
        prim: Primitive,
        spec: &PhaseSpec,
        monitor: &mut dyn Monitor,
    ) {
        self.fire_faults(spec.phase, false);
        self.setup(prim, spec.phase);
        let outcome = self.check_and_apply(instr, prim, spec.phase);
        self.world.clock += self.duration(instr, spec.phase);
        if outcome.is_ok() {
            self.fire_faults(spec.phase, true);
        }
        let frame = self.frame(prim, spec);
        self.emit(
            Some(self.pc),
            EventKind::FrameEmitted {
                frame: frame.clone(),
            },
        );
        let verdict = monitor.observe(&frame);
        let confirmed = match verdict {
            Verdict::Pass => None,
            Verdict::Suppressed(report) => {
                self.reports.push(report.clone());
                self.emit(
                    Some(self.pc),
                    EventKind::Warning {
                        message: report.message.clone(),
                        report: Some(report),
                    },
                );
                None
            }
            Verdict::Confirmed(report) => {
                self.reports.push(report.clone());
                Some(report)
            }
        };
        if let Ok(warnings) = &outcome {
            for message in warnings.clone() {
                self.emit(
                    Some(self.pc),
                    EventKind::Warning {
                        message,
                        report: None,
                    },
                );
            }
        }
        match (confirmed, outcome) {
            (Some(report), _) => {
                let message = report.message.clone();
                self.suspend(Some(spec.phase), format!("anomaly confirmed: {message}"));
                self.emit(
                    Some(self.pc),
                    EventKind::AlertRaised {
                        cause: AlertCause::Anomaly {
                            scenario_id: report.scenario_id,
                        },
                        message,
                        report: Some(report),
                    },
                );
            }
            (None, Err(reason)) => {
                self.suspend(Some(spec.phase), reason.clone());
                self.emit(
                    Some(self.pc),
                    EventKind::AlertRaised {
                        cause: AlertCause::PhysicalViolation { phase: spec.phase },
                        message: reason,
                        report: None,
                    },
                );
            }
            (None, Ok(_)) => {}
        }
    }

    fn suspend(&mut self, phase: Option<Phase>, reason: String) {
        self.safe_stop();
        self.status = RunStatus::AwaitingReplan;
        self.phase = 0;
        self.emit(Some(self.pc), EventKind::ActionAborted { phase, reason });
    }

    /// Dumps held liquid to waste, ejects the tip and lowers the platform.
    fn safe_stop(&mut self) {
        let held = std::mem::take(&mut self.world.pipette.held);
        if !held.is_empty() {
            match self.world.waste_id() {
                Some(waste) => pour(&mut self.world.containers[&waste].liquid, held),
                None => pour(&mut self.world.spilled, held),
            }
        }
        self.world.pipette.tip_attached = false;
        self.world.platforms.raised = false;
    }

    fn complete_action(&mut self) {
        if !self.world.pipette.held.is_empty() {
            self.emit(
                Some(self.pc),
                EventKind::Warning {
                    message: "liquid left in the tip was discarded to waste".into(),
                    report: None,
                },
            );
        }
        self.safe_stop();
        for c in self.world.containers.values_mut() {
            c.lid_open = false;
        }
        self.emit(Some(self.pc), EventKind::ActionCompleted);
        self.pc += 1;
        self.phase = 0;
    }

    /// Clears jams and displaced hardware, then retries the aborted instruction from its first phase.
    pub fn resume(&mut self) -> Result<(), SimError> {
        self.require_awaiting()?;
        self.world.operator_fix();
        self.status = RunStatus::Running;
        self.emit(
            Some(self.pc),
            EventKind::AlertResolved {
                resolution: "resumed".into(),
            },
        );
        Ok(())
    }

    /// Swaps in a new program that continues from the current world state.
    pub fn replace_program(&mut self, program: ProtocolProgram) -> Result<(), SimError> {
        self.require_awaiting()?;
        self.world.operator_fix();
        self.faults.clear();
        self.program = program;
        self.revision += 1;
        self.pc = 0;
        self.phase = 0;
        self.status = RunStatus::Running;
        self.emit(
            None,
            EventKind::AlertResolved {
                resolution: "replanned".into(),
            },
        );
        self.emit(
            None,
            EventKind::ProgramReplaced {
                instructions: self.program.len(),
            },
        );
        Ok(())
    }

    /// Ends a suspended run: held liquid to waste, tip ejected, status aborted.
    pub fn abort_run(&mut self) -> Result<(), SimError> {
        self.require_awaiting()?;
        self.emit(
            Some(self.pc).filter(|&i| i < self.program.len()),
            EventKind::AlertResolved {
                resolution: "aborted".into(),
            },
        );
        self.safe_stop();
        self.status = RunStatus::Aborted;
        self.emit(
            None,
            EventKind::RunFinished {
                status: RunStatus::Aborted,
            },
        );
        Ok(())
    }

    pub fn emergency_stop(&mut self) -> Result<(), SimError> {
        if self.status.is_terminal() {
            return Err(SimError::InvalidState(self.status));
        }
        if self.status == RunStatus::Running && self.phase > 0 {
            self.emit(
                Some(self.pc),
                EventKind::ActionAborted {
                    phase: None,
                    reason: "emergency stop".into(),
                },
            );
        }
        self.safe_stop();
        self.emit(
            Some(self.pc).filter(|&i| i < self.program.len()),
            EventKind::AlertRaised {
                cause: AlertCause::OperatorStop,
                message: "emergency stop".into(),
                report: None,
            },
        );
        self.status = RunStatus::Aborted;
        self.emit(
            None,
            EventKind::RunFinished {
                status: RunStatus::Aborted,
            },
        );
        Ok(())
    }

    /// Records an externally decided status change, e.g. a failed replan.
    pub fn finish(&mut self, status: RunStatus) {
        if self.status.is_terminal() {
            return;
        }
        self.status = status;
        self.emit(None, EventKind::RunFinished { status });
    }

    /// Records a checker pass over the current program.
    pub fn note_check(&mut self, findings: usize, repairs: usize) {
        self.emit(None, EventKind::CheckCompleted { findings, repairs });
    }

    fn require_awaiting(&self) -> Result<(), SimError> {
        if self.status == RunStatus::AwaitingReplan {
            Ok(())
        } else {
            Err(SimError::InvalidState(self.status))
        }
    }

    fn frame(&mut self, prim: Primitive, spec: &PhaseSpec) -> ObservationFrame {
        let w = &self.world;
        let targets: Vec<_> = self
            .ctx
            .targets
            .iter()
            .filter_map(|t| w.container(t))
            .collect();
        let target = targets.first();
        let source = self.ctx.source.as_deref().and_then(|s| w.container(s));
        let facts = spec
            .facts
            .iter()
            .map(|&(fact, _)| {
                let value = match fact {
                    Fact::TipAttached => w.pipette.tip_attached,
                    Fact::ContainerOnPlatform => {
                        !targets.is_empty()
                            && targets
                                .iter()
                                .all(|c| c.location.in_workspace() && c.seated)
                    }
                    Fact::LidOpen => target.is_some_and(|c| c.lid_open),
                    Fact::PlatformRaised => w.platforms.raised,
                    Fact::SourcePresent => source.is_some_and(|c| {
                        c.seated
                            && (c.location.in_workspace()
                                || c.kind == ContainerKind::Bottle
                                    && c.location == Location::Station)
                    }),
                    Fact::SourceLidOpen => source.is_some_and(|c| c.lid_open),
                    Fact::RotorInPlace => w.centrifuge.rotor_in_place,
                    Fact::TubePresent => target.is_some_and(|c| {
                        c.seated && matches!(c.location, Location::Holder | Location::Centrifuge)
                    }),
                    Fact::ContainerInIncubator => {
                        !targets.is_empty()
                            && targets.iter().all(|c| c.location == Location::Incubator)
                    }
                    Fact::ContainerDiscarded => {
                        target.is_some_and(|c| c.location == Location::Discarded)
                    }
                };
                (fact.name().to_string(), value)
            })
            .collect();
        let frame = ObservationFrame {
            frame_id: self.next_frame,
            class: ActionClass {
                primitive: prim,
                phase: spec.phase,
            },
            stage: spec.stage,
            index: self.pc,
            subject: FrameSubject {
                container: self.ctx.target().map(str::to_string),
                source: self.ctx.source.clone(),
                source_kind: source.map(|c| c.kind),
            },
            facts,
            clock: w.clock,
        };
        self.next_frame += 1;
        frame
    }

    /// Checks the phase's concrete preconditions and applies its effect.
    /// Returns warnings on success and the violated condition on failure.
    fn check_and_apply(
        &mut self,
        instr: &Instruction,
        prim: Primitive,
        phase: Phase,
    ) -> Result<Vec<String>, String> {
        let mut warnings = Vec::new();
        let target = self.ctx.target().unwrap_or_default().to_string();
        let max_pipette = self.env.max_pipette_volume;
        match (prim, phase) {
            (Primitive::TakeOutCells, Phase::Retrieve) => {
                for id in self.ctx.targets.clone() {
                    let c = self.known(&id)?;
                    if c.kind != ContainerKind::Dish || c.location != Location::Incubator {
                        return Err(format!("`{id}` is not a dish in the incubator"));
                    }
                    let slot = self
                        .world
                        .platforms
                        .free_slot()
                        .ok_or("no free platform slot")?;
                    self.world.platforms.slots[slot] = Some(id.clone());
                    self.world.containers[&id].location = Location::Platform(slot);
                }
            }
            (Primitive::PutBackIncubator, Phase::Store) => {
                for id in self.ctx.targets.clone() {
                    let c = self.known(&id)?;
                    match c.location {
                        Location::Incubator => continue,
                        Location::Platform(slot) => {
                            if self.world.incubated() >= self.world.incubator_capacity {
                                return Err("incubator is full".into());
                            }
                            self.world.platforms.slots[slot] = None;
                            let c = &mut self.world.containers[&id];
                            c.location = Location::Incubator;
                            c.lid_open = false;
                            c.seated = true;
                        }
                        _ => return Err(format!("`{id}` is not on a platform")),
                    }
                }
            }
            (Primitive::PutBackIncubator, Phase::Incubate) => {
                if instr.number_arg("detachment_time").unwrap_or(0.0) > 0.0 {
                    for id in &self.ctx.targets {
                        let c = &mut self.world.containers[id];
                        if c.cells && c.liquid.keys().any(|l| is_enzyme(l)) {
                            c.detached = true;
                        }
                    }
                }
            }
            (_, Phase::AttachTip) => {}
            (Primitive::RemoveLiquid, Phase::OpenLid) => {
                self.target_reachable(&target)?;
            }
            (Primitive::RemoveLiquid, Phase::Aspirate) => {
                self.need_tip()?;
                self.target_reachable(&target)?;
                self.need_open(&target)?;
                self.need_raised()?;
                self.world.waste_id().ok_or("no waste container")?;
                let want = instr.number_arg("volume").unwrap_or(0.0);
                let c = &mut self.world.containers[&target];
                let avail = c.volume();
                let amount = want.min(avail).min(max_pipette);
                if amount + EPS < want {
                    warnings.push(format!(
                        "asked for {want} mL from `{target}`, took {amount} mL"
                    ));
                }
                let taken = draw(&mut c.liquid, amount);
                if c.volume() <= 0.0 {
                    c.suspended = false;
                }
                pour(&mut self.world.pipette.held, taken);
            }
            (Primitive::RemoveLiquid, Phase::EjectWaste) => {
                self.need_tip()?;
                let waste = self.world.waste_id().ok_or("no waste container")?;
                let held = std::mem::take(&mut self.world.pipette.held);
                pour(&mut self.world.containers[&waste].liquid, held);
            }
            (Primitive::AddLiquid, Phase::OpenSource) => {
                self.source_present()?;
            }
            (Primitive::AddLiquid, Phase::Aspirate) => {
                self.need_tip()?;
                let source = self.source_present()?;
                if !self.world.containers[&source].lid_open {
                    return Err(format!("source `{source}` is closed"));
                }
                let want = instr.number_arg("volume").unwrap_or(0.0);
                let s = &mut self.world.containers[&source];
                let amount = want.min(s.volume()).min(max_pipette);
                if amount + EPS < want {
                    warnings.push(format!(
                        "asked for {want} mL from `{source}`, took {amount} mL"
                    ));
                }
                let taken = draw(&mut s.liquid, amount);
                if s.volume() <= 0.0 && s.kind != ContainerKind::Bottle {
                    s.suspended = false;
                    s.cells = false;
                }
                pour(&mut self.world.pipette.held, taken);
            }
            (Primitive::AddLiquid, Phase::Dispense) => {
                self.need_tip()?;
                self.target_reachable(&target)?;
                self.need_open(&target)?;
                self.need_raised()?;
                let c = &self.world.containers[&target];
                let free = c.free();
                let held_total: f64 = self.world.pipette.held.values().sum();
                let amount = held_total.min(free);
                if amount + EPS < held_total {
                    warnings.push(format!("`{target}` only had room for {amount} mL"));
                }
                let moved = draw(&mut self.world.pipette.held, amount);
                let carries = self.ctx.carries_cells;
                let c = &mut self.world.containers[&target];
                pour(&mut c.liquid, moved);
                if carries {
                    c.cells = true;
                    c.suspended = true;
                }
            }
            (Primitive::DetachCellsWithPipette, Phase::Pipetting) => {
                self.need_tip()?;
                self.target_reachable(&target)?;
                self.need_open(&target)?;
                self.need_raised()?;
                let c = &mut self.world.containers[&target];
                if c.volume() <= 0.0 {
                    return Err(format!("`{target}` holds no liquid"));
                }
                if c.cells {
                    c.detached = true;
                    c.suspended = true;
                }
            }
            (Primitive::Shake, Phase::Agitate) => {
                self.target_reachable(&target)?;
            }
            (Primitive::Centrifuge, Phase::Load) => {
                self.need_rotor()?;
                self.tube_present(&target)?;
                let c = &mut self.world.containers[&target];
                if c.volume() <= 0.0 {
                    return Err(format!("`{target}` is empty"));
                }
                c.location = Location::Centrifuge;
                self.world.centrifuge.loaded.insert(target);
            }
            (Primitive::Centrifuge, Phase::Spin) => {
                self.need_rotor()?;
                if !self.world.centrifuge.loaded.contains(&target) {
                    return Err(format!("`{target}` is not loaded"));
                }
                let c = &mut self.world.containers[&target];
                if c.suspended {
                    c.pellet_present = true;
                    c.suspended = false;
                }
                self.world.pending_supernatant.insert(target);
            }
            (Primitive::Centrifuge, Phase::Unload) => {
                self.need_rotor()?;
                self.world.centrifuge.loaded.remove(&target);
                self.world.containers[&target].location = Location::Holder;
            }
            (Primitive::Resuspension, Phase::Resuspend) => {
                self.need_tip()?;
                self.tube_present(&target)?;
                self.need_open(&target)?;
                let c = &mut self.world.containers[&target];
                if c.volume() <= 0.0 {
                    return Err(format!("`{target}` holds no liquid"));
                }
                if c.pellet_present {
                    c.pellet_present = false;
                    c.suspended = true;
                }
                self.world.pending_supernatant.remove(&target);
            }
            (Primitive::RemoveSupernatant, Phase::Decap) => {
                self.tube_present(&target)?;
            }
            (Primitive::RemoveSupernatant, Phase::Pour) => {
                self.tube_present(&target)?;
                self.need_open(&target)?;
                let waste = self.world.waste_id().ok_or("no waste container")?;
                let c = &mut self.world.containers[&target];
                let all = std::mem::take(&mut c.liquid);
                c.suspended = false;
                pour(&mut self.world.containers[&waste].liquid, all);
                self.world.pending_supernatant.remove(&target);
            }
            (Primitive::GetContainer, Phase::Pick) => {
                let c = self.known(&target)?;
                match (c.kind, c.location) {
                    (ContainerKind::Dish | ContainerKind::Tube, loc) if loc.in_workspace() => {}
                    (ContainerKind::Dish, Location::Rack) => {
                        let slot = self
                            .world
                            .platforms
                            .free_slot()
                            .ok_or("no free platform slot")?;
                        self.world.platforms.slots[slot] = Some(target.clone());
                        self.world.containers[&target].location = Location::Platform(slot);
                    }
                    (ContainerKind::Tube, Location::Rack) => {
                        self.world.containers[&target].location = Location::Holder;
                    }
                    _ => return Err(format!("`{target}` cannot be fetched")),
                }
            }
            (Primitive::DiscardContainer, Phase::Discard) => {
                let c = self.known(&target)?;
                let loc = c.location;
                if !loc.in_workspace() {
                    return Err(format!("`{target}` is not in the workspace"));
                }
                if let Location::Platform(slot) = loc {
                    self.world.platforms.slots[slot] = None;
                }
                let waste = self.world.waste_id().ok_or("no waste container")?;
                let c = &mut self.world.containers[&target];
                let all = std::mem::take(&mut c.liquid);
                c.location = Location::Discarded;
                c.cells = false;
                c.suspended = false;
                c.pellet_present = false;
                c.detached = false;
                c.lid_open = false;
                pour(&mut self.world.containers[&waste].liquid, all);
                self.world.pending_supernatant.remove(&target);
            }
            (p, ph) => unreachable!("phase {ph} is not part of {p}"),
        }
        Ok(warnings)
    }

    fn known(&self, id: &str) -> Result<&super::world::ContainerState, String> {
        match self.world.container(id) {
            None => Err(format!("`{id}` is not in the lab")),
            Some(c) if c.location == Location::Discarded => Err(format!("`{id}` was discarded")),
            Some(c) => Ok(c),
        }
    }

    fn target_reachable(&self, id: &str) -> Result<(), String> {
        let c = self.known(id)?;
        if !c.location.in_workspace() || !c.seated {
            return Err(format!("`{id}` is not on the platform"));
        }
        Ok(())
    }

    fn tube_present(&self, id: &str) -> Result<(), String> {
        let c = self.known(id)?;
        if c.kind != ContainerKind::Tube
            || !c.seated
            || !matches!(c.location, Location::Holder | Location::Centrifuge)
        {
            return Err(format!("tube `{id}` is not in place"));
        }
        Ok(())
    }

    fn source_present(&self) -> Result<String, String> {
        let id = self
            .ctx
            .source
            .clone()
            .ok_or("no source holds the requested liquid")?;
        let c = self.known(&id)?;
        let placed = c.location.in_workspace()
            || c.kind == ContainerKind::Bottle && c.location == Location::Station;
        if !c.seated || !placed {
            return Err(format!("source `{id}` is not connected"));
        }
        Ok(id)
    }

    fn need_tip(&self) -> Result<(), String> {
        if self.world.pipette.tip_attached {
            Ok(())
        } else {
            Err("no pipette tip attached".into())
        }
    }

    fn need_open(&self, id: &str) -> Result<(), String> {
        if self.world.containers[id].lid_open {
            Ok(())
        } else {
            Err(format!("`{id}` lid is closed"))
        }
    }

    fn need_raised(&self) -> Result<(), String> {
        if self.world.platforms.raised {
            Ok(())
        } else {
            Err("platform is not raised".into())
        }
    }

    fn need_rotor(&self) -> Result<(), String> {
        if self.world.centrifuge.rotor_in_place {
            Ok(())
        } else {
            Err("centrifuge rotor is not in place".into())
        }
    }
}

/// Runs `program` from a fresh world to completion or the first abort.
pub fn run_program(
    program: &ProtocolProgram,
    env: &EnvConfig,
    faults: Vec<FaultInjection>,
    monitor: &mut dyn Monitor,
) -> Result<RunLog, SimError> {
    let mut ex = Executor::new(program.clone(), env, faults)?;
    ex.run(monitor);
    Ok(ex.into_log())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub world: WorldState,
    pub events: Vec<ExecutionEvent>,
    pub frames: Vec<ObservationFrame>,
}

/// Executes a single instruction against `world`. Fault trigger indices must be 0.
pub fn step(
    world: &WorldState,
    env: &EnvConfig,
    instruction: &Instruction,
    faults: Vec<FaultInjection>,
) -> Result<StepResult, SimError> {
    let program = ProtocolProgram::new(vec![instruction.clone()]);
    let mut ex = Executor::with_world(program, env, world.clone(), faults)?;
    ex.run(&mut NoMonitor);
    let log = ex.into_log();
    let frames = log.frames().cloned().collect();
    let events = log
        .events
        .into_iter()
        .filter(|e| {
            !matches!(
                e.kind,
                EventKind::RunStarted { .. } | EventKind::RunFinished { .. }
            )
        })
        .collect();
    Ok(StepResult {
        world: log.world,
        events,
        frames,
    })
}
