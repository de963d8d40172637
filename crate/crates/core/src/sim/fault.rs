use std::fmt;

use serde::{Deserialize, Serialize};

use super::phase::{phases, Phase, Stage};
use super::SimError;
use crate::env::CELL_SUSPENSION;
use crate::ir::{Primitive, ProtocolProgram};

/// What a scenario does to the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Target container knocked off its working position.
    TargetUnseated,
    /// Pipette cannot pick up a tip.
    TipPickupJam,
    /// Target lid stays shut.
    TargetLidJam,
    /// Platform lift does not move.
    PlatformJam,
    /// Source bottle disconnected or source container missing.
    SourceUnseated,
    /// Source lid stays shut.
    SourceLidJam,
    /// Tip falls off once the phase's work is done; held liquid spills.
    TipDrop,
    /// Rotor displaced before loading.
    RotorJam,
    /// Tube not in its holder.
    TubeMissing,
    /// Rotor displaced once spinning stops.
    RotorDisplaced,
}

/// Source kind a scenario needs from its host `add_liquid`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceReq {
    Any,
    Bottle,
    CellSuspension,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub id: u8,
    pub primitive: Primitive,
    /// Default trigger phase.
    pub phase: Phase,
    pub effect: Perturbation,
    pub source: SourceReq,
    pub description: &'static str,
}

const fn sc(
    id: u8,
    primitive: Primitive,
    phase: Phase,
    effect: Perturbation,
    source: SourceReq,
    description: &'static str,
) -> Scenario {
    Scenario {
        id,
        primitive,
        phase,
        effect,
        source,
        description,
    }
}

use Perturbation as P;
use Primitive as Pr;
use SourceReq as S;

pub const SCENARIOS: [Scenario; 20] = [
    sc(
        1,
        Pr::RemoveLiquid,
        Phase::AttachTip,
        P::TargetUnseated,
        S::Any,
        "liquid removal: tip on, target dish absent from the platform",
    ),
    sc(
        2,
        Pr::RemoveLiquid,
        Phase::AttachTip,
        P::TipPickupJam,
        S::Any,
        "liquid removal: pipette has no tip",
    ),
    sc(
        3,
        Pr::RemoveLiquid,
        Phase::OpenLid,
        P::TargetLidJam,
        S::Any,
        "liquid removal: target dish lid left closed",
    ),
    sc(
        4,
        Pr::RemoveLiquid,
        Phase::Aspirate,
        P::PlatformJam,
        S::Any,
        "liquid removal: platform stays down while aspirating",
    ),
    sc(
        5,
        Pr::AddLiquid,
        Phase::AttachTip,
        P::TipPickupJam,
        S::Any,
        "liquid addition: pipette has no tip",
    ),
    sc(
        6,
        Pr::AddLiquid,
        Phase::OpenSource,
        P::SourceUnseated,
        S::Bottle,
        "liquid addition: reagent bottle disconnected",
    ),
    sc(
        7,
        Pr::AddLiquid,
        Phase::OpenSource,
        P::SourceLidJam,
        S::Bottle,
        "liquid addition: reagent bottle cap left on",
    ),
    sc(
        8,
        Pr::AddLiquid,
        Phase::OpenSource,
        P::SourceLidJam,
        S::CellSuspension,
        "liquid addition: source dish lid left closed",
    ),
    sc(
        9,
        Pr::AddLiquid,
        Phase::Aspirate,
        P::TipDrop,
        S::CellSuspension,
        "liquid addition: tip lost while drawing from the source dish",
    ),
    sc(
        10,
        Pr::AddLiquid,
        Phase::OpenSource,
        P::SourceUnseated,
        S::CellSuspension,
        "liquid addition: source tube missing from its holder",
    ),
    sc(
        11,
        Pr::AddLiquid,
        Phase::Aspirate,
        P::TipDrop,
        S::CellSuspension,
        "liquid addition: tip lost while drawing from the source tube",
    ),
    sc(
        12,
        Pr::AddLiquid,
        Phase::Dispense,
        P::PlatformJam,
        S::Any,
        "liquid addition: platform stays down while dispensing",
    ),
    sc(
        13,
        Pr::AddLiquid,
        Phase::Dispense,
        P::TipDrop,
        S::Any,
        "liquid addition: tip lost while dispensing",
    ),
    sc(
        14,
        Pr::Centrifuge,
        Phase::Load,
        P::RotorJam,
        S::Any,
        "centrifugation: rotor out of place at loading",
    ),
    sc(
        15,
        Pr::Centrifuge,
        Phase::Load,
        P::TubeMissing,
        S::Any,
        "centrifugation: no tube ready to load",
    ),
    sc(
        16,
        Pr::Centrifuge,
        Phase::Unload,
        P::RotorDisplaced,
        S::Any,
        "centrifugation: rotor out of place at unloading",
    ),
    sc(
        17,
        Pr::Resuspension,
        Phase::AttachTip,
        P::TipPickupJam,
        S::Any,
        "resuspension: pipette has no tip",
    ),
    sc(
        18,
        Pr::Resuspension,
        Phase::Resuspend,
        P::TipDrop,
        S::Any,
        "resuspension: tip lost while resuspending",
    ),
    sc(
        19,
        Pr::DetachCellsWithPipette,
        Phase::AttachTip,
        P::TipPickupJam,
        S::Any,
        "cell pipetting: pipette has no tip",
    ),
    sc(
        20,
        Pr::DetachCellsWithPipette,
        Phase::Pipetting,
        P::TipDrop,
        S::Any,
        "cell pipetting: tip lost while pipetting",
    ),
];

pub fn scenario(id: u8) -> Option<&'static Scenario> {
    SCENARIOS.get(usize::from(id).wrapping_sub(1))
}

/// Where within an instruction a fault fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerPoint {
    Stage(Stage),
    Phase(Phase),
}

impl fmt::Display for TriggerPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TriggerPoint::Stage(s) => write!(f, "{s:?}"),
            TriggerPoint::Phase(p) => write!(f, "{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trigger {
    pub index: usize,
    pub at: TriggerPoint,
}

impl Trigger {
    /// Resolves a stage to the first phase of that stage in the primitive.
    pub fn phase_in(&self, primitive: Primitive) -> Option<Phase> {
        let table = phases(primitive);
        match self.at {
            TriggerPoint::Phase(p) => table.iter().find(|s| s.phase == p).map(|s| s.phase),
            TriggerPoint::Stage(st) => table.iter().find(|s| s.stage == st).map(|s| s.phase),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultInjection {
    pub scenario_id: u8,
    pub trigger: Trigger,
    pub description: String,
    /// Re-fires on every attempt at the trigger instead of once.
    #[serde(default)]
    pub sticky: bool,
}

impl FaultInjection {
    /// Scenario at its default phase on instruction `index`.
    pub fn new(scenario_id: u8, index: usize) -> Result<Self, SimError> {
        let s = scenario(scenario_id).ok_or(SimError::UnknownScenario(scenario_id))?;
        Ok(Self::at(s, index, TriggerPoint::Phase(s.phase)))
    }

    pub fn with_trigger(scenario_id: u8, trigger: Trigger) -> Result<Self, SimError> {
        let s = scenario(scenario_id).ok_or(SimError::UnknownScenario(scenario_id))?;
        Ok(Self::at(s, trigger.index, trigger.at))
    }

    fn at(s: &Scenario, index: usize, at: TriggerPoint) -> Self {
        Self {
            scenario_id: s.id,
            trigger: Trigger { index, at },
            description: s.description.to_string(),
            sticky: false,
        }
    }

    /// Parses `SCENARIO@INDEX[:PHASE]`, where PHASE is a phase name or `pre`/`mid`/`post`.
    pub fn parse_spec(spec: &str) -> Result<Self, String> {
        let (id, rest) = spec
            .split_once('@')
            .ok_or_else(|| format!("expected SCENARIO@INDEX[:PHASE], got `{spec}`"))?;
        let id: u8 = id
            .trim()
            .parse()
            .map_err(|_| format!("bad scenario id `{id}`"))?;
        let (index, at) = match rest.split_once(':') {
            Some((i, p)) => (i, Some(p.trim())),
            None => (rest, None),
        };
        let index: usize = index
            .trim()
            .parse()
            .map_err(|_| format!("bad instruction index `{index}`"))?;
        let injection = match at {
            None => Self::new(id, index),
            Some(p) => {
                let at = match p {
                    "pre" => TriggerPoint::Stage(Stage::Pre),
                    "mid" => TriggerPoint::Stage(Stage::Mid),
                    "post" => TriggerPoint::Stage(Stage::Post),
                    name => TriggerPoint::Phase(name.parse()?),
                };
                Self::with_trigger(id, Trigger { index, at })
            }
        };
        injection.map_err(|e| e.to_string())
    }

    pub fn sticky(mut self) -> Self {
        self.sticky = true;
        self
    }

    pub fn scenario(&self) -> &'static Scenario {
        scenario(self.scenario_id).expect("validated scenario id")
    }

    /// Checks the trigger against the host instruction in `program`.
    pub fn validate(&self, program: &ProtocolProgram) -> Result<Phase, SimError> {
        let s = scenario(self.scenario_id).ok_or(SimError::UnknownScenario(self.scenario_id))?;
        let incompatible = |reason: String| SimError::IncompatibleTrigger {
            scenario_id: s.id,
            index: self.trigger.index,
            reason,
        };
        let instr = program
            .instructions
            .get(self.trigger.index)
            .ok_or_else(|| incompatible(format!("program has {} instructions", program.len())))?;
        let prim = instr
            .primitive()
            .ok_or_else(|| incompatible(format!("`{}` is not a primitive", instr.function)))?;
        if prim != s.primitive {
            return Err(incompatible(format!(
                "scenario needs `{}`, instruction is `{prim}`",
                s.primitive
            )));
        }
        let phase = self
            .trigger
            .phase_in(prim)
            .ok_or_else(|| incompatible(format!("`{prim}` has no phase `{}`", self.trigger.at)))?;
        let liquid = instr.text_arg("liquid_type").unwrap_or_default();
        match s.source {
            S::Any => {}
            S::Bottle if liquid == CELL_SUSPENSION => {
                return Err(incompatible(
                    "scenario needs a reagent bottle source".into(),
                ))
            }
            S::CellSuspension if liquid != CELL_SUSPENSION => {
                return Err(incompatible(
                    "scenario needs a cell suspension source".into(),
                ))
            }
            _ => {}
        }
        Ok(phase)
    }
}
