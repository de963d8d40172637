use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ir::Primitive;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pre,
    Mid,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Retrieve,
    Store,
    Incubate,
    AttachTip,
    OpenLid,
    Aspirate,
    EjectWaste,
    OpenSource,
    Dispense,
    Pipetting,
    Agitate,
    Load,
    Spin,
    Unload,
    Resuspend,
    Decap,
    Pour,
    Pick,
    Discard,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Retrieve => "retrieve",
            Phase::Store => "store",
            Phase::Incubate => "incubate",
            Phase::AttachTip => "attach_tip",
            Phase::OpenLid => "open_lid",
            Phase::Aspirate => "aspirate",
            Phase::EjectWaste => "eject_waste",
            Phase::OpenSource => "open_source",
            Phase::Dispense => "dispense",
            Phase::Pipetting => "pipetting",
            Phase::Agitate => "agitate",
            Phase::Load => "load",
            Phase::Spin => "spin",
            Phase::Unload => "unload",
            Phase::Resuspend => "resuspend",
            Phase::Decap => "decap",
            Phase::Pour => "pour",
            Phase::Pick => "pick",
            Phase::Discard => "discard",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use Phase::*;
        [
            Retrieve, Store, Incubate, AttachTip, OpenLid, Aspirate, EjectWaste, OpenSource,
            Dispense, Pipetting, Agitate, Load, Spin, Unload, Resuspend, Decap, Pour, Pick,
            Discard,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| format!("unknown phase `{s}`"))
    }
}

/// Scene facts a frame can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fact {
    TipAttached,
    ContainerOnPlatform,
    LidOpen,
    PlatformRaised,
    SourcePresent,
    SourceLidOpen,
    RotorInPlace,
    TubePresent,
    ContainerInIncubator,
    ContainerDiscarded,
}

impl Fact {
    pub fn name(self) -> &'static str {
        match self {
            Fact::TipAttached => "tip_attached",
            Fact::ContainerOnPlatform => "container_on_platform",
            Fact::LidOpen => "lid_open",
            Fact::PlatformRaised => "platform_raised",
            Fact::SourcePresent => "source_present",
            Fact::SourceLidOpen => "source_lid_open",
            Fact::RotorInPlace => "rotor_in_place",
            Fact::TubePresent => "tube_present",
            Fact::ContainerInIncubator => "container_in_incubator",
            Fact::ContainerDiscarded => "container_discarded",
        }
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A (primitive, phase) pair; there are 23 of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionClass {
    pub primitive: Primitive,
    pub phase: Phase,
}

impl fmt::Display for ActionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.primitive, self.phase)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSpec {
    pub phase: Phase,
    pub stage: Stage,
    /// Facts visible in this phase's frame and the value each takes in a clean run.
    pub facts: &'static [(Fact, bool)],
}

use Fact::*;

const TIP: &[(Fact, bool)] = &[(TipAttached, true)];
const ASPIRATE_TARGET: &[(Fact, bool)] = &[
    (TipAttached, true),
    (ContainerOnPlatform, true),
    (LidOpen, true),
    (PlatformRaised, true),
];
const SOURCE: &[(Fact, bool)] = &[
    (TipAttached, true),
    (SourcePresent, true),
    (SourceLidOpen, true),
];
const ROTOR: &[(Fact, bool)] = &[(RotorInPlace, true), (TubePresent, true)];
const TUBE_OPEN: &[(Fact, bool)] = &[(TubePresent, true), (LidOpen, true)];

const TAKE_OUT: &[PhaseSpec] = &[PhaseSpec {
    phase: Phase::Retrieve,
    stage: Stage::Mid,
    facts: &[(ContainerOnPlatform, true), (ContainerInIncubator, false)],
}];
const PUT_BACK: &[PhaseSpec] = &[
    PhaseSpec {
        phase: Phase::Store,
        stage: Stage::Mid,
        facts: &[(ContainerOnPlatform, false), (ContainerInIncubator, true)],
    },
    PhaseSpec {
        phase: Phase::Incubate,
        stage: Stage::Post,
        facts: &[(ContainerInIncubator, true)],
    },
];
const REMOVE: &[PhaseSpec] = &[
    PhaseSpec {
        phase: Phase::AttachTip,
        stage: Stage::Pre,
        facts: TIP,
    },
    PhaseSpec {
        phase: Phase::OpenLid,
        stage: Stage::Pre,
        facts: &[
            (TipAttached, true),
            (ContainerOnPlatform, true),
            (LidOpen, true),
        ],
    },
    PhaseSpec {
        phase: Phase::Aspirate,
        stage: Stage::Mid,
        facts: ASPIRATE_TARGET,
    },
    PhaseSpec {
        phase: Phase::EjectWaste,
        stage: Stage::Post,
        facts: TIP,
    },
];
const ADD: &[PhaseSpec] = &[
    PhaseSpec {
        phase: Phase::AttachTip,
        stage: Stage::Pre,
        facts: TIP,
    },
    PhaseSpec {
        phase: Phase::OpenSource,
        stage: Stage::Pre,
        facts: SOURCE,
    },
    PhaseSpec {
        phase: Phase::Aspirate,
        stage: Stage::Mid,
        facts: SOURCE,
    },
    PhaseSpec {
        phase: Phase::Dispense,
        stage: Stage::Post,
        facts: ASPIRATE_TARGET,
    },
];
const DETACH: &[PhaseSpec] = &[
    PhaseSpec {
        phase: Phase::AttachTip,
        stage: Stage::Pre,
        facts: TIP,
    },
    PhaseSpec {
        phase: Phase::Pipetting,
        stage: Stage::Mid,
        facts: ASPIRATE_TARGET,
    },
];
const SHAKE: &[PhaseSpec] = &[PhaseSpec {
    phase: Phase::Agitate,
    stage: Stage::Mid,
    facts: &[(ContainerOnPlatform, true), (LidOpen, false)],
}];
const CENTRIFUGE: &[PhaseSpec] = &[
    PhaseSpec {
        phase: Phase::Load,
        stage: Stage::Pre,
        facts: ROTOR,
    },
    PhaseSpec {
        phase: Phase::Spin,
        stage: Stage::Mid,
        facts: ROTOR,
    },
    PhaseSpec {
        phase: Phase::Unload,
        stage: Stage::Post,
        facts: ROTOR,
    },
];
const RESUSPEND: &[PhaseSpec] = &[
    PhaseSpec {
        phase: Phase::AttachTip,
        stage: Stage::Pre,
        facts: TIP,
    },
    PhaseSpec {
        phase: Phase::Resuspend,
        stage: Stage::Mid,
        facts: &[(TipAttached, true), (TubePresent, true), (LidOpen, true)],
    },
];
const SUPERNATANT: &[PhaseSpec] = &[
    PhaseSpec {
        phase: Phase::Decap,
        stage: Stage::Pre,
        facts: TUBE_OPEN,
    },
    PhaseSpec {
        phase: Phase::Pour,
        stage: Stage::Mid,
        facts: TUBE_OPEN,
    },
];
const GET: &[PhaseSpec] = &[PhaseSpec {
    phase: Phase::Pick,
    stage: Stage::Mid,
    facts: &[(ContainerOnPlatform, true)],
}];
const DISCARD: &[PhaseSpec] = &[PhaseSpec {
    phase: Phase::Discard,
    stage: Stage::Mid,
    facts: &[(ContainerOnPlatform, false), (ContainerDiscarded, true)],
}];

pub fn phases(primitive: Primitive) -> &'static [PhaseSpec] {
    match primitive {
        Primitive::TakeOutCells => TAKE_OUT,
        Primitive::PutBackIncubator => PUT_BACK,
        Primitive::RemoveLiquid => REMOVE,
        Primitive::AddLiquid => ADD,
        Primitive::DetachCellsWithPipette => DETACH,
        Primitive::Shake => SHAKE,
        Primitive::Centrifuge => CENTRIFUGE,
        Primitive::Resuspension => RESUSPEND,
        Primitive::RemoveSupernatant => SUPERNATANT,
        Primitive::GetContainer => GET,
        Primitive::DiscardContainer => DISCARD,
    }
}

pub fn phase_spec(class: ActionClass) -> Option<&'static PhaseSpec> {
    phases(class.primitive)
        .iter()
        .find(|p| p.phase == class.phase)
}

/// Every action class in registry order.
pub fn action_classes() -> Vec<ActionClass> {
    Primitive::ALL
        .iter()
        .flat_map(|&primitive| {
            phases(primitive).iter().map(move |p| ActionClass {
                primitive,
                phase: p.phase,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn twenty_three_distinct_classes() {
        let classes = action_classes();
        assert_eq!(classes.len(), 23);
        assert_eq!(classes.iter().collect::<HashSet<_>>().len(), 23);
        for p in Primitive::ALL {
            assert!((1..=4).contains(&phases(p).len()), "{p}");
        }
    }

    #[test]
    fn add_liquid_has_four_phases_in_order() {
        let names: Vec<_> = phases(Primitive::AddLiquid)
            .iter()
            .map(|p| p.phase.name())
            .collect();
        assert_eq!(names, ["attach_tip", "open_source", "aspirate", "dispense"]);
    }

    #[test]
    fn phase_names_parse() {
        for c in action_classes() {
            assert_eq!(c.phase.name().parse::<Phase>().unwrap(), c.phase);
        }
    }
}
