use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DetectorError;
use crate::env::ContainerKind;
use crate::ir::Primitive;
use crate::sim::{action_classes, phase_spec, ActionClass, Fact, ObservationFrame, Phase};

/// A fact the frame must show with a given value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Requirement {
    pub fact: Fact,
    pub expected: bool,
}

impl Requirement {
    pub fn instruction(&self) -> &'static str {
        match (self.fact, self.expected) {
            (Fact::TipAttached, _) => "attach pipette tip",
            (Fact::ContainerOnPlatform, true) => "place container on platform",
            (Fact::ContainerOnPlatform, false) => "clear container from platform",
            (Fact::LidOpen, true) => "open container lid",
            (Fact::LidOpen, false) => "close container lid",
            (Fact::PlatformRaised, _) => "raise platform",
            (Fact::SourcePresent, _) => "connect liquid source",
            (Fact::SourceLidOpen, _) => "open source lid",
            (Fact::RotorInPlace, _) => "seat centrifuge rotor",
            (Fact::TubePresent, _) => "place centrifuge tube",
            (Fact::ContainerInIncubator, true) => "store container in incubator",
            (Fact::ContainerInIncubator, false) => "remove container from incubator",
            (Fact::ContainerDiscarded, _) => "discard container",
        }
    }
}

/// Maps a violated fact in a given context to a fault scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioRule {
    pub primitive: Primitive,
    /// `None` matches any phase.
    pub phases: Option<&'static [Phase]>,
    pub fact: Fact,
    /// `None` matches any source kind.
    pub source: Option<&'static [ContainerKind]>,
    pub scenario: u8,
}

const fn rule(
    primitive: Primitive,
    phases: Option<&'static [Phase]>,
    fact: Fact,
    source: Option<&'static [ContainerKind]>,
    scenario: u8,
) -> ScenarioRule {
    ScenarioRule {
        primitive,
        phases,
        fact,
        source,
        scenario,
    }
}

use ContainerKind::{Bottle, Dish, Tube};
use Fact::*;
use Primitive as Pr;

const DISH: &[ContainerKind] = &[Dish];
const TUBE: &[ContainerKind] = &[Tube];
const BOTTLE: &[ContainerKind] = &[Bottle];
const VESSEL: &[ContainerKind] = &[Dish, Tube];

/// Checked in order; the first rule whose fact is violated wins.
pub const SCENARIO_RULES: &[ScenarioRule] = &[
    rule(Pr::RemoveLiquid, None, ContainerOnPlatform, None, 1),
    rule(Pr::RemoveLiquid, None, TipAttached, None, 2),
    rule(Pr::RemoveLiquid, None, LidOpen, None, 3),
    rule(Pr::RemoveLiquid, None, PlatformRaised, None, 4),
    rule(
        Pr::AddLiquid,
        Some(&[Phase::AttachTip, Phase::OpenSource]),
        TipAttached,
        None,
        5,
    ),
    rule(
        Pr::AddLiquid,
        Some(&[Phase::Aspirate]),
        TipAttached,
        Some(DISH),
        9,
    ),
    rule(
        Pr::AddLiquid,
        Some(&[Phase::Aspirate]),
        TipAttached,
        Some(TUBE),
        11,
    ),
    rule(
        Pr::AddLiquid,
        Some(&[Phase::Aspirate]),
        TipAttached,
        Some(BOTTLE),
        5,
    ),
    rule(
        Pr::AddLiquid,
        Some(&[Phase::Dispense]),
        TipAttached,
        None,
        13,
    ),
    rule(
        Pr::AddLiquid,
        Some(&[Phase::Dispense]),
        PlatformRaised,
        None,
        12,
    ),
    rule(Pr::AddLiquid, None, SourcePresent, Some(BOTTLE), 6),
    rule(Pr::AddLiquid, None, SourcePresent, Some(VESSEL), 10),
    rule(Pr::AddLiquid, None, SourceLidOpen, Some(BOTTLE), 7),
    rule(Pr::AddLiquid, None, SourceLidOpen, Some(VESSEL), 8),
    rule(Pr::Centrifuge, Some(&[Phase::Load]), RotorInPlace, None, 14),
    rule(
        Pr::Centrifuge,
        Some(&[Phase::Spin, Phase::Unload]),
        RotorInPlace,
        None,
        16,
    ),
    rule(Pr::Centrifuge, None, TubePresent, None, 15),
    rule(
        Pr::Resuspension,
        Some(&[Phase::AttachTip]),
        TipAttached,
        None,
        17,
    ),
    rule(
        Pr::Resuspension,
        Some(&[Phase::Resuspend]),
        TipAttached,
        None,
        18,
    ),
    rule(
        Pr::DetachCellsWithPipette,
        Some(&[Phase::AttachTip]),
        TipAttached,
        None,
        19,
    ),
    rule(
        Pr::DetachCellsWithPipette,
        Some(&[Phase::Pipetting]),
        TipAttached,
        None,
        20,
    ),
];

/// Per-class required facts plus the scenario mapping for violations.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConstraints {
    sets: BTreeMap<ActionClass, Vec<Requirement>>,
    rules: Vec<ScenarioRule>,
}

impl Default for TaskConstraints {
    fn default() -> Self {
        Self::standard()
    }
}

impl TaskConstraints {
    /// Requirements are the clean-run fact values of each phase.
    pub fn standard() -> Self {
        let sets = action_classes()
            .into_iter()
            .map(|class| {
                let spec = phase_spec(class).expect("class from table");
                let reqs = spec
                    .facts
                    .iter()
                    .map(|&(fact, expected)| Requirement { fact, expected })
                    .collect();
                (class, reqs)
            })
            .collect();
        Self {
            sets,
            rules: SCENARIO_RULES.to_vec(),
        }
    }

    pub fn new(sets: BTreeMap<ActionClass, Vec<Requirement>>, rules: Vec<ScenarioRule>) -> Self {
        Self { sets, rules }
    }

    pub fn requirements(&self, class: ActionClass) -> Option<&[Requirement]> {
        self.sets.get(&class).map(Vec::as_slice)
    }

    pub fn rules(&self) -> &[ScenarioRule] {
        &self.rules
    }

    /// Requirements the frame fails; a missing fact counts as failed.
    pub fn violations(&self, frame: &ObservationFrame) -> Result<Vec<Requirement>, DetectorError> {
        let reqs = self
            .requirements(frame.class)
            .ok_or(DetectorError::MissingConstraintSet(frame.class))?;
        Ok(reqs
            .iter()
            .filter(|r| frame.fact(r.fact) != Some(r.expected))
            .copied()
            .collect())
    }

    pub fn scenario_for(&self, frame: &ObservationFrame, violated: &[Requirement]) -> Option<u8> {
        self.rules
            .iter()
            .find(|r| {
                r.primitive == frame.class.primitive
                    && r.phases.is_none_or(|ps| ps.contains(&frame.class.phase))
                    && r.source
                        .is_none_or(|ks| frame.subject.source_kind.is_some_and(|k| ks.contains(&k)))
                    && violated.iter().any(|v| v.fact == r.fact)
            })
            .map(|r| r.scenario)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn every_scenario_is_reachable() {
        let c = TaskConstraints::standard();
        let reached: BTreeSet<u8> = c.rules().iter().map(|r| r.scenario).collect();
        assert_eq!(reached, (1..=20).collect());
        for r in c.rules() {
            let phases = r.phases.unwrap_or(&[]);
            for p in phases {
                let class = ActionClass {
                    primitive: r.primitive,
                    phase: *p,
                };
                let reqs = c.requirements(class).expect("rule phase exists");
                assert!(
                    reqs.iter().any(|q| q.fact == r.fact),
                    "{class} lacks {}",
                    r.fact
                );
            }
        }
    }

    #[test]
    fn twenty_three_constraint_sets() {
        assert_eq!(TaskConstraints::standard().sets.len(), 23);
    }
}
