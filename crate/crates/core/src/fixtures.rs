//! Bundled protocol programs used by tests, examples and the detector calibration.

use crate::ir::{parse_program, FunctionRegistry, ProtocolProgram};

/// HepG2 medium change; runs clean on the default lab.
pub const MEDIUM_CHANGE: &str = include_str!("../fixtures/score5_medium_change.blp");
/// HUVEC freeze-and-store transcript with a centrifuge on an empty tube.
pub const FREEZE_HUVEC: &str = include_str!("../fixtures/score3_freeze_huvec.blp");
/// Full passaging run exercising all eleven primitives.
pub const PASSAGING: &str = include_str!("../fixtures/passaging.blp");

fn load(src: &str) -> ProtocolProgram {
    parse_program(src, &FunctionRegistry::builtin()).expect("bundled fixture parses")
}

pub fn medium_change() -> ProtocolProgram {
    load(MEDIUM_CHANGE)
}

pub fn freeze_huvec() -> ProtocolProgram {
    load(FREEZE_HUVEC)
}

pub fn passaging() -> ProtocolProgram {
    load(PASSAGING)
}

/// Instruction in [`passaging`] that hosts each fault scenario.
pub fn passaging_host(scenario_id: u8) -> Option<usize> {
    Some(match scenario_id {
        1..=4 => 1,
        5..=7 | 12 | 13 => 2,
        8 | 9 => 11,
        10 | 11 => 17,
        14..=16 => 12,
        17 | 18 => 15,
        19 | 20 => 9,
        _ => return None,
    })
}
