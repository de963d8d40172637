//! Rule-based validation and repair of programs against an [`EnvConfig`].

mod rules;
mod state;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::ir::{ArgValue, Instruction, Primitive, ProtocolProgram};

pub use rules::{eliminate_superfluous, enforce_ranges, repair_types};
pub use state::{
    is_enzyme, simulate_abstract, AbsLocation, AbstractContainer, AbstractLabState, Fault,
    Interval, PreconditionViolation, Tri, ViolationKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    RangeViolation,
    TypeRepair,
    MissingPrerequisite,
    SuperfluousInstruction,
    CapacityOverflow,
    UnknownContainer,
    PreconditionViolation,
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FindingKind::RangeViolation => "range_violation",
            FindingKind::TypeRepair => "type_repair",
            FindingKind::MissingPrerequisite => "missing_prerequisite",
            FindingKind::SuperfluousInstruction => "superfluous_instruction",
            FindingKind::CapacityOverflow => "capacity_overflow",
            FindingKind::UnknownContainer => "unknown_container",
            FindingKind::PreconditionViolation => "precondition_violation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Repaired,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Repair {
    Replace { instruction: Instruction },
    Insert { instruction: Instruction },
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckFinding {
    /// Index into the program the finding was raised against.
    pub index: usize,
    pub kind: FindingKind,
    pub severity: Severity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair: Option<Repair>,
    pub message: String,
}

impl CheckFinding {
    pub fn repaired(
        index: usize,
        kind: FindingKind,
        repair: Repair,
        message: impl Into<String>,
    ) -> Self {
        Self {
            index,
            kind,
            severity: Severity::Repaired,
            repair: Some(repair),
            message: message.into(),
        }
    }

    pub fn error(index: usize, kind: FindingKind, message: impl Into<String>) -> Self {
        Self {
            index,
            kind,
            severity: Severity::Error,
            repair: None,
            message: message.into(),
        }
    }
}

/// Line-delimited records (index, kind, severity, message).
pub fn findings_to_jsonl(findings: &[CheckFinding]) -> String {
    let mut out = String::new();
    for f in findings {
        let rec = serde_json::json!({
            "index": f.index,
            "kind": f.kind,
            "severity": f.severity,
            "message": f.message,
        });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "from", content = "index", rename_all = "snake_case")]
pub enum Provenance {
    Input(usize),
    Inserted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckedProgram {
    pub program: ProtocolProgram,
    pub findings: Vec<CheckFinding>,
    /// One entry per output instruction.
    pub provenance: Vec<Provenance>,
}

impl CheckedProgram {
    pub fn repairs(&self) -> usize {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Repaired)
            .count()
    }

    pub fn has_kind(&self, kind: FindingKind) -> bool {
        self.findings.iter().any(|f| f.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckError {
    #[error("program cannot be repaired: {}", summarize(.findings))]
    UnrepairableProgram { findings: Vec<CheckFinding> },
}

impl CheckError {
    pub fn findings(&self) -> &[CheckFinding] {
        match self {
            CheckError::UnrepairableProgram { findings } => findings,
        }
    }
}

fn summarize(findings: &[CheckFinding]) -> String {
    findings
        .iter()
        .filter(|f| f.severity == Severity::Error)
        .map(|f| format!("#{} {}: {}", f.index, f.kind, f.message))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Runs every pass from the env's initial state.
pub fn check_program(
    program: &ProtocolProgram,
    env: &EnvConfig,
) -> Result<CheckedProgram, CheckError> {
    check_program_from(program, env, AbstractLabState::from_env(env))
}

/// Runs every pass starting from an arbitrary abstract state, e.g. mid-run after a replan.
///
/// Pass order: type repair, range clamping, abstract simulation with prerequisite
/// insertion and capacity clamping, superfluous elimination.
pub fn check_program_from(
    program: &ProtocolProgram,
    env: &EnvConfig,
    start: AbstractLabState,
) -> Result<CheckedProgram, CheckError> {
    let mut findings = Vec::new();
    let mut instrs: Vec<Instruction> = Vec::with_capacity(program.len());

    for (i, instr) in program.instructions.iter().enumerate() {
        let (fixed, f) = repair_types(instr, i);
        findings.extend(f);
        instrs.push(fixed);
    }
    if has_errors(&findings) {
        return Err(CheckError::UnrepairableProgram { findings });
    }
    for (i, instr) in instrs.iter_mut().enumerate() {
        let (fixed, f) = rules::clamp_ranges(instr, env, i);
        findings.extend(f);
        *instr = fixed;
    }

    let mut provenance: Vec<Provenance> = (0..instrs.len()).map(Provenance::Input).collect();
    let (instrs, prov) = prerequisite_pass(instrs, provenance, env, start.clone(), &mut findings);
    if has_errors(&findings) {
        return Err(CheckError::UnrepairableProgram { findings });
    }
    provenance = prov;

    let staged = ProtocolProgram {
        instructions: instrs,
        ..program.clone()
    };
    let (out, removal, kept) = rules::eliminate_from(&staged, env, &start, &provenance);
    findings.extend(removal);
    provenance = kept;

    // The output must simulate cleanly; anything else is a bug in a repair rule.
    let mut state = start;
    for (i, instr) in out.instructions.iter().enumerate() {
        if let Err(fault) = state.apply(instr, env) {
            findings.push(violation_finding(source_index(&provenance, i), fault));
            return Err(CheckError::UnrepairableProgram { findings });
        }
    }

    Ok(CheckedProgram {
        program: out,
        findings,
        provenance,
    })
}

fn has_errors(findings: &[CheckFinding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Error)
}

fn source_index(provenance: &[Provenance], out_index: usize) -> usize {
    provenance[out_index..]
        .iter()
        .find_map(|p| match p {
            Provenance::Input(i) => Some(*i),
            Provenance::Inserted => None,
        })
        .unwrap_or(out_index)
}

fn violation_finding(index: usize, fault: Fault) -> CheckFinding {
    let kind = match fault.kind {
        ViolationKind::UnknownContainer | ViolationKind::Discarded => FindingKind::UnknownContainer,
        ViolationKind::CapacityOverflow => FindingKind::CapacityOverflow,
        ViolationKind::BadArgument => FindingKind::TypeRepair,
        _ => FindingKind::PreconditionViolation,
    };
    CheckFinding::error(index, kind, fault.message)
}

fn prerequisite_pass(
    instrs: Vec<Instruction>,
    provenance: Vec<Provenance>,
    env: &EnvConfig,
    mut state: AbstractLabState,
    findings: &mut Vec<CheckFinding>,
) -> (Vec<Instruction>, Vec<Provenance>) {
    let mut out = Vec::with_capacity(instrs.len());
    let mut prov = Vec::with_capacity(instrs.len());
    for (instr, p) in instrs.into_iter().zip(provenance) {
        let index = match p {
            Provenance::Input(i) => i,
            Provenance::Inserted => out.len(),
        };
        // provable no-ops are left for the elimination pass
        if state.is_noop(&instr) {
            out.push(instr);
            prov.push(p);
            continue;
        }
        let mut instr = instr;
        let mut fault = match state.apply(&instr, env) {
            Ok(()) => {
                out.push(instr);
                prov.push(p);
                continue;
            }
            Err(f) => f,
        };

        if fault.kind == ViolationKind::EmptyContainer
            && matches!(
                instr.primitive(),
                Some(Primitive::Resuspension | Primitive::DetachCellsWithPipette)
            )
        {
            let target = instr.text_arg("container").unwrap_or_default().to_string();
            let fill = medium_fill(env, &target, &state);
            match fill.as_ref().map(|f| state.apply(f, env)) {
                Some(Ok(())) => {
                    let fill = fill.expect("fill built");
                    findings.push(CheckFinding::repaired(
                        index,
                        FindingKind::MissingPrerequisite,
                        Repair::Insert {
                            instruction: fill.clone(),
                        },
                        format!(
                            "`{}` on empty `{target}` needs liquid; inserted {}",
                            instr.function, fill
                        ),
                    ));
                    out.push(fill);
                    prov.push(Provenance::Inserted);
                    match state.apply(&instr, env) {
                        Ok(()) => {
                            out.push(instr);
                            prov.push(p);
                            continue;
                        }
                        Err(f) => fault = f,
                    }
                }
                Some(Err(f)) => fault = f,
                None => {}
            }
        } else if fault.kind == ViolationKind::CapacityOverflow {
            let target = instr.text_arg("container").unwrap_or_default().to_string();
            let free = state
                .container(&target)
                .map_or(0.0, AbstractContainer::free_capacity);
            let before = instr.number_arg("volume").unwrap_or(0.0);
            instr.args.insert("volume".into(), ArgValue::ml(free));
            match state.apply(&instr, env) {
                Ok(()) => {
                    findings.push(CheckFinding::repaired(
                        index,
                        FindingKind::CapacityOverflow,
                        Repair::Replace { instruction: instr.clone() },
                        format!("volume {before} mL overfills `{target}`; clamped to free capacity {free} mL"),
                    ));
                    out.push(instr);
                    prov.push(p);
                    continue;
                }
                Err(f) => fault = f,
            }
        }
        findings.push(violation_finding(index, fault));
        return (out, prov);
    }
    (out, prov)
}

fn medium_fill(env: &EnvConfig, target: &str, state: &AbstractLabState) -> Option<Instruction> {
    let free = state.container(target)?.free_capacity();
    let volume = env
        .resuspension_volume
        .min(env.max_pipette_volume)
        .min(free);
    if volume <= 0.0 {
        return None;
    }
    Instruction::build(
        &crate::ir::FunctionRegistry::builtin(),
        "add_liquid",
        vec![
            (
                "liquid_type",
                ArgValue::text(env.resuspension_medium.clone()),
            ),
            ("volume", ArgValue::ml(volume)),
            ("container", ArgValue::text(target)),
        ],
    )
    .ok()
}
