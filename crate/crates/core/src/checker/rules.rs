use crate::env::EnvConfig;
use crate::ir::{
    ArgValue, FunctionRegistry, Instruction, Primitive, ProtocolProgram, Quantity, ValueKind,
};

use super::{source_index, AbstractLabState, CheckFinding, FindingKind, Provenance, Repair};

/// Coerces arguments to their declared kind where the intent is unambiguous.
pub fn repair_types(instr: &Instruction, index: usize) -> (Instruction, Vec<CheckFinding>) {
    let registry = FunctionRegistry::builtin();
    let Some(spec) = registry.get(&instr.function) else {
        let f = CheckFinding::error(
            index,
            FindingKind::TypeRepair,
            format!("unknown function `{}`", instr.function),
        );
        return (instr.clone(), vec![f]);
    };
    let mut out = instr.clone();
    let mut findings = Vec::new();
    for param in &spec.params {
        let Some(value) = instr.args.get(&param.name) else {
            continue;
        };
        if param.kind.accepts(value) {
            continue;
        }
        match coerce(value, param.kind) {
            Some(fixed) => {
                let message = format!(
                    "`{}` expects {}, got {} {value}; coerced to {fixed}",
                    param.name,
                    param.kind.name(),
                    value.kind_name()
                );
                out.args.insert(param.name.clone(), fixed);
                findings.push(CheckFinding {
                    index,
                    kind: FindingKind::TypeRepair,
                    severity: super::Severity::Repaired,
                    repair: None,
                    message,
                });
            }
            None => findings.push(CheckFinding::error(
                index,
                FindingKind::TypeRepair,
                format!(
                    "`{}` expects {}, got {} {value}",
                    param.name,
                    param.kind.name(),
                    value.kind_name()
                ),
            )),
        }
    }
    let repaired = out.clone();
    for f in findings
        .iter_mut()
        .filter(|f| f.severity == super::Severity::Repaired)
    {
        f.repair = Some(Repair::Replace {
            instruction: repaired.clone(),
        });
    }
    (out, findings)
}

fn coerce(value: &ArgValue, kind: ValueKind) -> Option<ArgValue> {
    let numeric_text = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite());
    match (kind, value) {
        (ValueKind::Quantity(unit), ArgValue::Text(s)) => {
            Quantity::new(numeric_text(s)?, unit).map(ArgValue::Quantity)
        }
        (ValueKind::Quantity(unit), ArgValue::Integer(i)) => {
            Quantity::new(*i as f64, unit).map(ArgValue::Quantity)
        }
        (ValueKind::Quantity(unit), ArgValue::Quantity(q)) => {
            Quantity::new(q.value(), unit).map(ArgValue::Quantity)
        }
        (ValueKind::Integer, ArgValue::Text(s)) => whole(numeric_text(s)?),
        (ValueKind::Integer, ArgValue::Quantity(q)) => whole(q.value()),
        (ValueKind::Text, ArgValue::Integer(i)) => Some(ArgValue::Text(i.to_string())),
        (ValueKind::Text, ArgValue::Quantity(q)) => Some(ArgValue::Text(q.value().to_string())),
        (ValueKind::Text, ArgValue::TextList(items)) if items.len() == 1 => {
            Some(ArgValue::Text(items[0].clone()))
        }
        (ValueKind::TextList, ArgValue::Text(s)) if !s.is_empty() => {
            Some(ArgValue::TextList(vec![s.clone()]))
        }
        _ => None,
    }
}

fn whole(v: f64) -> Option<ArgValue> {
    (v.fract() == 0.0 && v.abs() < 9.0e15).then_some(ArgValue::Integer(v as i64))
}

/// Clamps numeric arguments into their declared range; volumes are further capped at
/// the pipette's maximum.
pub(super) fn clamp_ranges(
    instr: &Instruction,
    env: &EnvConfig,
    index: usize,
) -> (Instruction, Vec<CheckFinding>) {
    let registry = FunctionRegistry::builtin();
    let Some(spec) = registry.get(&instr.function) else {
        return (instr.clone(), Vec::new());
    };
    let mut out = instr.clone();
    let mut messages = Vec::new();
    for param in &spec.params {
        let Some(value) = out.args.get(&param.name).cloned() else {
            continue;
        };
        let Some(v) = value.as_number() else { continue };
        let (lo, hi) = param.range.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        let cap = if param.is_volume() {
            hi.min(env.max_pipette_volume)
        } else {
            hi
        };
        let (clamped, why) = if v < lo {
            (lo, format!("below the allowed minimum {lo}"))
        } else if v > hi {
            (cap, format!("above the allowed maximum {hi}"))
        } else if v > cap {
            (cap, format!("above the pipette maximum {cap}"))
        } else {
            continue;
        };
        let fixed = match value {
            ArgValue::Quantity(q) => ArgValue::Quantity(
                Quantity::new(clamped, q.unit()).expect("clamped into a non-negative range"),
            ),
            ArgValue::Integer(_) => ArgValue::Integer(clamped as i64),
            other => other,
        };
        messages.push(format!(
            "`{}` = {v} is {why}; clamped to {clamped}",
            param.name
        ));
        out.args.insert(param.name.clone(), fixed);
    }
    let findings = messages
        .into_iter()
        .map(|m| {
            CheckFinding::repaired(
                index,
                FindingKind::RangeViolation,
                Repair::Replace {
                    instruction: out.clone(),
                },
                m,
            )
        })
        .collect();
    (out, findings)
}

/// Type repair followed by range clamping for a single instruction.
pub fn enforce_ranges(
    instr: &Instruction,
    env: &EnvConfig,
    index: usize,
) -> (Instruction, Vec<CheckFinding>) {
    let (typed, mut findings) = repair_types(instr, index);
    if findings
        .iter()
        .any(|f| f.severity == super::Severity::Error)
    {
        return (typed, findings);
    }
    let (clamped, more) = clamp_ranges(&typed, env, index);
    findings.extend(more);
    (clamped, findings)
}

/// Removes instructions that are provable no-ops, iterating until nothing changes.
pub fn eliminate_superfluous(
    program: &ProtocolProgram,
    env: &EnvConfig,
) -> (ProtocolProgram, Vec<CheckFinding>) {
    let provenance: Vec<Provenance> = (0..program.len()).map(Provenance::Input).collect();
    let (out, findings, _) =
        eliminate_from(program, env, &AbstractLabState::from_env(env), &provenance);
    (out, findings)
}

pub(super) fn eliminate_from(
    program: &ProtocolProgram,
    env: &EnvConfig,
    start: &AbstractLabState,
    provenance: &[Provenance],
) -> (ProtocolProgram, Vec<CheckFinding>, Vec<Provenance>) {
    let mut instrs = program.instructions.clone();
    let mut prov = provenance.to_vec();
    let mut findings = Vec::new();
    loop {
        let mut state = start.clone();
        let mut drop = vec![false; instrs.len()];
        let mut prev_kept: Option<usize> = None;
        for (i, instr) in instrs.iter().enumerate() {
            let reason = if state.is_noop(instr) {
                Some(match instr.primitive() {
                    Some(Primitive::RemoveLiquid) => "container is provably empty",
                    _ => "every container is already in the incubator",
                })
            } else if instr.primitive() == Some(Primitive::Shake)
                && prev_kept.is_some_and(|p| {
                    instrs[p].primitive() == Some(Primitive::Shake)
                        && instrs[p].text_arg("container") == instr.text_arg("container")
                })
            {
                Some("repeats the preceding shake")
            } else {
                None
            };
            match reason {
                Some(why) => {
                    drop[i] = true;
                    findings.push(CheckFinding::repaired(
                        source_index(&prov, i),
                        FindingKind::SuperfluousInstruction,
                        Repair::Remove,
                        format!("removed {instr}: {why}"),
                    ));
                }
                None => {
                    // violations are the prerequisite pass's business; keep folding
                    let _ = state.apply(instr, env);
                    prev_kept = Some(i);
                }
            }
        }
        if !drop.contains(&true) {
            break;
        }
        let mut keep = drop.iter().map(|d| !d);
        instrs.retain(|_| keep.next().unwrap_or(true));
        let mut keep = drop.iter().map(|d| !d);
        prov.retain(|_| keep.next().unwrap_or(true));
    }
    let out = ProtocolProgram {
        instructions: instrs,
        ..program.clone()
    };
    (out, findings, prov)
}
