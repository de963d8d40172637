//! Seeded generators: well-formed instructions for parser round-trips and
//! fault-injected programs for checker coverage.

use indexmap::IndexMap;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checker::FindingKind;
use crate::ir::{ArgValue, FunctionRegistry, Instruction, Quantity, ValueKind};

const TEXT_CHARS: &[char] = &[
    'a', 'b', 'Z', 'q', '0', '7', ' ', '_', '-', '.', ',', '(', ')', '[', ']', '=', '#', '"', '\\',
    '\n', '\t', '\'', 'µ', 'é', '温',
];

fn random_text<R: Rng>(rng: &mut R) -> String {
    let len = rng.random_range(1..=12);
    (0..len)
        .map(|_| *TEXT_CHARS.choose(rng).expect("non-empty"))
        .collect()
}

fn random_value<R: Rng>(rng: &mut R, kind: ValueKind) -> ArgValue {
    match kind {
        ValueKind::Text => ArgValue::Text(random_text(rng)),
        ValueKind::Quantity(unit) => {
            let v = match rng.random_range(0..3) {
                0 => rng.random_range(0..=5000) as f64,
                1 => rng.random_range(0..=20000) as f64 / 8.0,
                _ => rng.random::<f64>() * 1000.0,
            };
            ArgValue::Quantity(Quantity::new(v, unit).expect("non-negative"))
        }
        ValueKind::Integer => ArgValue::Integer(rng.random_range(-1_000_000..=1_000_000)),
        ValueKind::Bool => ArgValue::Bool(rng.random()),
        ValueKind::TextList => {
            let n = rng.random_range(1..=4);
            ArgValue::TextList((0..n).map(|_| random_text(rng)).collect())
        }
    }
}

/// A random call to a registry function with every parameter bound to a well-typed value.
pub fn random_instruction<R: Rng>(rng: &mut R, registry: &FunctionRegistry) -> Instruction {
    let spec = registry.specs().choose(rng).expect("non-empty registry");
    let args: IndexMap<String, ArgValue> = spec
        .params
        .iter()
        .map(|p| (p.name.clone(), random_value(rng, p.kind)))
        .collect();
    Instruction {
        function: spec.name.clone(),
        args,
        span: None,
    }
}

pub fn round_trip_corpus(n: usize, seed: u64) -> Vec<Instruction> {
    let registry = FunctionRegistry::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| random_instruction(&mut rng, &registry))
        .collect()
}

/// A program with one injected fault of a known class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeededProgram {
    pub kind: FindingKind,
    /// Input line (0-based instruction index) carrying the fault.
    pub fault_index: usize,
    pub source: String,
}

/// The classes [`fault_corpus`] seeds, in generation order.
pub const SEEDED_KINDS: [FindingKind; 4] = [
    FindingKind::RangeViolation,
    FindingKind::TypeRepair,
    FindingKind::MissingPrerequisite,
    FindingKind::SuperfluousInstruction,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Dish,
    Tube,
    SecondDish,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    SpeedOutOfRange,
    TimeOutOfRange,
    DetachmentOutOfRange,
    VolumeOverPipette,
    QuotedVolume,
    QuotedSpeed,
    BareContainerList,
    ResuspendEmptyTube,
    DetachEmptyDish,
    DuplicateShake,
    RemoveFromEmpty,
}

impl Variant {
    fn for_kind(kind: FindingKind) -> &'static [Variant] {
        use Variant::*;
        match kind {
            FindingKind::RangeViolation => &[
                SpeedOutOfRange,
                TimeOutOfRange,
                DetachmentOutOfRange,
                VolumeOverPipette,
            ],
            FindingKind::TypeRepair => &[QuotedVolume, QuotedSpeed, BareContainerList],
            FindingKind::MissingPrerequisite => &[ResuspendEmptyTube, DetachEmptyDish],
            FindingKind::SuperfluousInstruction => &[DuplicateShake, RemoveFromEmpty],
            _ => &[],
        }
    }
}

struct Builder {
    lines: Vec<String>,
    fault: Option<usize>,
}

impl Builder {
    fn push(&mut self, line: String) {
        self.lines.push(line);
    }

    fn push_fault(&mut self, line: String) {
        self.fault = Some(self.lines.len());
        self.lines.push(line);
    }
}

fn quantity(v: f64) -> String {
    format!("{v}")
}

fn half_steps<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let steps = ((hi - lo) * 2.0).floor() as i64;
    lo + rng.random_range(0..=steps) as f64 / 2.0
}

/// One take-out, wash, feed, put-back cycle on ContainerA. Returns the dish volume after it.
fn dish_part<R: Rng>(b: &mut Builder, rng: &mut R, v: Option<Variant>, start: f64) -> f64 {
    let list = if v == Some(Variant::BareContainerList) {
        "\"ContainerA\""
    } else {
        "[\"ContainerA\"]"
    };
    if v == Some(Variant::BareContainerList) {
        b.push_fault(format!("take_out_cells({list})"));
    } else {
        b.push(format!("take_out_cells({list})"));
    }
    let mut volume = start;
    let first = half_steps(rng, (volume - 10.0).max(0.5), volume.min(10.0));
    if v == Some(Variant::QuotedVolume) {
        b.push_fault(format!(
            "remove_liquid(\"{}\", \"ContainerA\")",
            quantity(first)
        ));
    } else {
        b.push(format!(
            "remove_liquid({}, \"ContainerA\")",
            quantity(first)
        ));
    }
    volume -= first;
    let wash = half_steps(rng, 1.0, 10.0);
    b.push(format!(
        "add_liquid(\"PBS\", {}, \"ContainerA\")",
        quantity(wash)
    ));
    volume += wash;
    b.push("shake(\"ContainerA\")".into());
    if v == Some(Variant::DuplicateShake) {
        b.push_fault("shake(\"ContainerA\")".into());
    }
    let second = half_steps(rng, 0.5, volume.min(10.0));
    b.push(format!(
        "remove_liquid({}, \"ContainerA\")",
        quantity(second)
    ));
    volume -= second;
    let medium = half_steps(rng, 0.5, (20.0 - volume).min(10.0));
    b.push(format!(
        "add_liquid(\"culture medium\", {}, \"ContainerA\")",
        quantity(medium)
    ));
    volume += medium;
    let minutes = match v {
        Some(Variant::DetachmentOutOfRange) => {
            if rng.random() {
                rng.random_range(61..=240)
            } else {
                -rng.random_range(1..=30)
            }
        }
        _ => rng.random_range(0..=60),
    };
    let line = format!("put_back_incubator([\"ContainerA\"], {minutes})");
    if v == Some(Variant::DetachmentOutOfRange) {
        b.push_fault(line);
    } else {
        b.push(line);
    }
    volume
}

fn tube_part<R: Rng>(b: &mut Builder, rng: &mut R, v: Option<Variant>) {
    b.push("get_container(\"TubeA\")".into());
    let fill = half_steps(rng, 1.0, 10.0);
    b.push(format!(
        "add_liquid(\"PBS\", {}, \"TubeA\")",
        quantity(fill)
    ));
    let mut speed = rng.random_range(100..=4000).to_string();
    let mut time = rng.random_range(1..=30).to_string();
    match v {
        Some(Variant::SpeedOutOfRange) => {
            speed = if rng.random() {
                rng.random_range(4001..=15000).to_string()
            } else {
                rng.random_range(0..100).to_string()
            }
        }
        Some(Variant::TimeOutOfRange) => {
            time = if rng.random() {
                rng.random_range(31..=240).to_string()
            } else {
                format!("0.{}", rng.random_range(1..=9))
            }
        }
        Some(Variant::QuotedSpeed) => speed = format!("\"{speed}\""),
        _ => {}
    }
    let line = format!("centrifuge({speed}, {time}, \"TubeA\")");
    if matches!(
        v,
        Some(Variant::SpeedOutOfRange | Variant::TimeOutOfRange | Variant::QuotedSpeed)
    ) {
        b.push_fault(line);
    } else {
        b.push(line);
    }
    b.push("remove_supernatant(\"TubeA\")".into());
    if v != Some(Variant::ResuspendEmptyTube) {
        let medium = half_steps(rng, 1.0, 10.0);
        b.push(format!(
            "add_liquid(\"complete growth medium\", {}, \"TubeA\")",
            quantity(medium)
        ));
        b.push("resuspension(\"TubeA\")".into());
    } else {
        b.push_fault("resuspension(\"TubeA\")".into());
    }
}

fn second_dish_part<R: Rng>(b: &mut Builder, rng: &mut R, v: Option<Variant>) {
    b.push("get_container(\"ContainerB\")".into());
    if v == Some(Variant::RemoveFromEmpty) {
        b.push_fault(format!(
            "remove_liquid({}, \"ContainerB\")",
            quantity(half_steps(rng, 0.5, 10.0))
        ));
    }
    if v == Some(Variant::DetachEmptyDish) {
        b.push_fault("detach_cells_with_pipette(\"ContainerB\")".into());
        return;
    }
    let volume = if v == Some(Variant::VolumeOverPipette) {
        half_steps(rng, 10.5, 50.0)
    } else {
        half_steps(rng, 1.0, 10.0)
    };
    let line = format!(
        "add_liquid(\"culture medium\", {}, \"ContainerB\")",
        quantity(volume)
    );
    if v == Some(Variant::VolumeOverPipette) {
        b.push_fault(line);
    } else {
        b.push(line);
    }
    b.push("shake(\"ContainerB\")".into());
    b.push("put_back_incubator([\"ContainerB\"])".into());
}

fn required_part(v: Variant) -> Part {
    use Variant::*;
    match v {
        DetachmentOutOfRange | QuotedVolume | BareContainerList | DuplicateShake => Part::Dish,
        SpeedOutOfRange | TimeOutOfRange | QuotedSpeed | ResuspendEmptyTube => Part::Tube,
        VolumeOverPipette | DetachEmptyDish | RemoveFromEmpty => Part::SecondDish,
    }
}

fn build(rng: &mut ChaCha8Rng, fault: Option<Variant>) -> Builder {
    let mut parts = vec![Part::Dish];
    for p in [Part::Tube, Part::SecondDish] {
        if rng.random_bool(0.5) || fault.map(required_part) == Some(p) {
            parts.push(p);
        }
    }
    let mut b = Builder {
        lines: Vec::new(),
        fault: None,
    };
    for p in parts {
        let v = fault.filter(|v| required_part(*v) == p);
        match p {
            Part::Dish => {
                dish_part(&mut b, rng, v, 10.0);
            }
            Part::Tube => tube_part(&mut b, rng, v),
            Part::SecondDish => second_dish_part(&mut b, rng, v),
        }
    }
    b
}

fn source(lines: &[String]) -> String {
    let mut s = lines.join("\n");
    s.push('\n');
    s
}

/// A random program in the corpus grammar with no injected fault.
pub fn clean_program(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    source(&build(&mut rng, None).lines)
}

/// Exactly `len` instructions of repeated dish cycles followed by one tube cycle.
pub fn long_program(len: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        lines: Vec::new(),
        fault: None,
    };
    let mut volume = 10.0;
    tube_part(&mut b, &mut rng, None);
    while b.lines.len() < len {
        volume = dish_part(&mut b, &mut rng, None, volume);
    }
    b.lines.truncate(len);
    source(&b.lines)
}

/// `per_class` programs for each of [`SEEDED_KINDS`], variants cycled within a class.
pub fn fault_corpus(per_class: usize, seed: u64) -> Vec<SeededProgram> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * SEEDED_KINDS.len());
    for kind in SEEDED_KINDS {
        let variants = Variant::for_kind(kind);
        for i in 0..per_class {
            let b = build(&mut rng, Some(variants[i % variants.len()]));
            out.push(SeededProgram {
                kind,
                fault_index: b.fault.expect("fault placed"),
                source: source(&b.lines),
            });
        }
    }
    out
}
