use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::value::{ArgValue, Unit, ValueKind};
use super::IrError;

/// The eleven robot primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    TakeOutCells,
    PutBackIncubator,
    RemoveLiquid,
    AddLiquid,
    DetachCellsWithPipette,
    Shake,
    Centrifuge,
    Resuspension,
    RemoveSupernatant,
    GetContainer,
    DiscardContainer,
}

impl Primitive {
    pub const ALL: [Primitive; 11] = [
        Primitive::TakeOutCells,
        Primitive::PutBackIncubator,
        Primitive::RemoveLiquid,
        Primitive::AddLiquid,
        Primitive::DetachCellsWithPipette,
        Primitive::Shake,
        Primitive::Centrifuge,
        Primitive::Resuspension,
        Primitive::RemoveSupernatant,
        Primitive::GetContainer,
        Primitive::DiscardContainer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::TakeOutCells => "take_out_cells",
            Primitive::PutBackIncubator => "put_back_incubator",
            Primitive::RemoveLiquid => "remove_liquid",
            Primitive::AddLiquid => "add_liquid",
            Primitive::DetachCellsWithPipette => "detach_cells_with_pipette",
            Primitive::Shake => "shake",
            Primitive::Centrifuge => "centrifuge",
            Primitive::Resuspension => "resuspension",
            Primitive::RemoveSupernatant => "remove_supernatant",
            Primitive::GetContainer => "get_container",
            Primitive::DiscardContainer => "discard_container",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Primitive::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown primitive `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ValueKind,
    pub required: bool,
    pub default: Option<ArgValue>,
    /// Inclusive numeric bounds for quantity/integer parameters.
    pub range: Option<(f64, f64)>,
    pub description: String,
}

impl ParamSpec {
    pub fn unit(&self) -> Option<Unit> {
        match self.kind {
            ValueKind::Quantity(u) => Some(u),
            _ => None,
        }
    }

    pub fn is_volume(&self) -> bool {
        self.unit() == Some(Unit::Milliliter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub name: String,
    pub params: Vec<ParamSpec>,
    pub description: String,
}

impl FunctionSpec {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Set of callable functions a program is bound against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionRegistry {
    specs: Vec<FunctionSpec>,
}

impl FunctionRegistry {
    /// Validates name uniqueness and that every default lies in its range.
    pub fn new(specs: Vec<FunctionSpec>) -> Result<Self, IrError> {
        let mut seen = HashSet::new();
        for spec in &specs {
            if !seen.insert(spec.name.as_str()) {
                return Err(IrError::InvalidRegistry(format!(
                    "duplicate function `{}`",
                    spec.name
                )));
            }
            let mut params = HashSet::new();
            for p in &spec.params {
                if !params.insert(p.name.as_str()) {
                    return Err(IrError::InvalidRegistry(format!(
                        "duplicate parameter `{}` in `{}`",
                        p.name, spec.name
                    )));
                }
                if let Some(default) = &p.default {
                    if !p.kind.accepts(default) {
                        return Err(IrError::InvalidRegistry(format!(
                            "default of `{}.{}` has kind {}",
                            spec.name,
                            p.name,
                            default.kind_name()
                        )));
                    }
                    if let (Some((lo, hi)), Some(v)) = (p.range, default.as_number()) {
                        if v < lo || v > hi {
                            return Err(IrError::InvalidRegistry(format!(
                                "default of `{}.{}` outside [{lo}, {hi}]",
                                spec.name, p.name
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self { specs })
    }

    pub fn builtin() -> Self {
        Self::new(builtin_specs()).expect("builtin registry is valid")
    }

    pub fn get(&self, name: &str) -> Option<&FunctionSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn specs(&self) -> &[FunctionSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

impl Default for FunctionRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

fn container_param(description: &str) -> ParamSpec {
    ParamSpec {
        name: "container".into(),
        kind: ValueKind::Text,
        required: true,
        default: None,
        range: None,
        description: description.into(),
    }
}

fn containers_param(description: &str) -> ParamSpec {
    ParamSpec {
        name: "containers".into(),
        kind: ValueKind::TextList,
        required: true,
        default: None,
        range: None,
        description: description.into(),
    }
}

fn volume_param(description: &str) -> ParamSpec {
    ParamSpec {
        name: "volume".into(),
        kind: ValueKind::Quantity(Unit::Milliliter),
        required: true,
        default: None,
        range: Some((0.0, 50.0)),
        description: description.into(),
    }
}

fn func(name: &str, description: &str, params: Vec<ParamSpec>) -> FunctionSpec {
    FunctionSpec {
        name: name.into(),
        params,
        description: description.into(),
    }
}

fn builtin_specs() -> Vec<FunctionSpec> {
    vec![
        func(
            "take_out_cells",
            "Move culture dishes holding cells out of the incubator onto a handling platform.",
            vec![containers_param("Dishes to take out of the incubator.")],
        ),
        func(
            "put_back_incubator",
            "Return dishes to the incubator, optionally holding them there for enzymatic detachment.",
            vec![
                containers_param("Dishes to return to the incubator."),
                ParamSpec {
                    name: "detachment_time".into(),
                    kind: ValueKind::Integer,
                    required: false,
                    default: Some(ArgValue::Integer(0)),
                    range: Some((0.0, 60.0)),
                    description: "Minutes to keep the dishes incubating for detachment.".into(),
                },
            ],
        ),
        func(
            "remove_liquid",
            "Aspirate liquid from a container with a pipette tip and discard it to waste.",
            vec![
                volume_param("Volume to aspirate, in mL."),
                container_param("Container to aspirate from."),
            ],
        ),
        func(
            "add_liquid",
            "Aspirate a named solution from its source and dispense it into a container.",
            vec![
                ParamSpec {
                    name: "liquid_type".into(),
                    kind: ValueKind::Text,
                    required: false,
                    default: Some(ArgValue::text("PBS")),
                    range: None,
                    description: "Solution to transfer.".into(),
                },
                volume_param("Volume to add, in mL."),
                container_param("Destination container."),
            ],
        ),
        func(
            "detach_cells_with_pipette",
            "Pipette the existing liquid over enzyme-treated cells to lift and suspend them.",
            vec![container_param("Container holding the treated cells.")],
        ),
        func(
            "shake",
            "Gently agitate a container to mix its contents.",
            vec![container_param("Container to shake.")],
        ),
        func(
            "centrifuge",
            "Spin a centrifuge tube at the given force for the given duration.",
            vec![
                ParamSpec {
                    name: "speed".into(),
                    kind: ValueKind::Quantity(Unit::GForce),
                    required: true,
                    default: None,
                    range: Some((100.0, 4000.0)),
                    description: "Relative centrifugal force, in g.".into(),
                },
                ParamSpec {
                    name: "time".into(),
                    kind: ValueKind::Quantity(Unit::Minute),
                    required: true,
                    default: None,
                    range: Some((1.0, 30.0)),
                    description: "Spin duration, in minutes.".into(),
                },
                container_param("Tube to spin."),
            ],
        ),
        func(
            "resuspension",
            "Resuspend a cell pellet by repeatedly aspirating and dispensing the tube's liquid.",
            vec![container_param("Tube holding the pellet.")],
        ),
        func(
            "remove_supernatant",
            "Pour the supernatant out of a tube, leaving the pellet.",
            vec![container_param("Tube to decant.")],
        ),
        func(
            "get_container",
            "Fetch a container from its storage rack into the workspace.",
            vec![container_param("Container to fetch.")],
        ),
        func(
            "discard_container",
            "Discard a used container.",
            vec![container_param("Container to discard.")],
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_eleven_functions_matching_primitives() {
        let reg = FunctionRegistry::builtin();
        assert_eq!(reg.len(), 11);
        for p in Primitive::ALL {
            assert!(reg.get(p.name()).is_some(), "{p} missing");
        }
    }

    #[test]
    fn add_liquid_signature() {
        let reg = FunctionRegistry::builtin();
        let spec = reg.get("add_liquid").unwrap();
        let names: Vec<_> = spec.params.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["liquid_type", "volume", "container"]);
        assert_eq!(spec.params[0].default, Some(ArgValue::text("PBS")));
        assert_eq!(spec.params[1].unit(), Some(Unit::Milliliter));
        assert_eq!(spec.params[2].kind, ValueKind::Text);
    }

    #[test]
    fn put_back_incubator_signature() {
        let reg = FunctionRegistry::builtin();
        let spec = reg.get("put_back_incubator").unwrap();
        assert_eq!(spec.params[0].kind, ValueKind::TextList);
        assert_eq!(spec.params[1].name, "detachment_time");
        assert_eq!(spec.params[1].kind, ValueKind::Integer);
        assert_eq!(spec.params[1].default, Some(ArgValue::Integer(0)));
    }

    #[test]
    fn rejects_duplicates_and_out_of_range_defaults() {
        let mut specs = builtin_specs();
        specs.push(specs[0].clone());
        assert!(FunctionRegistry::new(specs).is_err());

        let mut specs = builtin_specs();
        specs[1].params[1].default = Some(ArgValue::Integer(500));
        assert!(FunctionRegistry::new(specs).is_err());
    }

    #[test]
    fn primitive_round_trips_through_name() {
        for p in Primitive::ALL {
            assert_eq!(p.name().parse::<Primitive>().unwrap(), p);
        }
        assert!("pipette".parse::<Primitive>().is_err());
    }
}
