use std::collections::BTreeSet;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::env::{ContainerKind, EnvConfig, Station, CELL_SUSPENSION};
use crate::ir::{ArgValue, Instruction, Primitive, ProtocolProgram};

/// Three-valued fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tri {
    No,
    Maybe,
    Yes,
}

impl Tri {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Tri::Yes
        } else {
            Tri::No
        }
    }

    pub fn possible(self) -> bool {
        self != Tri::No
    }

    pub fn join(self, other: Tri) -> Tri {
        if self == other {
            self
        } else {
            Tri::Maybe
        }
    }
}

/// Closed interval of mL with `0 <= lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };

    pub fn exact(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(0.0 <= lo && lo <= hi);
        Self { lo, hi }
    }

    pub fn plus(self, other: Interval) -> Self {
        Self::new(self.lo + other.lo, self.hi + other.hi)
    }

    /// Removes up to `v`, never below zero.
    pub fn drain(self, v: f64) -> Self {
        Self::new((self.lo - v).max(0.0), (self.hi - v).max(0.0))
    }

    /// Amount actually obtainable when asking for `v`.
    pub fn take(self, v: f64) -> Self {
        Self::new(self.lo.min(v), self.hi.min(v))
    }

    pub fn is_empty(self) -> bool {
        self.hi <= 0.0
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsLocation {
    Incubator,
    Platform,
    Rack,
    Discarded,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractContainer {
    pub kind: ContainerKind,
    pub capacity: Option<f64>,
    pub location: AbsLocation,
    pub volume: Interval,
    pub liquids: BTreeSet<String>,
    pub lidded: Tri,
    pub cells: Tri,
    pub suspended: Tri,
    pub pellet: Tri,
}

impl AbstractContainer {
    pub fn free_capacity(&self) -> f64 {
        self.capacity
            .map_or(f64::INFINITY, |c| (c - self.volume.hi).max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractLabState {
    pub containers: IndexMap<String, AbstractContainer>,
    pub tip_attached: Tri,
    pub pending_supernatant: BTreeSet<String>,
    pub platform_used: usize,
    pub incubator_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UnknownContainer,
    Discarded,
    WrongKind,
    WrongLocation,
    EmptyContainer,
    NoSource,
    CapacityOverflow,
    PlatformFull,
    IncubatorFull,
    NoWaste,
    BadArgument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreconditionViolation {
    pub index: usize,
    pub kind: ViolationKind,
    pub container: Option<String>,
    pub message: String,
}

impl fmt::Display for PreconditionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "instruction {}: {:?}: {}",
            self.index, self.kind, self.message
        )
    }
}

/// Violation without an index yet; the caller knows where it is.
#[derive(Debug, Clone, PartialEq)]
pub struct Fault {
    pub kind: ViolationKind,
    pub container: Option<String>,
    pub message: String,
}

impl Fault {
    fn new(kind: ViolationKind, container: &str, message: impl Into<String>) -> Self {
        Self {
            kind,
            container: Some(container.to_string()),
            message: message.into(),
        }
    }

    pub fn at(self, index: usize) -> PreconditionViolation {
        PreconditionViolation {
            index,
            kind: self.kind,
            container: self.container,
            message: self.message,
        }
    }
}

fn bad_arg(message: impl Into<String>) -> Fault {
    Fault {
        kind: ViolationKind::BadArgument,
        container: None,
        message: message.into(),
    }
}

/// Folds the program from the env's initial state, stopping at the first violation.
pub fn simulate_abstract(
    program: &ProtocolProgram,
    env: &EnvConfig,
) -> Result<AbstractLabState, PreconditionViolation> {
    let mut state = AbstractLabState::from_env(env);
    for (i, instr) in program.instructions.iter().enumerate() {
        state.apply(instr, env).map_err(|f| f.at(i))?;
    }
    Ok(state)
}

impl AbstractLabState {
    pub fn from_env(env: &EnvConfig) -> Self {
        let mut containers = IndexMap::new();
        let mut incubator_used = 0;
        for (id, spec) in &env.containers {
            let location = match spec.location {
                Station::Incubator => {
                    incubator_used += 1;
                    AbsLocation::Incubator
                }
                _ => AbsLocation::Rack,
            };
            let volume = Interval::exact(spec.total_volume());
            containers.insert(
                id.clone(),
                AbstractContainer {
                    kind: spec.kind,
                    capacity: spec.capacity,
                    location,
                    volume,
                    liquids: spec
                        .contents
                        .iter()
                        .filter(|(_, v)| **v > 0.0)
                        .map(|(k, _)| k.clone())
                        .collect(),
                    lidded: Tri::from_bool(matches!(
                        spec.kind,
                        ContainerKind::Dish | ContainerKind::Tube | ContainerKind::Bottle
                    )),
                    cells: Tri::from_bool(spec.cells),
                    suspended: Tri::No,
                    pellet: Tri::No,
                },
            );
        }
        Self {
            containers,
            tip_attached: Tri::No,
            pending_supernatant: BTreeSet::new(),
            platform_used: 0,
            incubator_used,
        }
    }

    pub fn container(&self, id: &str) -> Option<&AbstractContainer> {
        self.containers.get(id)
    }

    /// Applies one instruction. On error the state is left untouched.
    pub fn apply(&mut self, instr: &Instruction, env: &EnvConfig) -> Result<(), Fault> {
        let mut next = self.clone();
        next.apply_in_place(instr, env)?;
        *self = next;
        Ok(())
    }

    /// True when the instruction provably changes nothing. Only the rules used by
    /// superfluous elimination are recognised here.
    pub fn is_noop(&self, instr: &Instruction) -> bool {
        match instr.primitive() {
            Some(Primitive::RemoveLiquid) => instr
                .text_arg("container")
                .and_then(|c| self.containers.get(c))
                .is_some_and(|c| c.location == AbsLocation::Platform && c.volume.is_empty()),
            Some(Primitive::PutBackIncubator) => {
                match instr.arg("containers").and_then(ArgValue::as_list) {
                    Some(list) if !list.is_empty() => list.iter().all(|id| {
                        self.containers.get(id).is_some_and(|c| {
                            c.location == AbsLocation::Incubator && c.kind == ContainerKind::Dish
                        })
                    }),
                    _ => false,
                }
            }
            _ => false,
        }
    }

    fn workspace(&self, id: &str, kinds: &[ContainerKind]) -> Result<&AbstractContainer, Fault> {
        let c = self.containers.get(id).ok_or_else(|| {
            Fault::new(
                ViolationKind::UnknownContainer,
                id,
                format!("`{id}` is not in the lab"),
            )
        })?;
        match c.location {
            AbsLocation::Platform => {}
            AbsLocation::Discarded => {
                return Err(Fault::new(
                    ViolationKind::Discarded,
                    id,
                    format!("`{id}` was discarded"),
                ))
            }
            AbsLocation::Rack | AbsLocation::Unknown => {
                return Err(Fault::new(
                    ViolationKind::UnknownContainer,
                    id,
                    format!("`{id}` was never brought into the workspace"),
                ))
            }
            AbsLocation::Incubator => {
                return Err(Fault::new(
                    ViolationKind::WrongLocation,
                    id,
                    format!("`{id}` is in the incubator"),
                ))
            }
        }
        if !kinds.contains(&c.kind) {
            return Err(Fault::new(
                ViolationKind::WrongKind,
                id,
                format!("`{id}` is a {}", c.kind),
            ));
        }
        Ok(c)
    }

    fn known(&self, id: &str) -> Result<&AbstractContainer, Fault> {
        let c = self.containers.get(id).ok_or_else(|| {
            Fault::new(
                ViolationKind::UnknownContainer,
                id,
                format!("`{id}` is not in the lab"),
            )
        })?;
        if c.location == AbsLocation::Discarded {
            return Err(Fault::new(
                ViolationKind::Discarded,
                id,
                format!("`{id}` was discarded"),
            ));
        }
        Ok(c)
    }

    fn need_waste(env: &EnvConfig) -> Result<(), Fault> {
        if env.waste().is_none() {
            return Err(Fault {
                kind: ViolationKind::NoWaste,
                container: None,
                message: "no waste container configured".into(),
            });
        }
        Ok(())
    }

    fn c_mut(&mut self, id: &str) -> &mut AbstractContainer {
        self.containers.get_mut(id).expect("checked container")
    }

    fn apply_in_place(&mut self, instr: &Instruction, env: &EnvConfig) -> Result<(), Fault> {
        use ContainerKind::{Dish, Tube};
        let prim = instr
            .primitive()
            .ok_or_else(|| bad_arg(format!("`{}` is not a primitive", instr.function)))?;
        let container = || {
            instr
                .text_arg("container")
                .map(str::to_string)
                .ok_or_else(|| bad_arg("`container` must be text"))
        };
        let list = || {
            instr
                .arg("containers")
                .and_then(ArgValue::as_list)
                .map(<[String]>::to_vec)
                .ok_or_else(|| bad_arg("`containers` must be a list"))
        };
        let number = |name: &str| match instr.arg(name) {
            Some(ArgValue::Quantity(q)) => Ok(q.value()),
            Some(ArgValue::Integer(i)) if *i >= 0 => Ok(*i as f64),
            _ => Err(bad_arg(format!("`{name}` must be a number"))),
        };

        match prim {
            Primitive::TakeOutCells => {
                for id in list()? {
                    let c = self.known(&id)?;
                    if c.kind != Dish {
                        return Err(Fault::new(
                            ViolationKind::WrongKind,
                            &id,
                            format!("`{id}` is a {}", c.kind),
                        ));
                    }
                    if c.location != AbsLocation::Incubator {
                        return Err(Fault::new(
                            ViolationKind::WrongLocation,
                            &id,
                            format!("`{id}` is not in the incubator"),
                        ));
                    }
                    if self.platform_used >= env.platform_slots {
                        return Err(Fault::new(
                            ViolationKind::PlatformFull,
                            &id,
                            "no free platform slot",
                        ));
                    }
                    self.platform_used += 1;
                    self.incubator_used -= 1;
                    self.c_mut(&id).location = AbsLocation::Platform;
                }
            }
            Primitive::PutBackIncubator => {
                let ids = list()?;
                let detach = number("detachment_time")?;
                for id in ids {
                    let c = self.known(&id)?;
                    if c.kind != Dish {
                        return Err(Fault::new(
                            ViolationKind::WrongKind,
                            &id,
                            format!("`{id}` is a {}", c.kind),
                        ));
                    }
                    match c.location {
                        AbsLocation::Incubator => continue,
                        AbsLocation::Platform => {}
                        _ => {
                            return Err(Fault::new(
                                ViolationKind::UnknownContainer,
                                &id,
                                format!("`{id}` was never brought into the workspace"),
                            ))
                        }
                    }
                    if self.incubator_used >= env.incubator_capacity {
                        return Err(Fault::new(
                            ViolationKind::IncubatorFull,
                            &id,
                            "incubator is full",
                        ));
                    }
                    self.incubator_used += 1;
                    self.platform_used -= 1;
                    let c = self.c_mut(&id);
                    c.location = AbsLocation::Incubator;
                    c.lidded = Tri::Yes;
                    if detach > 0.0 && c.cells.possible() && c.liquids.iter().any(|l| is_enzyme(l))
                    {
                        c.suspended = c.suspended.join(Tri::Maybe);
                    }
                }
            }
            Primitive::RemoveLiquid => {
                let id = container()?;
                let volume = number("volume")?;
                Self::need_waste(env)?;
                let c = self.workspace(&id, &[Dish, Tube])?;
                if c.volume.is_empty() {
                    return Err(Fault::new(
                        ViolationKind::EmptyContainer,
                        &id,
                        format!("`{id}` holds no liquid"),
                    ));
                }
                let c = self.c_mut(&id);
                c.volume = c.volume.drain(volume);
                if c.volume.is_empty() {
                    c.liquids.clear();
                    c.suspended = Tri::No;
                }
            }
            Primitive::AddLiquid => {
                let id = container()?;
                let volume = number("volume")?;
                let liquid = instr
                    .text_arg("liquid_type")
                    .ok_or_else(|| bad_arg("`liquid_type` must be text"))?
                    .to_string();
                let target = self.workspace(&id, &[Dish, Tube])?;
                if volume > target.free_capacity() + 1e-12 {
                    return Err(Fault::new(
                        ViolationKind::CapacityOverflow,
                        &id,
                        format!(
                            "adding {volume} mL to `{id}` holding up to {} mL exceeds its {} mL capacity",
                            target.volume.hi,
                            target.capacity.unwrap_or(f64::INFINITY)
                        ),
                    ));
                }
                let source = self.resolve_source(&liquid, &id)?;
                let src = &self.containers[&source];
                if src.volume.is_empty() {
                    return Err(Fault::new(
                        ViolationKind::EmptyContainer,
                        &source,
                        format!("source `{source}` is empty"),
                    ));
                }
                let moved = src.volume.take(volume);
                let src_liquids = src.liquids.clone();
                let src_susp = src.suspended;
                let from_bottle = src.kind == ContainerKind::Bottle;
                let s = self.c_mut(&source);
                s.volume = s.volume.drain(volume);
                if s.volume.is_empty() && !from_bottle {
                    s.liquids.clear();
                    s.suspended = Tri::No;
                }
                let t = self.c_mut(&id);
                t.volume = t.volume.plus(moved);
                if from_bottle {
                    t.liquids.insert(liquid);
                } else {
                    t.liquids.extend(src_liquids);
                    if src_susp.possible() {
                        t.cells = t.cells.either(src_susp);
                        t.suspended = t.suspended.either(src_susp);
                    }
                }
            }
            Primitive::DetachCellsWithPipette => {
                let id = container()?;
                let c = self.workspace(&id, &[Dish])?;
                if c.volume.is_empty() {
                    return Err(Fault::new(
                        ViolationKind::EmptyContainer,
                        &id,
                        format!("`{id}` holds no liquid to pipette cells into"),
                    ));
                }
                let c = self.c_mut(&id);
                if c.cells.possible() {
                    c.suspended = c.cells;
                }
            }
            Primitive::Shake => {
                let id = container()?;
                self.workspace(&id, &[Dish, Tube])?;
            }
            Primitive::Centrifuge => {
                let id = container()?;
                number("speed")?;
                number("time")?;
                let c = self.workspace(&id, &[Tube])?;
                if c.volume.is_empty() {
                    return Err(Fault::new(
                        ViolationKind::EmptyContainer,
                        &id,
                        format!("`{id}` is empty; nothing was transferred into it"),
                    ));
                }
                let c = self.c_mut(&id);
                c.pellet = c.pellet.either(c.suspended);
                c.suspended = Tri::No;
                self.pending_supernatant.insert(id);
            }
            Primitive::Resuspension => {
                let id = container()?;
                let c = self.workspace(&id, &[Tube])?;
                if c.volume.is_empty() {
                    return Err(Fault::new(
                        ViolationKind::EmptyContainer,
                        &id,
                        format!("`{id}` holds no liquid to resuspend in"),
                    ));
                }
                let c = self.c_mut(&id);
                if c.pellet.possible() {
                    c.suspended = c.pellet;
                    c.pellet = Tri::No;
                }
                self.pending_supernatant.remove(&id);
            }
            Primitive::RemoveSupernatant => {
                let id = container()?;
                Self::need_waste(env)?;
                let c = self.workspace(&id, &[Tube])?;
                if c.volume.is_empty() {
                    return Err(Fault::new(
                        ViolationKind::EmptyContainer,
                        &id,
                        format!("`{id}` has no supernatant"),
                    ));
                }
                let c = self.c_mut(&id);
                c.volume = Interval::ZERO;
                c.liquids.clear();
                c.suspended = Tri::No;
                self.pending_supernatant.remove(&id);
            }
            Primitive::GetContainer => {
                let id = container()?;
                let c = self.known(&id)?;
                match (c.kind, c.location) {
                    (Dish | Tube, AbsLocation::Platform) => {}
                    (Dish | Tube, AbsLocation::Rack) => {
                        if c.kind == Dish {
                            if self.platform_used >= env.platform_slots {
                                return Err(Fault::new(
                                    ViolationKind::PlatformFull,
                                    &id,
                                    "no free platform slot",
                                ));
                            }
                            self.platform_used += 1;
                        }
                        self.c_mut(&id).location = AbsLocation::Platform;
                    }
                    (Dish | Tube, _) => {
                        return Err(Fault::new(
                            ViolationKind::WrongLocation,
                            &id,
                            format!("`{id}` is not on a rack"),
                        ))
                    }
                    (kind, _) => {
                        return Err(Fault::new(
                            ViolationKind::WrongKind,
                            &id,
                            format!("`{id}` is a {kind}"),
                        ))
                    }
                }
            }
            Primitive::DiscardContainer => {
                let id = container()?;
                let c = self.workspace(&id, &[Dish, Tube])?;
                if c.kind == Dish {
                    self.platform_used -= 1;
                }
                let c = self.c_mut(&id);
                c.location = AbsLocation::Discarded;
                c.volume = Interval::ZERO;
                c.liquids.clear();
                c.cells = Tri::No;
                c.suspended = Tri::No;
                c.pellet = Tri::No;
                self.pending_supernatant.remove(&id);
            }
        }
        Ok(())
    }

    fn resolve_source(&self, liquid: &str, target: &str) -> Result<String, Fault> {
        let in_workspace = |(id, c): &(&String, &AbstractContainer)| {
            id.as_str() != target
                && c.location == AbsLocation::Platform
                && matches!(c.kind, ContainerKind::Dish | ContainerKind::Tube)
        };
        if liquid == CELL_SUSPENSION {
            return self
                .containers
                .iter()
                .filter(in_workspace)
                .find(|(_, c)| c.suspended.possible() && !c.volume.is_empty())
                .map(|(id, _)| id.clone())
                .ok_or_else(|| {
                    Fault::new(
                        ViolationKind::NoSource,
                        target,
                        "no container holds suspended cells",
                    )
                });
        }
        self.containers
            .iter()
            .find(|(_, c)| {
                c.kind == ContainerKind::Bottle
                    && c.location != AbsLocation::Discarded
                    && c.liquids.contains(liquid)
            })
            .or_else(|| {
                self.containers
                    .iter()
                    .filter(in_workspace)
                    .find(|(_, c)| c.liquids.contains(liquid) && !c.volume.is_empty())
            })
            .map(|(id, _)| id.clone())
            .ok_or_else(|| {
                Fault::new(
                    ViolationKind::NoSource,
                    target,
                    format!("no source of `{liquid}`"),
                )
            })
    }
}

impl Tri {
    /// Logical or: a transfer can add possibility but never remove certainty.
    pub fn either(self, other: Tri) -> Tri {
        match (self, other) {
            (Tri::Yes, _) | (_, Tri::Yes) => Tri::Yes,
            (Tri::Maybe, _) | (_, Tri::Maybe) => Tri::Maybe,
            _ => Tri::No,
        }
    }
}

pub fn is_enzyme(liquid: &str) -> bool {
    let l = liquid.to_ascii_lowercase();
    l.contains("enzyme") || l.contains("trypsin")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_program, FunctionRegistry};

    fn prog(src: &str) -> ProtocolProgram {
        parse_program(src, &FunctionRegistry::builtin()).unwrap()
    }

    #[test]
    fn get_then_add_gives_exact_interval() {
        let env = EnvConfig::default_lab();
        let s = simulate_abstract(
            &prog("get_container(ContainerB)\nadd_liquid(PBS, 5, ContainerB)"),
            &env,
        )
        .unwrap();
        let b = s.container("ContainerB").unwrap();
        assert_eq!(b.location, AbsLocation::Platform);
        assert_eq!(b.volume, Interval::exact(5.0));
        assert!(b.liquids.contains("PBS"));
    }

    #[test]
    fn never_introduced_tube_is_unknown() {
        let env = EnvConfig::default_lab();
        let v = simulate_abstract(&prog("resuspension(TubeA)"), &env).unwrap_err();
        assert_eq!(v.index, 0);
        assert_eq!(v.kind, ViolationKind::UnknownContainer);
        let v = simulate_abstract(&prog("shake(Flask9)"), &env).unwrap_err();
        assert_eq!(v.kind, ViolationKind::UnknownContainer);
    }

    #[test]
    fn empty_tube_centrifuge_is_rejected() {
        let env = EnvConfig::default_lab();
        let v = simulate_abstract(
            &prog("get_container(TubeA)\ncentrifuge(1000, 5, TubeA)"),
            &env,
        )
        .unwrap_err();
        assert_eq!((v.index, v.kind), (1, ViolationKind::EmptyContainer));
    }

    #[test]
    fn failed_apply_leaves_state_untouched() {
        let env = EnvConfig::default_lab();
        let mut s = AbstractLabState::from_env(&env);
        let before = s.clone();
        let p = prog("take_out_cells([ContainerA, ContainerB])");
        assert!(s.apply(&p.instructions[0], &env).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn drain_below_lower_bound_widens() {
        let env = EnvConfig::default_lab();
        let src = "take_out_cells([ContainerA])\nget_container(TubeA)\nadd_liquid(\"old medium\", 10, TubeA)\nremove_liquid(4, TubeA)";
        let s = simulate_abstract(&prog(src), &env).unwrap();
        assert_eq!(s.container("TubeA").unwrap().volume, Interval::exact(6.0));
        assert!(s.container("ContainerA").unwrap().volume.is_empty());
    }

    #[test]
    fn passaging_chain_tracks_cells() {
        let env = EnvConfig::default_lab();
        let src = "\
take_out_cells([ContainerA])
remove_liquid(10, ContainerA)
add_liquid(\"enzyme solution\", 2, ContainerA)
put_back_incubator([ContainerA], 5)
take_out_cells([ContainerA])
add_liquid(\"complete growth medium\", 6, ContainerA)
detach_cells_with_pipette(ContainerA)
get_container(TubeA)
add_liquid(\"cell suspension\", 8, TubeA)
centrifuge(300, 5, TubeA)
remove_supernatant(TubeA)
add_liquid(\"complete growth medium\", 10, TubeA)
resuspension(TubeA)";
        let s = simulate_abstract(&prog(src), &env).unwrap();
        let t = s.container("TubeA").unwrap();
        assert_eq!(t.suspended, Tri::Yes);
        assert_eq!(t.pellet, Tri::No);
        assert_eq!(t.volume, Interval::exact(10.0));
        assert!(s.pending_supernatant.is_empty());
    }
}
