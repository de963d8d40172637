use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::checker::{AbsLocation, AbstractContainer, AbstractLabState, Interval, Tri};
use crate::env::{ContainerKind, EnvConfig, Station};

pub type Liquids = BTreeMap<String, f64>;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "at", content = "slot", rename_all = "snake_case")]
pub enum Location {
    Incubator,
    Platform(usize),
    /// Tube holder next to the platforms.
    Holder,
    Rack,
    Station,
    Centrifuge,
    Discarded,
}

impl Location {
    pub fn in_workspace(self) -> bool {
        matches!(self, Location::Platform(_) | Location::Holder)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerState {
    pub kind: ContainerKind,
    pub capacity: Option<f64>,
    pub location: Location,
    pub liquid: Liquids,
    pub lid_open: bool,
    /// At its working position: dish on its platform, tube in its holder, bottle connected.
    pub seated: bool,
    pub cells: bool,
    pub detached: bool,
    pub suspended: bool,
    pub pellet_present: bool,
}

impl ContainerState {
    pub fn volume(&self) -> f64 {
        self.liquid.values().sum()
    }

    pub fn free(&self) -> f64 {
        self.capacity
            .map_or(f64::INFINITY, |c| (c - self.volume()).max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Pipette {
    pub tip_attached: bool,
    pub held: Liquids,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Platforms {
    pub slots: Vec<Option<String>>,
    pub raised: bool,
}

impl Platforms {
    pub fn free_slot(&self) -> Option<usize> {
        self.slots.iter().position(Option::is_none)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centrifuge {
    pub rotor_in_place: bool,
    pub loaded: BTreeSet<String>,
    pub spinning: bool,
}

/// Mechanical faults that persist until an operator clears them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Jams {
    pub tip_pickup: bool,
    pub platform: bool,
    pub lids: BTreeSet<String>,
}

impl Jams {
    pub fn any(&self) -> bool {
        self.tip_pickup || self.platform || !self.lids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub containers: IndexMap<String, ContainerState>,
    pub pipette: Pipette,
    pub platforms: Platforms,
    pub centrifuge: Centrifuge,
    pub incubator_capacity: usize,
    pub pending_supernatant: BTreeSet<String>,
    pub jams: Jams,
    /// Liquid lost to tip drops; kept so totals stay checkable.
    pub spilled: Liquids,
    pub clock: f64,
}

/// Builds the initial world for an env: every container at its home station, lids closed,
/// no tip on the pipette, rotor seated, clock at zero.
pub fn new_world(env: &EnvConfig) -> WorldState {
    let containers = env
        .containers
        .iter()
        .map(|(id, spec)| {
            let location = match spec.location {
                Station::Incubator => Location::Incubator,
                Station::Rack | Station::TubeStation => Location::Rack,
                Station::BottleStation | Station::WasteStation => Location::Station,
            };
            let state = ContainerState {
                kind: spec.kind,
                capacity: spec.capacity,
                location,
                liquid: spec
                    .contents
                    .iter()
                    .filter(|(_, v)| **v > 0.0)
                    .map(|(k, v)| (k.clone(), *v))
                    .collect(),
                lid_open: false,
                seated: true,
                cells: spec.cells,
                detached: false,
                suspended: false,
                pellet_present: false,
            };
            (id.clone(), state)
        })
        .collect();
    WorldState {
        containers,
        pipette: Pipette::default(),
        platforms: Platforms {
            slots: vec![None; env.platform_slots],
            raised: false,
        },
        centrifuge: Centrifuge {
            rotor_in_place: true,
            loaded: BTreeSet::new(),
            spinning: false,
        },
        incubator_capacity: env.incubator_capacity,
        pending_supernatant: BTreeSet::new(),
        jams: Jams::default(),
        spilled: Liquids::new(),
        clock: 0.0,
    }
}

/// Per-liquid totals over containers (waste included), the pipette, and spills.
pub fn mass_balance(world: &WorldState) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    let all = world
        .containers
        .values()
        .map(|c| &c.liquid)
        .chain([&world.pipette.held, &world.spilled]);
    for liquids in all {
        for (k, v) in liquids {
            *out.entry(k.clone()).or_insert(0.0) += v;
        }
    }
    out
}

/// Proportional draw of `amount` from a mixture; returns what was taken.
pub(crate) fn draw(from: &mut Liquids, amount: f64) -> Liquids {
    let total: f64 = from.values().sum();
    let mut taken = Liquids::new();
    if total <= 0.0 || amount <= 0.0 {
        return taken;
    }
    if amount >= total {
        return std::mem::take(from);
    }
    let frac = amount / total;
    for (k, v) in from.iter_mut() {
        let part = *v * frac;
        *v -= part;
        taken.insert(k.clone(), part);
    }
    from.retain(|_, v| *v > 0.0);
    taken
}

pub(crate) fn pour(into: &mut Liquids, from: Liquids) {
    for (k, v) in from {
        *into.entry(k).or_insert(0.0) += v;
    }
}

impl WorldState {
    pub fn container(&self, id: &str) -> Option<&ContainerState> {
        self.containers.get(id)
    }

    pub fn waste_id(&self) -> Option<String> {
        self.containers
            .iter()
            .find(|(_, c)| c.kind == ContainerKind::Waste)
            .map(|(id, _)| id.clone())
    }

    pub fn incubated(&self) -> usize {
        self.containers
            .values()
            .filter(|c| c.location == Location::Incubator)
            .count()
    }

    /// Capacity, pipette and location invariants. Returns the first breach.
    pub fn check_invariants(&self, max_pipette: f64) -> Result<(), String> {
        for (id, c) in &self.containers {
            if c.liquid.values().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(format!("`{id}` holds a negative or non-finite volume"));
            }
            if let Some(cap) = c.capacity {
                if c.volume() > cap + EPS {
                    return Err(format!(
                        "`{id}` holds {} mL over its {cap} mL capacity",
                        c.volume()
                    ));
                }
            }
            if let Location::Platform(slot) = c.location {
                if self.platforms.slots.get(slot).and_then(Option::as_deref) != Some(id.as_str()) {
                    return Err(format!(
                        "`{id}` claims platform slot {slot} it does not hold"
                    ));
                }
            }
        }
        let held: f64 = self.pipette.held.values().sum();
        if held > max_pipette + EPS {
            return Err(format!(
                "pipette holds {held} mL over its {max_pipette} mL maximum"
            ));
        }
        if !self.pipette.tip_attached && held > 0.0 {
            return Err("pipette holds liquid without a tip".into());
        }
        for (slot, occupant) in self.platforms.slots.iter().enumerate() {
            if let Some(id) = occupant {
                if self.containers.get(id).map(|c| c.location) != Some(Location::Platform(slot)) {
                    return Err(format!(
                        "platform slot {slot} lists `{id}` which is elsewhere"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Returns displaced hardware to its working position and clears jams.
    pub fn operator_fix(&mut self) {
        self.jams = Jams::default();
        self.centrifuge.rotor_in_place = true;
        for c in self.containers.values_mut() {
            if c.location != Location::Discarded {
                c.seated = true;
            }
        }
    }
}

impl AbstractLabState {
    /// Exact abstraction of a concrete world, used to re-check programs mid-run.
    pub fn from_world(world: &WorldState) -> Self {
        let containers = world
            .containers
            .iter()
            .map(|(id, c)| {
                let location = match c.location {
                    Location::Incubator => AbsLocation::Incubator,
                    Location::Platform(_) | Location::Holder | Location::Centrifuge => {
                        AbsLocation::Platform
                    }
                    Location::Rack | Location::Station => AbsLocation::Rack,
                    Location::Discarded => AbsLocation::Discarded,
                };
                let state = AbstractContainer {
                    kind: c.kind,
                    capacity: c.capacity,
                    location,
                    volume: Interval::exact(c.volume()),
                    liquids: c.liquid.keys().cloned().collect(),
                    lidded: Tri::from_bool(!c.lid_open && c.kind != ContainerKind::Waste),
                    cells: Tri::from_bool(c.cells),
                    suspended: Tri::from_bool(c.suspended),
                    pellet: Tri::from_bool(c.pellet_present),
                };
                (id.clone(), state)
            })
            .collect();
        AbstractLabState {
            containers,
            tip_attached: Tri::from_bool(world.pipette.tip_attached),
            pending_supernatant: world.pending_supernatant.clone(),
            platform_used: world.platforms.slots.iter().filter(|s| s.is_some()).count(),
            incubator_used: world.incubated(),
        }
    }
}
