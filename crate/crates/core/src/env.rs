//! Declarative description of the lab a program is compiled and run against.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerKind {
    Dish,
    Tube,
    Bottle,
    Waste,
}

impl fmt::Display for ContainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContainerKind::Dish => "dish",
            ContainerKind::Tube => "tube",
            ContainerKind::Bottle => "bottle",
            ContainerKind::Waste => "waste",
        })
    }
}

/// Where a container sits before the program touches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Station {
    Incubator,
    Rack,
    TubeStation,
    BottleStation,
    WasteStation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerSpec {
    pub kind: ContainerKind,
    /// mL; `None` only for waste, which is unbounded.
    #[serde(default)]
    pub capacity: Option<f64>,
    pub location: Station,
    #[serde(default)]
    pub contents: IndexMap<String, f64>,
    #[serde(default)]
    pub cells: bool,
}

impl ContainerSpec {
    pub fn new(kind: ContainerKind, capacity: f64, location: Station) -> Self {
        Self {
            kind,
            capacity: Some(capacity),
            location,
            contents: IndexMap::new(),
            cells: false,
        }
    }

    pub fn with_liquid(mut self, liquid: &str, volume: f64) -> Self {
        self.contents.insert(liquid.to_string(), volume);
        self
    }

    pub fn with_cells(mut self) -> Self {
        self.cells = true;
        self
    }

    pub fn total_volume(&self) -> f64 {
        self.contents.values().sum()
    }

    pub fn capacity_or_inf(&self) -> f64 {
        self.capacity.unwrap_or(f64::INFINITY)
    }
}

/// Fixed per-phase costs in simulated seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseDurations {
    pub retrieve: f64,
    pub store: f64,
    pub attach_tip: f64,
    pub open_lid: f64,
    pub aspirate: f64,
    pub dispense: f64,
    pub eject_waste: f64,
    pub pipetting: f64,
    pub agitate: f64,
    pub centrifuge_load: f64,
    pub centrifuge_unload: f64,
    pub resuspend: f64,
    pub decap: f64,
    pub pour: f64,
    pub pick: f64,
    pub discard: f64,
}

impl Default for PhaseDurations {
    fn default() -> Self {
        Self {
            retrieve: 20.0,
            store: 20.0,
            attach_tip: 5.0,
            open_lid: 3.0,
            aspirate: 8.0,
            dispense: 8.0,
            eject_waste: 6.0,
            pipetting: 30.0,
            agitate: 10.0,
            centrifuge_load: 0.0,
            centrifuge_unload: 0.0,
            resuspend: 20.0,
            decap: 4.0,
            pour: 6.0,
            pick: 15.0,
            discard: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("container `{0}`: {1}")]
    InvalidContainer(String, String),
    #[error("{0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub id: String,
    #[serde(default)]
    pub containers: IndexMap<String, ContainerSpec>,
    #[serde(default = "default_max_pipette")]
    pub max_pipette_volume: f64,
    #[serde(default = "default_platform_slots")]
    pub platform_slots: usize,
    #[serde(default = "default_incubator_capacity")]
    pub incubator_capacity: usize,
    #[serde(default = "default_medium")]
    pub resuspension_medium: String,
    #[serde(default = "default_resuspension_volume")]
    pub resuspension_volume: f64,
    #[serde(default)]
    pub durations: PhaseDurations,
}

fn default_max_pipette() -> f64 {
    10.0
}
fn default_platform_slots() -> usize {
    4
}
fn default_incubator_capacity() -> usize {
    8
}
fn default_medium() -> String {
    "complete growth medium".into()
}
fn default_resuspension_volume() -> f64 {
    10.0
}

pub const CELL_SUSPENSION: &str = "cell suspension";

impl EnvConfig {
    pub fn empty(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            containers: IndexMap::new(),
            max_pipette_volume: default_max_pipette(),
            platform_slots: default_platform_slots(),
            incubator_capacity: default_incubator_capacity(),
            resuspension_medium: default_medium(),
            resuspension_volume: default_resuspension_volume(),
            durations: PhaseDurations::default(),
        }
    }

    /// Two-platform bench with one cell dish in the incubator, spare dishes and tubes,
    /// reagent bottles and a waste sink.
    pub fn default_lab() -> Self {
        let mut env = Self::empty(crate::ir::DEFAULT_ENV);
        let c = &mut env.containers;
        c.insert(
            "ContainerA".into(),
            ContainerSpec::new(ContainerKind::Dish, 20.0, Station::Incubator)
                .with_liquid("old medium", 10.0)
                .with_cells(),
        );
        c.insert(
            "ContainerB".into(),
            ContainerSpec::new(ContainerKind::Dish, 20.0, Station::Rack),
        );
        c.insert(
            "ContainerC".into(),
            ContainerSpec::new(ContainerKind::Dish, 20.0, Station::Rack),
        );
        c.insert(
            "TubeA".into(),
            ContainerSpec::new(ContainerKind::Tube, 15.0, Station::TubeStation),
        );
        c.insert(
            "TubeB".into(),
            ContainerSpec::new(ContainerKind::Tube, 15.0, Station::TubeStation),
        );
        for (name, liquid, cap) in [
            ("BottlePBS", "PBS", 500.0),
            ("BottleGrowthMedium", "complete growth medium", 500.0),
            ("BottleCultureMedium", "culture medium", 500.0),
            ("BottleEnzyme", "enzyme solution", 250.0),
        ] {
            c.insert(
                name.into(),
                ContainerSpec::new(ContainerKind::Bottle, cap, Station::BottleStation)
                    .with_liquid(liquid, cap),
            );
        }
        c.insert(
            "Waste".into(),
            ContainerSpec {
                kind: ContainerKind::Waste,
                capacity: None,
                location: Station::WasteStation,
                contents: IndexMap::new(),
                cells: false,
            },
        );
        env
    }

    pub fn from_toml_str(text: &str) -> Result<Self, EnvError> {
        let env: EnvConfig = toml::from_str(text).map_err(|e| EnvError::Parse(e.to_string()))?;
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.max_pipette_volume.is_finite() && self.max_pipette_volume > 0.0) {
            return Err(EnvError::Invalid(
                "max_pipette_volume must be positive".into(),
            ));
        }
        if !(self.resuspension_volume.is_finite() && self.resuspension_volume > 0.0) {
            return Err(EnvError::Invalid(
                "resuspension_volume must be positive".into(),
            ));
        }
        for (id, spec) in &self.containers {
            let bad = |msg: &str| EnvError::InvalidContainer(id.clone(), msg.to_string());
            match (spec.kind, spec.capacity) {
                (ContainerKind::Waste, None) => {}
                (_, None) => return Err(bad("capacity required")),
                (_, Some(c)) if !(c.is_finite() && c > 0.0) => {
                    return Err(bad("capacity must be positive"))
                }
                _ => {}
            }
            if spec
                .contents
                .values()
                .any(|v| !(v.is_finite() && *v >= 0.0))
            {
                return Err(bad("contents must be non-negative"));
            }
            if spec.total_volume() > spec.capacity_or_inf() {
                return Err(bad("contents exceed capacity"));
            }
            let station_ok = match spec.kind {
                ContainerKind::Dish => matches!(spec.location, Station::Incubator | Station::Rack),
                ContainerKind::Tube => {
                    matches!(spec.location, Station::TubeStation | Station::Rack)
                }
                ContainerKind::Bottle => spec.location == Station::BottleStation,
                ContainerKind::Waste => spec.location == Station::WasteStation,
            };
            if !station_ok {
                return Err(bad("kind cannot start at that station"));
            }
        }
        let incubated = self
            .containers
            .values()
            .filter(|s| s.location == Station::Incubator)
            .count();
        if incubated > self.incubator_capacity {
            return Err(EnvError::Invalid(
                "more dishes than incubator capacity".into(),
            ));
        }
        Ok(())
    }

    pub fn container(&self, id: &str) -> Option<&ContainerSpec> {
        self.containers.get(id)
    }

    pub fn waste(&self) -> Option<&str> {
        self.containers
            .iter()
            .find(|(_, s)| s.kind == ContainerKind::Waste)
            .map(|(id, _)| id.as_str())
    }

    /// First bottle stocked with `liquid`.
    pub fn bottle_for(&self, liquid: &str) -> Option<&str> {
        self.containers
            .iter()
            .find(|(_, s)| {
                s.kind == ContainerKind::Bottle && s.contents.get(liquid).is_some_and(|v| *v > 0.0)
            })
            .map(|(id, _)| id.as_str())
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::default_lab()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lab_is_valid() {
        let env = EnvConfig::default_lab();
        env.validate().unwrap();
        assert_eq!(env.max_pipette_volume, 10.0);
        let a = env.container("ContainerA").unwrap();
        assert_eq!(a.location, Station::Incubator);
        assert_eq!(a.contents["old medium"], 10.0);
        assert_eq!(env.waste(), Some("Waste"));
        assert_eq!(env.bottle_for("PBS"), Some("BottlePBS"));
        assert_eq!(
            env.bottle_for("complete growth medium"),
            Some("BottleGrowthMedium")
        );
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let text = r#"
            id = "bench"
            [containers.D1]
            kind = "dish"
            capacity = 12.0
            location = "rack"
            contents = { "PBS" = 5.0 }
        "#;
        let env = EnvConfig::from_toml_str(text).unwrap();
        assert_eq!(env.platform_slots, 4);
        assert_eq!(env.resuspension_medium, "complete growth medium");
        assert_eq!(env.containers["D1"].contents["PBS"], 5.0);
        let again = EnvConfig::from_toml_str(&toml::to_string(&env).unwrap()).unwrap();
        assert_eq!(again, env);
    }

    #[test]
    fn rejects_overfull_and_capacityless() {
        let mut env = EnvConfig::empty("x");
        env.containers.insert(
            "D".into(),
            ContainerSpec::new(ContainerKind::Dish, 5.0, Station::Rack).with_liquid("PBS", 6.0),
        );
        assert!(env.validate().is_err());
        let mut env = EnvConfig::empty("x");
        let mut spec = ContainerSpec::new(ContainerKind::Tube, 5.0, Station::TubeStation);
        spec.capacity = None;
        env.containers.insert("T".into(), spec);
        assert!(env.validate().is_err());
    }
}
