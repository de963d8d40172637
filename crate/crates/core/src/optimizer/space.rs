use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::OptimizerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dl {
    Short,
    Long,
}

impl Dl {
    pub fn name(self) -> &'static str {
        match self {
            Dl::Short => "short",
            Dl::Long => "long",
        }
    }
}

impl std::str::FromStr for Dl {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "short" => Ok(Dl::Short),
            "long" => Ok(Dl::Long),
            other => Err(format!("DL must be `short` or `long`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimKind {
    Decimal,
    Integer,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dim {
    pub name: &'static str,
    pub kind: DimKind,
    pub lo: f64,
    pub hi: f64,
}

/// Seven-parameter differentiation protocol space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamSpace;

pub const DIMS: [Dim; 7] = [
    Dim {
        name: "PC",
        kind: DimKind::Decimal,
        lo: 0.0,
        hi: 505.0,
    },
    Dim {
        name: "PP",
        kind: DimKind::Integer,
        lo: 1.0,
        hi: 6.0,
    },
    Dim {
        name: "DP",
        kind: DimKind::Integer,
        lo: 5.0,
        hi: 23.0,
    },
    Dim {
        name: "DS",
        kind: DimKind::Decimal,
        lo: 10.0,
        hi: 100.0,
    },
    Dim {
        name: "DL",
        kind: DimKind::Categorical,
        lo: 0.0,
        hi: 1.0,
    },
    Dim {
        name: "KP",
        kind: DimKind::Integer,
        lo: 1.0,
        hi: 19.0,
    },
    Dim {
        name: "P3",
        kind: DimKind::Integer,
        lo: 3.0,
        hi: 19.0,
    },
];

/// FGFRi concentration (nM), pre-patterning days, dissociation minutes, dispensing speed (mm/s),
/// dissociation length, KSR phase days, third-phase days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub struct ParamPoint {
    pub pc: f64,
    pub pp: i64,
    pub dp: i64,
    pub ds: f64,
    pub dl: Dl,
    pub kp: i64,
    pub p3: i64,
}

impl fmt::Display for ParamPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PC={} PP={} DP={} DS={} DL={} KP={} P3={}",
            self.pc,
            self.pp,
            self.dp,
            self.ds,
            self.dl.name(),
            self.kp,
            self.p3
        )
    }
}

impl ParamPoint {
    pub fn values(&self) -> [f64; 7] {
        [
            self.pc,
            self.pp as f64,
            self.dp as f64,
            self.ds,
            match self.dl {
                Dl::Short => 0.0,
                Dl::Long => 1.0,
            },
            self.kp as f64,
            self.p3 as f64,
        ]
    }

    /// Inverse of [`ParamPoint::values`]; integer and categorical dims are rounded.
    pub fn from_values(v: [f64; 7]) -> Self {
        Self {
            pc: v[0],
            pp: v[1].round() as i64,
            dp: v[2].round() as i64,
            ds: v[3],
            dl: if v[4] >= 0.5 { Dl::Long } else { Dl::Short },
            kp: v[5].round() as i64,
            p3: v[6].round() as i64,
        }
    }
}

impl ParamSpace {
    pub fn dims(&self) -> &'static [Dim; 7] {
        &DIMS
    }

    pub fn lower(&self) -> ParamPoint {
        ParamPoint::from_values(DIMS.map(|d| d.lo))
    }

    pub fn upper(&self) -> ParamPoint {
        ParamPoint::from_values(DIMS.map(|d| d.hi))
    }

    pub fn contains(&self, p: &ParamPoint) -> bool {
        self.check(p).is_ok()
    }

    pub fn check(&self, p: &ParamPoint) -> Result<(), OptimizerError> {
        for (d, v) in DIMS.iter().zip(p.values()) {
            if !v.is_finite() || v < d.lo || v > d.hi {
                return Err(OptimizerError::BoundViolation {
                    row: None,
                    field: d.name.to_string(),
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// Min-max scales numeric dims to [0, 1]; DL maps short to 0 and long to 1.
    pub fn normalize(&self, p: &ParamPoint) -> [f64; 7] {
        let v = p.values();
        std::array::from_fn(|i| (v[i] - DIMS[i].lo) / (DIMS[i].hi - DIMS[i].lo))
    }

    pub fn denormalize(&self, u: &[f64; 7]) -> ParamPoint {
        ParamPoint::from_values(std::array::from_fn(|i| {
            DIMS[i].lo + u[i].clamp(0.0, 1.0) * (DIMS[i].hi - DIMS[i].lo)
        }))
    }

    /// Clamps raw per-dimension values into bounds, returning one warning per clamped field.
    pub fn clamp_values(&self, raw: [f64; 7]) -> (ParamPoint, Vec<String>) {
        let mut warnings = Vec::new();
        let clamped = std::array::from_fn(|i| {
            let d = DIMS[i];
            let v = raw[i];
            let c = if v.is_nan() {
                d.lo
            } else {
                v.clamp(d.lo, d.hi)
            };
            if c != v {
                warnings.push(format!("{} = {v} clamped to {c}", d.name));
            }
            c
        });
        (ParamPoint::from_values(clamped), warnings)
    }

    /// Uniform draw: decimals continuous, integers and categories uniform over their values.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamPoint {
        ParamPoint::from_values(DIMS.map(|d| match d.kind {
            DimKind::Decimal => rng.random_range(d.lo..=d.hi),
            DimKind::Integer | DimKind::Categorical => {
                rng.random_range(d.lo as i64..=d.hi as i64) as f64
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn bounds_normalize_to_corners() {
        let s = ParamSpace;
        assert_eq!(s.normalize(&s.lower()), [0.0; 7]);
        assert_eq!(s.normalize(&s.upper()), [1.0; 7]);
        let mut mid = s.lower();
        mid.pc = 252.5;
        assert_eq!(s.normalize(&mid)[0], 0.5);
    }

    #[test]
    fn clamp_reports_fields() {
        let mut raw = ParamSpace.lower().values();
        raw[0] = 700.0;
        let (p, w) = ParamSpace.clamp_values(raw);
        assert_eq!(p.pc, 505.0);
        assert_eq!(w.len(), 1);
        assert!(w[0].starts_with("PC = 700"));
    }

    #[test]
    fn samples_stay_in_bounds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = ParamSpace.sample(&mut rng);
            assert!(ParamSpace.contains(&p), "{p}");
            assert_eq!(ParamSpace.denormalize(&ParamSpace.normalize(&p)), p);
        }
    }

    #[test]
    fn dl_parses() {
        assert_eq!("long".parse::<Dl>().unwrap(), Dl::Long);
        assert!("medium".parse::<Dl>().is_err());
    }
}
