use std::fmt;

use serde::{Deserialize, Serialize};

/// Physical unit attached to a quantity argument. Fixed per parameter by the registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Milliliter,
    Minute,
    GForce,
    MillimeterPerSecond,
}

impl Unit {
    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Milliliter => "mL",
            Unit::Minute => "min",
            Unit::GForce => "g",
            Unit::MillimeterPerSecond => "mm/s",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// A finite, non-negative decimal value with its unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawQuantity")]
pub struct Quantity {
    value: f64,
    unit: Unit,
}

#[derive(Deserialize)]
struct RawQuantity {
    value: f64,
    unit: Unit,
}

impl TryFrom<RawQuantity> for Quantity {
    type Error = String;

    fn try_from(raw: RawQuantity) -> Result<Self, Self::Error> {
        Quantity::new(raw.value, raw.unit).ok_or_else(|| {
            format!(
                "quantity must be finite and non-negative, got {}",
                raw.value
            )
        })
    }
}

impl Quantity {
    /// Returns `None` for NaN, infinite or negative values.
    pub fn new(value: f64, unit: Unit) -> Option<Self> {
        if value.is_finite() && value >= 0.0 {
            // normalise -0.0 so rendering never emits a minus sign
            Some(Self {
                value: value + 0.0,
                unit,
            })
        } else {
            None
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.value, self.unit)
    }
}

/// Value bound to a parameter of a primitive call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ArgValue {
    Text(String),
    Quantity(Quantity),
    Integer(i64),
    Bool(bool),
    TextList(Vec<String>),
}

impl ArgValue {
    pub fn text(s: impl Into<String>) -> Self {
        ArgValue::Text(s.into())
    }

    pub fn ml(v: f64) -> Self {
        ArgValue::Quantity(Quantity::new(v, Unit::Milliliter).expect("non-negative volume"))
    }

    pub fn minutes(v: f64) -> Self {
        ArgValue::Quantity(Quantity::new(v, Unit::Minute).expect("non-negative duration"))
    }

    pub fn g_force(v: f64) -> Self {
        ArgValue::Quantity(Quantity::new(v, Unit::GForce).expect("non-negative speed"))
    }

    pub fn list<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ArgValue::TextList(items.into_iter().map(Into::into).collect())
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ArgValue::Text(_) => "text",
            ArgValue::Quantity(_) => "quantity",
            ArgValue::Integer(_) => "integer",
            ArgValue::Bool(_) => "boolean",
            ArgValue::TextList(_) => "list",
        }
    }

    /// Numeric view used by range checks. Text is not coerced here.
    pub fn as_number(&self) -> Option<f64> {
        match self {
            ArgValue::Quantity(q) => Some(q.value()),
            ArgValue::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ArgValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[String]> {
        match self {
            ArgValue::TextList(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgValue::Text(s) => write!(f, "{s:?}"),
            ArgValue::Quantity(q) => write!(f, "{q}"),
            ArgValue::Integer(i) => write!(f, "{i}"),
            ArgValue::Bool(b) => write!(f, "{b}"),
            ArgValue::TextList(items) => write!(f, "{items:?}"),
        }
    }
}

/// Declared kind of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "unit", rename_all = "snake_case")]
pub enum ValueKind {
    Text,
    Quantity(Unit),
    Integer,
    Bool,
    TextList,
}

impl ValueKind {
    pub fn accepts(self, value: &ArgValue) -> bool {
        match (self, value) {
            (ValueKind::Text, ArgValue::Text(_)) => true,
            (ValueKind::Quantity(u), ArgValue::Quantity(q)) => q.unit() == u,
            (ValueKind::Integer, ArgValue::Integer(_)) => true,
            (ValueKind::Bool, ArgValue::Bool(_)) => true,
            (ValueKind::TextList, ArgValue::TextList(_)) => true,
            _ => false,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ValueKind::Text => "text",
            ValueKind::Quantity(_) => "quantity",
            ValueKind::Integer => "integer",
            ValueKind::Bool => "boolean",
            ValueKind::TextList => "list",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantity_rejects_negative_and_non_finite() {
        assert!(Quantity::new(-1.0, Unit::Milliliter).is_none());
        assert!(Quantity::new(f64::NAN, Unit::Milliliter).is_none());
        assert!(Quantity::new(f64::INFINITY, Unit::Minute).is_none());
        assert_eq!(
            Quantity::new(-0.0, Unit::Minute).unwrap().value().to_bits(),
            0.0f64.to_bits()
        );
    }

    #[test]
    fn quantity_deserialization_validates() {
        let bad = r#"{"value": -2.0, "unit": "milliliter"}"#;
        assert!(serde_json::from_str::<Quantity>(bad).is_err());
        let ok = r#"{"value": 2.5, "unit": "milliliter"}"#;
        assert_eq!(serde_json::from_str::<Quantity>(ok).unwrap().value(), 2.5);
    }
}
