//! Physical quantities with unit suffixes, parsed to SI.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Voltage,
    Current,
    Resistance,
    Inductance,
    Capacitance,
    Time,
    Dimensionless,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::Voltage => "voltage",
            Dimension::Current => "current",
            Dimension::Resistance => "resistance",
            Dimension::Inductance => "inductance",
            Dimension::Capacitance => "capacitance",
            Dimension::Time => "time",
            Dimension::Dimensionless => "dimensionless",
        })
    }
}

const UNITS: &[(&str, Dimension, f64)] = &[
    ("kV", Dimension::Voltage, 1e3),
    ("mV", Dimension::Voltage, 1e-3),
    ("V", Dimension::Voltage, 1.0),
    ("kA", Dimension::Current, 1e3),
    ("mA", Dimension::Current, 1e-3),
    ("A", Dimension::Current, 1.0),
    ("kOhm", Dimension::Resistance, 1e3),
    ("mOhm", Dimension::Resistance, 1e-3),
    ("Ohm", Dimension::Resistance, 1.0),
    ("kΩ", Dimension::Resistance, 1e3),
    ("mΩ", Dimension::Resistance, 1e-3),
    ("Ω", Dimension::Resistance, 1.0),
    ("mH", Dimension::Inductance, 1e-3),
    ("uH", Dimension::Inductance, 1e-6),
    ("µH", Dimension::Inductance, 1e-6),
    ("H", Dimension::Inductance, 1.0),
    ("mF", Dimension::Capacitance, 1e-3),
    ("uF", Dimension::Capacitance, 1e-6),
    ("µF", Dimension::Capacitance, 1e-6),
    ("F", Dimension::Capacitance, 1.0),
    ("ms", Dimension::Time, 1e-3),
    ("us", Dimension::Time, 1e-6),
    ("µs", Dimension::Time, 1e-6),
    ("s", Dimension::Time, 1.0),
];

/// A bare number (already SI) or a string such as `"2.1 uH"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Number(f64),
    Text(String),
}

impl From<f64> for Quantity {
    fn from(v: f64) -> Self {
        Quantity::Number(v)
    }
}

impl From<&str> for Quantity {
    fn from(s: &str) -> Self {
        Quantity::Text(s.to_string())
    }
}

impl Quantity {
    pub fn si(&self, dim: Dimension) -> Result<f64> {
        match self {
            Quantity::Number(v) => Ok(*v),
            Quantity::Text(s) => parse_quantity(s, dim),
        }
    }
}

pub fn parse_quantity(text: &str, dim: Dimension) -> Result<f64> {
    let s = text.trim();
    let split = s
        .char_indices()
        .find(|&(i, c)| {
            !(c.is_ascii_digit() || c == '.' || c == '+' || c == '-' || ((c == 'e' || c == 'E') && looks_like_exponent(s, i)))
        })
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::Unit(format!("cannot parse number in {text:?}")))?;
    let unit = unit.trim();
    if unit.is_empty() {
        return Ok(value);
    }
    match UNITS.iter().find(|(u, ..)| *u == unit) {
        Some((_, d, scale)) if *d == dim => Ok(value * scale),
        Some((_, d, _)) => Err(Error::Unit(format!("{text:?} is a {d}, expected a {dim}"))),
        None => Err(Error::Unit(format!("unknown unit {unit:?} in {text:?}"))),
    }
}

fn looks_like_exponent(s: &str, i: usize) -> bool {
    let rest = &s[i + 1..];
    let rest = rest.strip_prefix(['+', '-']).unwrap_or(rest);
    i > 0 && rest.starts_with(|c: char| c.is_ascii_digit())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listed_units() {
        assert!((parse_quantity("1.8 mH", Dimension::Inductance).unwrap() - 1.8e-3).abs() < 1e-18);
        assert!((parse_quantity("2.1uH", Dimension::Inductance).unwrap() - 2.1e-6).abs() < 1e-20);
        assert!((parse_quantity("2.1 µH", Dimension::Inductance).unwrap() - 2.1e-6).abs() < 1e-20);
        assert!((parse_quantity("70 mOhm", Dimension::Resistance).unwrap() - 0.07).abs() < 1e-16);
        assert!((parse_quantity("16 Ω", Dimension::Resistance).unwrap() - 16.0).abs() < 1e-16);
        assert!((parse_quantity("2.2 mF", Dimension::Capacitance).unwrap() - 2.2e-3).abs() < 1e-18);
        assert_eq!(parse_quantity("-20 A", Dimension::Current).unwrap(), -20.0);
        assert_eq!(parse_quantity("1e-5 s", Dimension::Time).unwrap(), 1e-5);
        assert!((parse_quantity("10 us", Dimension::Time).unwrap() - 1e-5).abs() < 1e-20);
        assert_eq!(parse_quantity("380", Dimension::Voltage).unwrap(), 380.0);
    }

    #[test]
    fn dimension_mismatch() {
        let err = parse_quantity("1.8 mH", Dimension::Capacitance).unwrap_err();
        assert!(err.to_string().contains("inductance"));
        assert!(parse_quantity("3 furlongs", Dimension::Time).is_err());
        assert!(parse_quantity("mH", Dimension::Inductance).is_err());
    }

    #[test]
    fn untagged_forms() {
        let q: Quantity = serde_json::from_str("\"5 ms\"").unwrap();
        assert_eq!(q.si(Dimension::Time).unwrap(), 5e-3);
        let q: Quantity = serde_json::from_str("0.25").unwrap();
        assert_eq!(q.si(Dimension::Time).unwrap(), 0.25);
    }
}
