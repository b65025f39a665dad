//! Exact cycle arithmetic.
//!
//! Every latency in this crate is a rational number of clock cycles. Clock
//! readings are integers, but dividing a delta by an instruction count is
//! not, and the analysis must stay exact so that replayed measurements
//! reproduce seeded values bit for bit.

use std::fmt;
use std::ops::{Add, Div, Mul, Sub};
use std::str::FromStr;

use num_rational::Rational64;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A rational number of clock cycles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cycles(Rational64);

impl Cycles {
    pub const ZERO: Cycles = Cycles(Rational64::new_raw(0, 1));

    pub fn new(numer: i64, denom: i64) -> Self {
        Cycles(Rational64::new(numer, denom))
    }

    pub fn from_int(value: i64) -> Self {
        Cycles(Rational64::from_integer(value))
    }

    pub fn ratio(self) -> Rational64 {
        self.0
    }

    pub fn is_integer(self) -> bool {
        self.0.is_integer()
    }

    pub fn is_negative(self) -> bool {
        self.0.is_negative()
    }

    pub fn is_zero(self) -> bool {
        self.0.is_zero()
    }

    /// Integer value, if the rational is integral.
    pub fn to_integer(self) -> Option<i64> {
        self.0.is_integer().then(|| self.0.to_integer())
    }

    pub fn to_f64(self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn max(self, other: Cycles) -> Cycles {
        if self >= other {
            self
        } else {
            other
        }
    }

    pub fn min(self, other: Cycles) -> Cycles {
        if self <= other {
            self
        } else {
            other
        }
    }

    /// Human-oriented rendering: integers as-is, otherwise a decimal with at
    /// most three fractional digits.
    pub fn to_decimal_string(self) -> String {
        match self.to_integer() {
            Some(v) => v.to_string(),
            None => {
                let s = format!("{:.3}", self.to_f64());
                s.trim_end_matches('0').trim_end_matches('.').to_string()
            }
        }
    }
}

impl From<i64> for Cycles {
    fn from(v: i64) -> Self {
        Cycles::from_int(v)
    }
}

impl From<Rational64> for Cycles {
    fn from(v: Rational64) -> Self {
        Cycles(v)
    }
}

impl Add for Cycles {
    type Output = Cycles;
    fn add(self, rhs: Cycles) -> Cycles {
        Cycles(self.0 + rhs.0)
    }
}

impl Sub for Cycles {
    type Output = Cycles;
    fn sub(self, rhs: Cycles) -> Cycles {
        Cycles(self.0 - rhs.0)
    }
}

impl Mul<i64> for Cycles {
    type Output = Cycles;
    fn mul(self, rhs: i64) -> Cycles {
        Cycles(self.0 * rhs)
    }
}

impl Div<i64> for Cycles {
    type Output = Cycles;
    fn div(self, rhs: i64) -> Cycles {
        Cycles(self.0 / rhs)
    }
}

impl fmt::Display for Cycles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid cycle value '{0}'")]
pub struct ParseCyclesError(pub String);

impl FromStr for Cycles {
    type Err = ParseCyclesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseCyclesError(s.to_string());
        let s = s.trim();
        match s.split_once('/') {
            Some((n, d)) => {
                let n: i64 = n.trim().parse().map_err(|_| err())?;
                let d: i64 = d.trim().parse().map_err(|_| err())?;
                if d == 0 {
                    return Err(err());
                }
                Ok(Cycles::new(n, d))
            }
            None => s.parse::<i64>().map(Cycles::from_int).map_err(|_| err()),
        }
    }
}

// Integral values serialize as JSON integers, everything else as "n/d".
impl Serialize for Cycles {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.to_integer() {
            Some(v) => serializer.serialize_i64(v),
            None => serializer.collect_str(self),
        }
    }
}

impl<'de> Deserialize<'de> for Cycles {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(v) => Ok(Cycles::from_int(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A latency that may be a point value, a range, or an approximation.
///
/// Point values have `min == max`. Approximate values (`~X`) are points with
/// the `approx` flag set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CycleRange {
    pub min: Cycles,
    pub max: Cycles,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub approx: bool,
}

impl CycleRange {
    pub fn point(value: impl Into<Cycles>) -> Self {
        let v = value.into();
        CycleRange {
            min: v,
            max: v,
            approx: false,
        }
    }

    pub fn approx(value: impl Into<Cycles>) -> Self {
        CycleRange {
            approx: true,
            ..CycleRange::point(value)
        }
    }

    pub fn range(min: impl Into<Cycles>, max: impl Into<Cycles>) -> Self {
        CycleRange {
            min: min.into(),
            max: max.into(),
            approx: false,
        }
    }

    pub fn is_point(&self) -> bool {
        self.min == self.max
    }

    pub fn is_valid(&self) -> bool {
        self.min <= self.max && !self.min.is_negative()
    }

    pub fn midpoint(&self) -> Cycles {
        Cycles((self.min.0 + self.max.0) / 2)
    }

    /// Smallest range containing both.
    pub fn widen(&self, other: &CycleRange) -> CycleRange {
        CycleRange {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
            approx: self.approx || other.approx,
        }
    }

    /// Same bounds, ignoring the approximation flag.
    pub fn same_bounds(&self, other: &CycleRange) -> bool {
        self.min == other.min && self.max == other.max
    }
}

impl fmt::Display for CycleRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_point() {
            if self.approx {
                write!(f, "~{}", self.min.to_decimal_string())
            } else {
                write!(f, "{}", self.min.to_decimal_string())
            }
        } else {
            write!(
                f,
                "{}-{}",
                self.min.to_decimal_string(),
                self.max.to_decimal_string()
            )
        }
    }
}

impl FromStr for CycleRange {
    type Err = ParseCyclesError;

    /// Accepts `X`, `~X`, `~ X`, `A-B` and `A or B`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if let Some(rest) = t.strip_prefix('~') {
            return Ok(CycleRange::approx(rest.trim().parse::<Cycles>()?));
        }
        let split = t.split_once(" or ").or_else(|| t.split_once('-'));
        if let Some((a, b)) = split {
            let a: Cycles = a.trim().parse()?;
            let b: Cycles = b.trim().parse()?;
            if a > b {
                return Err(ParseCyclesError(s.to_string()));
            }
            return Ok(CycleRange::range(a, b));
        }
        Ok(CycleRange::point(t.parse::<Cycles>()?))
    }
}
