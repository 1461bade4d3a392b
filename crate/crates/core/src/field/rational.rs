use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Exact rational number in lowest terms with a positive denominator.
///
/// Serialized as the string `"n/d"` (or `"n"` when `d = 1`).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rational(Ratio<i128>);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid rational literal {0:?}")]
pub struct RationalParseError(pub String);

impl Rational {
    /// Panics when `den == 0`.
    pub fn new(num: i128, den: i128) -> Self {
        Rational(Ratio::new(num, den))
    }

    pub fn integer(n: i128) -> Self {
        Rational(Ratio::from_integer(n))
    }

    pub fn zero() -> Self {
        Rational(Ratio::zero())
    }

    pub fn one() -> Self {
        Rational(Ratio::one())
    }

    pub fn numer(&self) -> i128 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i128 {
        *self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn recip(&self) -> Self {
        Rational(self.0.recip())
    }

    /// Integer power; negative exponents invert.
    pub fn pow(&self, exp: i32) -> Self {
        Rational(self.0.pow(exp))
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == 1 {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl FromStr for Rational {
    type Err = RationalParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || RationalParseError(s.to_string());
        let s = s.trim();
        match s.split_once('/') {
            Some((n, d)) => {
                let n: i128 = n.trim().parse().map_err(|_| err())?;
                let d: i128 = d.trim().parse().map_err(|_| err())?;
                if d == 0 {
                    return Err(err());
                }
                Ok(Rational::new(n, d))
            }
            None => {
                if let Ok(n) = s.parse::<i128>() {
                    return Ok(Rational::integer(n));
                }
                parse_decimal(s).ok_or_else(err)
            }
        }
    }
}

// "1.75" -> 7/4; exact, no float round trip.
fn parse_decimal(s: &str) -> Option<Rational> {
    let (int, frac) = s.split_once('.')?;
    if frac.is_empty() || frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let negative = int.starts_with('-');
    let int_val: i128 = if int.is_empty() || int == "-" { 0 } else { int.parse().ok()? };
    let scale = 10i128.pow(frac.len() as u32);
    let frac_val: i128 = frac.parse().ok()?;
    let num = int_val.abs() * scale + frac_val;
    Some(Rational::new(if negative { -num } else { num }, scale))
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl From<i128> for Rational {
    fn from(n: i128) -> Self {
        Rational::integer(n)
    }
}

macro_rules! forward_binop {
    ($tr:ident, $method:ident, $op:tt) => {
        impl $tr for Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational(self.0 $op rhs.0)
            }
        }
    };
}

forward_binop!(Add, add, +);
forward_binop!(Sub, sub, -);
forward_binop!(Mul, mul, *);
forward_binop!(Div, div, /);

impl AddAssign for Rational {
    fn add_assign(&mut self, rhs: Rational) {
        self.0 += rhs.0;
    }
}

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-self.0)
    }
}

impl Sum for Rational {
    fn sum<I: Iterator<Item = Rational>>(iter: I) -> Rational {
        iter.fold(Rational::zero(), |a, b| a + b)
    }
}

impl PartialEq<i128> for Rational {
    fn eq(&self, other: &i128) -> bool {
        self.denom() == 1 && self.numer() == *other
    }
}

impl PartialOrd<i128> for Rational {
    fn partial_cmp(&self, other: &i128) -> Option<Ordering> {
        self.partial_cmp(&Rational::integer(*other))
    }
}
