//! Exact rational values.
//!
//! Every probability, measure, belief, and threshold in this crate is a
//! [`Rat`]. No floating point enters any measure or belief computation;
//! decimals only ever appear as display approximations marked `≈`.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// An exact rational number, kept in lowest terms with a positive
/// denominator.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Rat(BigRational);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RatError {
    #[error("decimal probabilities not allowed; use num/den")]
    DecimalNotAllowed,
    #[error("malformed rational `{0}`: expected `num/den` or an integer")]
    Malformed(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
}

impl Rat {
    /// Builds `num/den`. Panics on a zero denominator.
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        Rat(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn from_int(n: i64) -> Self {
        Rat(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn zero() -> Self {
        Rat(BigRational::zero())
    }

    pub fn one() -> Self {
        Rat(BigRational::one())
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.0.is_one()
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    /// True iff the value lies in `[0, 1]`.
    pub fn is_probability(&self) -> bool {
        !self.0.is_negative() && self.0 <= BigRational::one()
    }

    /// True iff the value lies in `(0, 1]` — a legal edge probability.
    pub fn is_edge_probability(&self) -> bool {
        self.0.is_positive() && self.0 <= BigRational::one()
    }

    /// Lossy decimal approximation, for display only.
    pub fn approx_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn abs(&self) -> Rat {
        Rat(self.0.abs())
    }
}

impl fmt::Display for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl FromStr for Rat {
    type Err = RatError;

    /// Parses `num/den` or a bare integer. Anything containing a decimal
    /// point is rejected outright.
    fn from_str(s: &str) -> Result<Self, RatError> {
        let s = s.trim();
        if s.contains('.') {
            return Err(RatError::DecimalNotAllowed);
        }
        let (num, den) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), Some(d.trim())),
            None => (s, None),
        };
        let n: BigInt = num
            .parse()
            .map_err(|_| RatError::Malformed(s.to_string()))?;
        let d: BigInt = match den {
            Some(d) => d.parse().map_err(|_| RatError::Malformed(s.to_string()))?,
            None => BigInt::one(),
        };
        if d.is_zero() {
            return Err(RatError::ZeroDenominator(s.to_string()));
        }
        Ok(Rat(BigRational::new(n, d)))
    }
}

impl Serialize for Rat {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

struct RatVisitor;

impl Visitor<'_> for RatVisitor {
    type Value = Rat;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a `num/den` string")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Rat, E> {
        v.parse().map_err(|e: RatError| E::custom(e.to_string()))
    }

    fn visit_f64<E: de::Error>(self, _: f64) -> Result<Rat, E> {
        Err(E::custom(RatError::DecimalNotAllowed.to_string()))
    }

    fn visit_i64<E: de::Error>(self, _: i64) -> Result<Rat, E> {
        Err(E::custom(RatError::DecimalNotAllowed.to_string()))
    }

    fn visit_u64<E: de::Error>(self, _: u64) -> Result<Rat, E> {
        Err(E::custom(RatError::DecimalNotAllowed.to_string()))
    }
}

impl<'de> Deserialize<'de> for Rat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Rat, D::Error> {
        deserializer.deserialize_any(RatVisitor)
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident) => {
        impl $trait for Rat {
            type Output = Rat;
            fn $method(self, rhs: Rat) -> Rat {
                Rat((self.0).$method(rhs.0))
            }
        }
        impl $trait<&Rat> for &Rat {
            type Output = Rat;
            fn $method(self, rhs: &Rat) -> Rat {
                Rat((&self.0).$method(&rhs.0))
            }
        }
        impl $trait<&Rat> for Rat {
            type Output = Rat;
            fn $method(self, rhs: &Rat) -> Rat {
                Rat((self.0).$method(&rhs.0))
            }
        }
        impl $trait<Rat> for &Rat {
            type Output = Rat;
            fn $method(self, rhs: Rat) -> Rat {
                Rat((&self.0).$method(rhs.0))
            }
        }
    };
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);
forward_binop!(Div, div);

impl Neg for Rat {
    type Output = Rat;
    fn neg(self) -> Rat {
        Rat(-self.0)
    }
}

impl AddAssign<&Rat> for Rat {
    fn add_assign(&mut self, rhs: &Rat) {
        self.0 += &rhs.0;
    }
}

impl SubAssign<&Rat> for Rat {
    fn sub_assign(&mut self, rhs: &Rat) {
        self.0 -= &rhs.0;
    }
}

impl MulAssign<&Rat> for Rat {
    fn mul_assign(&mut self, rhs: &Rat) {
        self.0 *= &rhs.0;
    }
}

impl Sum for Rat {
    fn sum<I: Iterator<Item = Rat>>(iter: I) -> Rat {
        iter.fold(Rat::zero(), |acc, x| acc + x)
    }
}

impl<'a> Sum<&'a Rat> for Rat {
    fn sum<I: Iterator<Item = &'a Rat>>(iter: I) -> Rat {
        iter.fold(Rat::zero(), |mut acc, x| {
            acc += x;
            acc
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduces_to_lowest_terms() {
        assert_eq!(Rat::new(2, 4), Rat::new(1, 2));
        assert_eq!(Rat::new(2, 4).to_string(), "1/2");
        assert_eq!(Rat::new(-3, -6).to_string(), "1/2");
        assert_eq!(Rat::new(3, -6).to_string(), "-1/2");
    }

    #[test]
    fn display_always_carries_denominator() {
        assert_eq!(Rat::zero().to_string(), "0/1");
        assert_eq!(Rat::one().to_string(), "1/1");
        assert_eq!(Rat::from_int(3).to_string(), "3/1");
    }

    #[test]
    fn parses_fractions_and_integers() {
        assert_eq!("9/10".parse::<Rat>().unwrap(), Rat::new(9, 10));
        assert_eq!("  2/4 ".parse::<Rat>().unwrap(), Rat::new(1, 2));
        assert_eq!("3".parse::<Rat>().unwrap(), Rat::from_int(3));
        assert_eq!("-1/2".parse::<Rat>().unwrap(), Rat::new(-1, 2));
    }

    #[test]
    fn rejects_decimals_and_garbage() {
        assert_eq!("0.5".parse::<Rat>(), Err(RatError::DecimalNotAllowed));
        assert!(matches!("1/0".parse::<Rat>(), Err(RatError::ZeroDenominator(_))));
        assert!(matches!("a/b".parse::<Rat>(), Err(RatError::Malformed(_))));
        assert!(matches!("".parse::<Rat>(), Err(RatError::Malformed(_))));
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let x = Rat::new(99, 100);
        let json = serde_json::to_string(&x).unwrap();
        assert_eq!(json, "\"99/100\"");
        let back: Rat = serde_json::from_str(&json).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn serde_rejects_numeric_json() {
        let err = serde_json::from_str::<Rat>("0.5").unwrap_err();
        assert!(err.to_string().contains("decimal probabilities not allowed"));
        let err = serde_json::from_str::<Rat>("1").unwrap_err();
        assert!(err.to_string().contains("decimal probabilities not allowed"));
    }

    #[test]
    fn probability_ranges() {
        assert!(Rat::zero().is_probability());
        assert!(!Rat::zero().is_edge_probability());
        assert!(Rat::one().is_edge_probability());
        assert!(!Rat::new(3, 2).is_probability());
        assert!(!Rat::new(-1, 2).is_probability());
    }

    #[test]
    fn exact_arithmetic() {
        let sum = Rat::new(1, 2) + Rat::new(1, 3);
        assert_eq!(sum, Rat::new(5, 6));
        let prod = Rat::new(1, 2) * Rat::new(1, 10) * Rat::new(1, 10) * Rat::new(9, 10);
        assert_eq!(prod, Rat::new(9, 2000));
        let cond = Rat::new(9, 2000) / Rat::new(1, 2);
        assert_eq!(cond, Rat::new(9, 1000));
    }
}
