//! Scalar abstraction shared by the combinatorial modules.
//!
//! Masses, integrals and base functions are generic over [`Scalar`]. The
//! exact instance ([`num_rational::BigRational`]) is what the solver uses;
//! `Ratio<i64>` and `f64` are provided for experimentation and must not be
//! expected to satisfy the exact filtration identities.

use std::fmt;
use std::ops::{Add, AddAssign};

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive, Zero};

/// Ordered field element used for masses and base functions.
pub trait Scalar:
    Clone + PartialOrd + fmt::Debug + Num + Signed + FromPrimitive + Send + Sync + 'static
{
    /// Nearest `f64`, used when handing masses to the transport module.
    fn to_f64_lossy(&self) -> f64;
    /// Wire representation (`"p/q"` for rationals).
    fn to_wire(&self) -> String;
    fn from_wire(s: &str) -> Option<Self>;

    fn from_ratio(p: i64, q: i64) -> Self {
        Self::from_i64(p).unwrap() / Self::from_i64(q).unwrap()
    }

    fn half() -> Self {
        Self::from_ratio(1, 2)
    }

    fn min_of(a: Self, b: Self) -> Self {
        if b < a {
            b
        } else {
            a
        }
    }

    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }
}

fn parse_ratio<T>(s: &str) -> Option<(T, T)>
where
    T: std::str::FromStr,
{
    let s = s.trim();
    match s.split_once('/') {
        Some((p, q)) => Some((p.trim().parse().ok()?, q.trim().parse().ok()?)),
        None => None,
    }
}

impl Scalar for BigRational {
    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or_else(|| {
            // numerator/denominator too large for direct conversion
            let n = self.numer().to_f64().unwrap_or(f64::NAN);
            let d = self.denom().to_f64().unwrap_or(f64::NAN);
            n / d
        })
    }

    fn to_wire(&self) -> String {
        format!("{}/{}", self.numer(), self.denom())
    }

    fn from_wire(s: &str) -> Option<Self> {
        if let Some((p, q)) = parse_ratio::<BigInt>(s) {
            if q.is_zero() {
                return None;
            }
            return Some(BigRational::new(p, q));
        }
        let p: BigInt = s.trim().parse().ok()?;
        Some(BigRational::from_integer(p))
    }
}

impl Scalar for Ratio<i64> {
    fn to_f64_lossy(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }

    fn to_wire(&self) -> String {
        format!("{}/{}", self.numer(), self.denom())
    }

    fn from_wire(s: &str) -> Option<Self> {
        if let Some((p, q)) = parse_ratio::<i64>(s) {
            if q == 0 {
                return None;
            }
            return Some(Ratio::new(p, q));
        }
        Some(Ratio::from_integer(s.trim().parse().ok()?))
    }
}

impl Scalar for f64 {
    fn to_f64_lossy(&self) -> f64 {
        *self
    }

    fn to_wire(&self) -> String {
        format!("{:.16e}", self)
    }

    fn from_wire(s: &str) -> Option<Self> {
        if let Some((p, q)) = parse_ratio::<f64>(s) {
            return Some(p / q);
        }
        s.trim().parse().ok()
    }
}

/// Nonnegative-or-signed scalar extended by `+∞`.
#[derive(Clone, Debug, PartialEq)]
pub enum ExtReal<S> {
    Finite(S),
    Infinite,
}

/// Raised by `∞ − ∞`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("undetermined difference ∞ − ∞")]
pub struct IndeterminateDifference;

impl<S: Scalar> ExtReal<S> {
    pub fn finite(value: S) -> Self {
        ExtReal::Finite(value)
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, ExtReal::Infinite)
    }

    pub fn as_finite(&self) -> Option<&S> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::Infinite => None,
        }
    }

    pub fn into_finite(self) -> Option<S> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::Infinite => None,
        }
    }

    /// `self − rhs` where `rhs` is finite: ∞ − finite = ∞.
    pub fn sub_finite(&self, rhs: &S) -> Self {
        match self {
            ExtReal::Finite(v) => ExtReal::Finite(v.clone() - rhs.clone()),
            ExtReal::Infinite => ExtReal::Infinite,
        }
    }

    pub fn checked_sub(&self, rhs: &Self) -> Result<Self, IndeterminateDifference> {
        match (self, rhs) {
            (_, ExtReal::Finite(r)) => Ok(self.sub_finite(r)),
            (ExtReal::Finite(_), ExtReal::Infinite) => Err(IndeterminateDifference),
            (ExtReal::Infinite, ExtReal::Infinite) => Err(IndeterminateDifference),
        }
    }

    /// Strict `value < self` with `∞` above every finite value.
    pub fn exceeds(&self, value: &S) -> bool {
        match self {
            ExtReal::Finite(v) => value < v,
            ExtReal::Infinite => true,
        }
    }

    pub fn to_wire(&self) -> String {
        match self {
            ExtReal::Finite(v) => v.to_wire(),
            ExtReal::Infinite => "inf".to_string(),
        }
    }

    pub fn from_wire(s: &str) -> Option<Self> {
        let t = s.trim();
        if t == "inf" || t == "+inf" || t == "∞" {
            Some(ExtReal::Infinite)
        } else {
            S::from_wire(t).map(ExtReal::Finite)
        }
    }
}

impl<S: Scalar> Add for ExtReal<S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a + b),
            _ => ExtReal::Infinite,
        }
    }
}

impl<S: Scalar> AddAssign for ExtReal<S> {
    fn add_assign(&mut self, rhs: Self) {
        let lhs = std::mem::replace(self, ExtReal::Infinite);
        *self = lhs + rhs;
    }
}

impl<S: Scalar> Zero for ExtReal<S> {
    fn zero() -> Self {
        ExtReal::Finite(S::zero())
    }
    fn is_zero(&self) -> bool {
        matches!(self, ExtReal::Finite(v) if v.is_zero())
    }
}

impl<S: Scalar> From<S> for ExtReal<S> {
    fn from(v: S) -> Self {
        ExtReal::Finite(v)
    }
}

impl<S: Scalar> fmt::Display for ExtReal<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_wire())
    }
}

/// A regular value of the filler: the half-integer `k + ½` lying between
/// integer levels `k` and `k + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cut(pub i64);

impl Cut {
    /// The cut `level + ½`.
    pub fn above(level: i64) -> Self {
        Cut(level)
    }

    /// Largest integer level lying below the cut.
    pub fn floor_level(self) -> i64 {
        self.0
    }

    pub fn next(self) -> Self {
        Cut(self.0 + 1)
    }

    pub fn prev(self) -> Self {
        Cut(self.0 - 1)
    }

    /// Does a cell of this integer level lie below the cut?
    pub fn below(self, level: i64) -> bool {
        level <= self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 + 0.5
    }

    pub fn parse(s: &str) -> Option<Self> {
        let t = s.trim();
        let r = BigRational::from_wire(t).or_else(|| {
            // decimal notation "1.5", "-0.5"
            let (int, frac) = t.split_once('.')?;
            if frac != "5" {
                return None;
            }
            let neg = int.starts_with('-');
            let k: i64 = int.parse().ok()?;
            let twice = if neg { 2 * k - 1 } else { 2 * k + 1 };
            Some(BigRational::new(twice.into(), 2.into()))
        })?;
        let twice = r.clone() * BigRational::from_integer(2.into());
        if !twice.is_integer() {
            return None;
        }
        let n = twice.to_integer().to_i64()?;
        if n.rem_euclid(2) != 1 {
            return None;
        }
        Some(Cut((n - 1).div_euclid(2)))
    }
}

impl fmt::Display for Cut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 >= 0 {
            write!(f, "{}.5", self.0)
        } else if self.0 == -1 {
            f.write_str("-0.5")
        } else {
            write!(f, "-{}.5", -self.0 - 1)
        }
    }
}

/// Default exact scalar.
pub type Rational = BigRational;

pub fn rat(p: i64, q: i64) -> Rational {
    Rational::new(p.into(), q.into())
}

pub fn one<S: Scalar>() -> S {
    S::one()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ext_real_absorbs() {
        let a: ExtReal<Rational> = ExtReal::Finite(rat(3, 2));
        assert_eq!(a.clone() + ExtReal::Infinite, ExtReal::Infinite);
        assert_eq!(ExtReal::<Rational>::Infinite.sub_finite(&rat(1, 1)), ExtReal::Infinite);
        assert!(ExtReal::<Rational>::Infinite
            .checked_sub(&ExtReal::Infinite)
            .is_err());
        assert_eq!(
            a.clone() + ExtReal::Finite(rat(1, 2)),
            ExtReal::Finite(rat(2, 1))
        );
    }

    #[test]
    fn wire_round_trip() {
        let q = rat(-7, 3);
        assert_eq!(q.to_wire(), "-7/3");
        assert_eq!(Rational::from_wire("-7/3"), Some(q));
        assert_eq!(Rational::from_wire("4"), Some(rat(4, 1)));
        assert_eq!(ExtReal::<Rational>::from_wire("inf"), Some(ExtReal::Infinite));
        assert_eq!(Rational::from_wire("1/0"), None);
    }

    #[test]
    fn cuts_print_and_parse() {
        for k in -3..5 {
            let c = Cut(k);
            assert_eq!(Cut::parse(&c.to_string()), Some(c), "{c}");
        }
        assert_eq!(Cut(-1).to_string(), "-0.5");
        assert_eq!(Cut::parse("3/2"), Some(Cut(1)));
        assert_eq!(Cut::parse("1"), None);
        assert!(Cut(1).below(1));
        assert!(!Cut(1).below(2));
    }
}
