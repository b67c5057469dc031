//! Scalar abstraction shared by every operator, partition and report type.
//!
//! Matrix entries, partition values and norms are generic over [`Scalar`]
//! (implemented for `f32` and `f64`). Distances are kept separately as exact
//! rationals, see [`Distance`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Exact distance value. Grid metrics produce integers, explicit tables may
/// carry arbitrary rationals.
pub type Distance = Ratio<i64>;

/// Real scalar used for matrix entries.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("scalar converts to f64")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    #[inline]
    fn of_distance(d: &Distance) -> Self {
        Self::of(distance_to_f64(d))
    }

    #[inline]
    fn two() -> Self {
        Self::one() + Self::one()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub fn distance_to_f64(d: &Distance) -> f64 {
    *d.numer() as f64 / *d.denom() as f64
}

/// Neumaier-compensated sum. Row and column sums of absolute values go
/// through this so norms are exact up to the final rounding.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum<T> {
    sum: T,
    carry: T,
}

impl<T: Scalar> CompensatedSum<T> {
    pub fn new() -> Self {
        Self {
            sum: T::zero(),
            carry: T::zero(),
        }
    }

    pub fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> T {
        self.sum + self.carry
    }
}

impl<T: Scalar> FromIterator<T> for CompensatedSum<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn compensated_sum<T: Scalar, I: IntoIterator<Item = T>>(iter: I) -> T {
    iter.into_iter().collect::<CompensatedSum<T>>().value()
}

/// Parse `"3"`, `"-3/2"` or a plain decimal such as `"1.25"` into an exact
/// distance.
pub fn parse_distance(text: &str) -> Option<Distance> {
    let s = text.trim();
    if s.is_empty() {
        return None;
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().ok()?;
        let d: i64 = d.trim().parse().ok()?;
        if d == 0 {
            return None;
        }
        return Some(Ratio::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 15 {
            return None;
        }
        let negative = int.starts_with('-');
        let int_val: i64 = if int.is_empty() || int == "-" || int == "+" {
            0
        } else {
            int.parse().ok()?
        };
        let scale = 10i64.checked_pow(frac.len() as u32)?;
        let frac_val: i64 = frac.parse().ok()?;
        let magnitude = int_val.abs().checked_mul(scale)?.checked_add(frac_val)?;
        let numer = if negative { -magnitude } else { magnitude };
        return Some(Ratio::new(numer, scale));
    }
    s.parse::<i64>().ok().map(Ratio::from_integer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_integer_fraction_and_decimal() {
        assert_eq!(parse_distance("3"), Some(Ratio::from_integer(3)));
        assert_eq!(parse_distance(" 3/2 "), Some(Ratio::new(3, 2)));
        assert_eq!(parse_distance("1.25"), Some(Ratio::new(5, 4)));
        assert_eq!(parse_distance("-0.5"), Some(Ratio::new(-1, 2)));
        assert_eq!(parse_distance("1/0"), None);
        assert_eq!(parse_distance("abc"), None);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1.0e16, 1.0, -1.0e16, 1.0];
        assert_eq!(compensated_sum(xs.iter().copied()), 2.0);
    }
}
