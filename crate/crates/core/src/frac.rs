//! Exact nonnegative rational arithmetic.
//!
//! Conformal p-values live on the grid a/(d+1) and the statistics derived
//! from them stay rational, so set-membership comparisons against a level
//! alpha can be decided by integer cross-multiplication instead of floating
//! point. Every finite f64 is itself a rational, which lets a CLI-supplied
//! alpha participate in exact comparisons.

use std::cmp::Ordering;

use num_bigint::BigUint;

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Reduced nonnegative rational with 128-bit numerator and denominator.
///
/// Comparisons are always exact: cross products that overflow u128 fall
/// back to big-integer arithmetic. Products that cannot be represented
/// return `None` so callers can degrade to floating point explicitly.
#[derive(Clone, Copy, Debug)]
pub struct Frac {
    num: u128,
    den: u128,
}

impl Frac {
    pub const ZERO: Frac = Frac { num: 0, den: 1 };
    pub const ONE: Frac = Frac { num: 1, den: 1 };

    /// Build `num/den`, reduced. Panics if `den == 0`.
    pub fn new(num: u128, den: u128) -> Self {
        assert!(den != 0, "zero denominator");
        if num == 0 {
            return Frac::ZERO;
        }
        let g = gcd(num, den);
        Frac {
            num: num / g,
            den: den / g,
        }
    }

    pub fn integer(n: u128) -> Self {
        Frac { num: n, den: 1 }
    }

    /// The exact rational value of a finite nonnegative f64, when its
    /// reduced form fits in 128 bits.
    pub fn from_f64_exact(x: f64) -> Option<Self> {
        if !x.is_finite() || x < 0.0 {
            return None;
        }
        if x == 0.0 {
            return Some(Frac::ZERO);
        }
        let bits = x.to_bits();
        let raw_exponent = ((bits >> 52) & 0x7ff) as i64;
        let raw_mantissa = bits & 0x000f_ffff_ffff_ffff;
        let (mut mantissa, mut exponent) = if raw_exponent == 0 {
            (raw_mantissa, -1074i64)
        } else {
            (raw_mantissa | (1 << 52), raw_exponent - 1075)
        };
        let tz = mantissa.trailing_zeros() as i64;
        mantissa >>= tz;
        exponent += tz;
        if exponent >= 0 {
            if exponent > 74 {
                return None;
            }
            Some(Frac {
                num: (mantissa as u128) << exponent,
                den: 1,
            })
        } else {
            let shift = -exponent;
            if shift > 127 {
                return None;
            }
            Some(Frac {
                num: mantissa as u128,
                den: 1u128 << shift,
            })
        }
    }

    pub fn numerator(&self) -> u128 {
        self.num
    }

    pub fn denominator(&self) -> u128 {
        self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn checked_mul(&self, other: &Frac) -> Option<Frac> {
        // Cross-reduce first so realistic inputs never overflow.
        let g1 = gcd(self.num, other.den);
        let g2 = gcd(other.num, self.den);
        let num = (self.num / g1).checked_mul(other.num / g2)?;
        let den = (self.den / g2).checked_mul(other.den / g1)?;
        Some(Frac::new(num, den))
    }

    pub fn checked_mul_int(&self, k: u128) -> Option<Frac> {
        self.checked_mul(&Frac::integer(k))
    }

    pub fn checked_div_int(&self, k: u128) -> Option<Frac> {
        if k == 0 {
            return None;
        }
        self.checked_mul(&Frac { num: 1, den: k })
    }

    /// `1 - self`, defined only for values at most one.
    pub fn one_minus(&self) -> Option<Frac> {
        if self.num > self.den {
            return None;
        }
        Some(Frac::new(self.den - self.num, self.den))
    }

    pub fn recip(&self) -> Option<Frac> {
        if self.num == 0 {
            return None;
        }
        Some(Frac {
            num: self.den,
            den: self.num,
        })
    }

    /// `floor(k * self)` computed exactly.
    pub fn floor_mul(&self, k: u128) -> u128 {
        match self.num.checked_mul(k) {
            Some(prod) => prod / self.den,
            None => {
                let prod = BigUint::from(self.num) * BigUint::from(k);
                let q = prod / BigUint::from(self.den);
                // The quotient is bounded by k because self stems from a
                // value below one whenever this path is reachable.
                q.try_into().unwrap_or(u128::MAX)
            }
        }
    }
}

impl PartialEq for Frac {
    fn eq(&self, other: &Self) -> bool {
        // Both sides are reduced.
        self.num == other.num && self.den == other.den
    }
}

impl Eq for Frac {}

impl PartialOrd for Frac {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frac {
    fn cmp(&self, other: &Self) -> Ordering {
        match (
            self.num.checked_mul(other.den),
            other.num.checked_mul(self.den),
        ) {
            (Some(lhs), Some(rhs)) => lhs.cmp(&rhs),
            _ => {
                let lhs = BigUint::from(self.num) * BigUint::from(other.den);
                let rhs = BigUint::from(other.num) * BigUint::from(self.den);
                lhs.cmp(&rhs)
            }
        }
    }
}

impl std::fmt::Display for Frac {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduces_on_construction() {
        let f = Frac::new(6, 10);
        assert_eq!(f.numerator(), 3);
        assert_eq!(f.denominator(), 5);
    }

    #[test]
    fn from_f64_is_exact_for_dyadics_and_decimals() {
        assert_eq!(Frac::from_f64_exact(0.5).unwrap(), Frac::new(1, 2));
        assert_eq!(Frac::from_f64_exact(0.25).unwrap(), Frac::new(1, 4));
        assert_eq!(Frac::from_f64_exact(3.0).unwrap(), Frac::integer(3));
        // 0.1 is not dyadic; round-tripping through f64 must be the identity.
        let tenth = Frac::from_f64_exact(0.1).unwrap();
        assert_eq!(tenth.to_f64(), 0.1);
        assert!(tenth < Frac::new(1, 9));
        assert!(tenth > Frac::new(1, 11));
    }

    #[test]
    fn comparison_is_exact_at_grid_boundaries() {
        // 2/20 against the f64 nearest to 0.1: the f64 is strictly larger.
        let p = Frac::new(2, 20);
        let alpha = Frac::from_f64_exact(0.1).unwrap();
        assert!(p < alpha);
        // 1/2 against exactly representable 0.5.
        assert_eq!(Frac::new(1, 2), Frac::from_f64_exact(0.5).unwrap());
    }

    #[test]
    fn comparison_falls_back_to_bigints() {
        let a = Frac::new(u128::MAX - 1, u128::MAX);
        let b = Frac::new(u128::MAX - 2, u128::MAX - 1);
        assert!(a > b);
        assert_eq!(a.cmp(&a), Ordering::Equal);
    }

    #[test]
    fn floor_mul_matches_integer_arithmetic() {
        let alpha = Frac::from_f64_exact(0.05).unwrap();
        assert_eq!(alpha.floor_mul(10), 0);
        assert_eq!(alpha.floor_mul(10_000), 500); // f64 0.05 is slightly above 1/20
        let half = Frac::new(1, 2);
        assert_eq!(half.floor_mul(20), 10);
    }

    #[test]
    fn arithmetic_helpers() {
        let f = Frac::new(2, 3);
        assert_eq!(f.one_minus().unwrap(), Frac::new(1, 3));
        assert_eq!(f.recip().unwrap(), Frac::new(3, 2));
        assert_eq!(
            f.checked_mul(&Frac::new(3, 4)).unwrap(),
            Frac::new(1, 2)
        );
        assert!(Frac::integer(2).one_minus().is_none());
        assert!(Frac::ZERO.recip().is_none());
    }
}
