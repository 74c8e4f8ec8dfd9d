//! Arithmetic in the prime field of order `2^61 - 1`.
//!
//! The Mersenne modulus makes reduction a shift and an add, and leaves room
//! for squared distances of continent-scale centimeter coordinates without
//! wrapping.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use rand::RngCore;
use serde::{Deserialize, Serialize};

/// The global prime modulus `Q = 2^61 - 1`.
pub const MODULUS: u64 = (1 << 61) - 1;

/// Number of bits needed to represent any element of the field.
pub const MODULUS_BITS: usize = 61;

#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct FieldElement(u64);

impl<'de> Deserialize<'de> for FieldElement {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u64::deserialize(d)?;
        FieldElement::from_canonical(v).ok_or_else(|| serde::de::Error::custom(format!("{v} is not below the modulus")))
    }
}

#[inline(always)]
fn fold(x: u64) -> u64 {
    // x < 2^64; fold the top bits once, then a single conditional subtract.
    let s = (x & MODULUS) + (x >> 61);
    if s >= MODULUS {
        s - MODULUS
    } else {
        s
    }
}

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(0);
    pub const ONE: FieldElement = FieldElement(1);

    /// Reduces an arbitrary `u64` into the field.
    #[inline]
    pub fn new(value: u64) -> Self {
        FieldElement(fold(value))
    }

    /// Builds an element from a value already known to be canonical.
    /// Returns `None` when `value >= Q`.
    pub fn from_canonical(value: u64) -> Option<Self> {
        (value < MODULUS).then_some(FieldElement(value))
    }

    /// Maps a signed integer to its residue; negatives wrap to `Q - |v|`.
    pub fn from_i64(value: i64) -> Self {
        if value >= 0 {
            Self::new(value as u64)
        } else {
            -Self::new(value.unsigned_abs())
        }
    }

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Interprets the element as a signed integer in `(-Q/2, Q/2]`.
    pub fn to_signed(self) -> i64 {
        if self.0 > MODULUS / 2 {
            -((MODULUS - self.0) as i64)
        } else {
            self.0 as i64
        }
    }

    /// Uniform sample from `[0, Q)` by rejection on 61-bit draws.
    #[inline]
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        loop {
            let v = rng.next_u64() >> 3;
            if v < MODULUS {
                return FieldElement(v);
            }
        }
    }

    pub fn bit(self, i: usize) -> bool {
        (self.0 >> i) & 1 == 1
    }

    pub fn pow(self, mut exp: u64) -> Self {
        let mut base = self;
        let mut acc = FieldElement::ONE;
        while exp > 0 {
            if exp & 1 == 1 {
                acc *= base;
            }
            base *= base;
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat; `None` for zero.
    pub fn inverse(self) -> Option<Self> {
        (!self.is_zero()).then(|| self.pow(MODULUS - 2))
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fq({})", self.0)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for FieldElement {
    fn from(v: u64) -> Self {
        Self::new(v)
    }
}

impl From<u32> for FieldElement {
    fn from(v: u32) -> Self {
        FieldElement(v as u64)
    }
}

impl From<bool> for FieldElement {
    fn from(b: bool) -> Self {
        FieldElement(b as u64)
    }
}

impl Add for FieldElement {
    type Output = Self;
    #[inline(always)]
    fn add(self, rhs: Self) -> Self {
        let s = self.0 + rhs.0;
        FieldElement(if s >= MODULUS { s - MODULUS } else { s })
    }
}

impl Sub for FieldElement {
    type Output = Self;
    #[inline(always)]
    fn sub(self, rhs: Self) -> Self {
        FieldElement(if self.0 >= rhs.0 {
            self.0 - rhs.0
        } else {
            self.0 + MODULUS - rhs.0
        })
    }
}

impl Neg for FieldElement {
    type Output = Self;
    #[inline(always)]
    fn neg(self) -> Self {
        FieldElement(if self.0 == 0 { 0 } else { MODULUS - self.0 })
    }
}

impl Mul for FieldElement {
    type Output = Self;
    #[inline(always)]
    fn mul(self, rhs: Self) -> Self {
        let p = self.0 as u128 * rhs.0 as u128;
        let lo = (p as u64) & MODULUS;
        let hi = (p >> 61) as u64;
        FieldElement(fold(lo + hi))
    }
}

impl AddAssign for FieldElement {
    #[inline(always)]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for FieldElement {
    #[inline(always)]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl MulAssign for FieldElement {
    #[inline(always)]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl Sum for FieldElement {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(FieldElement::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a FieldElement> for FieldElement {
    fn sum<I: Iterator<Item = &'a FieldElement>>(iter: I) -> Self {
        iter.copied().sum()
    }
}
