//! Exact dyadic rationals: integer numerator over a power-of-two denominator.
//!
//! All exact probabilities and influences in this crate are dyadic, so
//! identities like the restriction gain identity can be checked with `==`
//! instead of tolerances.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;

/// A nonnegative dyadic rational `num / 2^log_den`, kept normalized
/// (numerator odd unless zero).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dyadic {
    num: u128,
    log_den: u32,
}

impl Dyadic {
    pub const ZERO: Dyadic = Dyadic { num: 0, log_den: 0 };
    pub const ONE: Dyadic = Dyadic { num: 1, log_den: 0 };

    pub fn new(num: u128, log_den: u32) -> Dyadic {
        let mut d = Dyadic { num, log_den };
        d.normalize();
        d
    }

    /// `count / 2^log_den`, the usual shape for truth-table tallies.
    pub fn from_count(count: u64, log_den: u32) -> Dyadic {
        Dyadic::new(count as u128, log_den)
    }

    pub fn from_int(n: u64) -> Dyadic {
        Dyadic::new(n as u128, 0)
    }

    fn normalize(&mut self) {
        if self.num == 0 {
            self.log_den = 0;
            return;
        }
        while self.num & 1 == 0 && self.log_den > 0 {
            self.num >>= 1;
            self.log_den -= 1;
        }
    }

    pub fn numerator(&self) -> u128 {
        self.num
    }

    pub fn log_denominator(&self) -> u32 {
        self.log_den
    }

    /// Denominator as an integer. Panics if it does not fit in `u128`.
    pub fn denominator(&self) -> u128 {
        assert!(self.log_den < 128, "denominator overflow");
        1u128 << self.log_den
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn add(&self, other: &Dyadic) -> Dyadic {
        let ld = self.log_den.max(other.log_den);
        let a = self.num << (ld - self.log_den);
        let b = other.num << (ld - other.log_den);
        Dyadic::new(a + b, ld)
    }

    /// `self - other`, or `None` if the result would be negative.
    pub fn checked_sub(&self, other: &Dyadic) -> Option<Dyadic> {
        let ld = self.log_den.max(other.log_den);
        let a = self.num << (ld - self.log_den);
        let b = other.num << (ld - other.log_den);
        a.checked_sub(b).map(|n| Dyadic::new(n, ld))
    }

    pub fn mul(&self, other: &Dyadic) -> Dyadic {
        Dyadic::new(self.num * other.num, self.log_den + other.log_den)
    }

    pub fn div_pow2(&self, k: u32) -> Dyadic {
        Dyadic::new(self.num, self.log_den + k)
    }

    pub fn half(&self) -> Dyadic {
        self.div_pow2(1)
    }

    /// Exact for numerators below 2^53, which covers every value this crate
    /// produces (truth tables are capped at arity 24).
    pub fn to_f64(&self) -> f64 {
        self.num as f64 / (self.log_den as f64).exp2()
    }

    /// `self >= threshold` where `threshold` is an `f64`. The comparison is
    /// exact whenever `to_f64` is (small numerators), since `f64` represents
    /// dyadic values exactly.
    pub fn at_least(&self, threshold: f64) -> bool {
        self.to_f64() >= threshold
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Dyadic) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Dyadic) -> Ordering {
        let ld = self.log_den.max(other.log_den);
        let a = self.num << (ld - self.log_den);
        let b = other.num << (ld - other.log_den);
        a.cmp(&b)
    }
}

impl fmt::Debug for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/2^{}", self.num, self.log_den)
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.denominator())
    }
}

impl Serialize for Dyadic {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Dyadic", 2)?;
        st.serialize_field("num", &(self.num as u64))?;
        st.serialize_field("log_den", &self.log_den)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for Dyadic {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Dyadic, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            num: u64,
            log_den: u32,
        }
        let raw = Raw::deserialize(d)?;
        Ok(Dyadic::new(raw.num as u128, raw.log_den))
    }
}
