//! Exact boolean function analysis over bit-packed truth tables.
//!
//! Functions are `f: {0,1}^arity -> {0,1}` with the table stored as a packed
//! bit vector: bit `z` of the table is `f(z)`, where the binary digits of `z`
//! are the input. Coordinates are 1-based in the API; coordinate 1 is the
//! least significant bit of the index.
//!
//! All probabilities and influences are exact dyadic rationals. Iterated-log
//! style constants elsewhere in the crate use log base 2, and so does
//! [`BooleanFunction::influence_sum_check`] (the source material leaves the
//! base unspecified; base 2 is adopted throughout).

use crate::dyadic::Dyadic;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Hard cap on truth table arity: 2^24 bits = 2 MiB per table.
pub const MAX_ARITY: u32 = 24;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BoolFnError {
    #[error("arity {requested} exceeds maximum {max}")]
    ArityOverflow { requested: u32, max: u32 },
    #[error("arity must be at least {min}, got {got}")]
    ArityTooSmall { min: u32, got: u32 },
    #[error("coordinate {coord} out of range for arity {arity}")]
    CoordinateOutOfRange { coord: u32, arity: u32 },
    #[error("coordinate set is not strictly increasing")]
    UnsortedCoordSet,
    #[error("restricting all coordinates leaves no good inputs; callers must special-case")]
    FullRestriction,
    #[error("parameter out of range: {0}")]
    ParameterRange(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, BoolFnError>;

/// Strictly increasing set of 1-based coordinate indices.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct CoordSet {
    members: Vec<u32>,
}

impl CoordSet {
    pub fn new(mut members: Vec<u32>) -> Result<CoordSet> {
        members.sort_unstable();
        members.dedup();
        Ok(CoordSet { members })
    }

    /// Requires the input to already be strictly increasing.
    pub fn from_sorted(members: Vec<u32>) -> Result<CoordSet> {
        if members.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BoolFnError::UnsortedCoordSet);
        }
        Ok(CoordSet { members })
    }

    pub fn empty() -> CoordSet {
        CoordSet {
            members: Vec::new(),
        }
    }

    pub fn singleton(i: u32) -> CoordSet {
        CoordSet { members: vec![i] }
    }

    pub fn members(&self) -> &[u32] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: u32) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    pub fn insert(&mut self, i: u32) {
        if let Err(pos) = self.members.binary_search(&i) {
            self.members.insert(pos, i);
        }
    }

    pub fn union(&self, other: &CoordSet) -> CoordSet {
        let mut out = self.members.clone();
        out.extend_from_slice(&other.members);
        out.sort_unstable();
        out.dedup();
        CoordSet { members: out }
    }

    pub fn check_within(&self, arity: u32) -> Result<()> {
        for &i in &self.members {
            if i == 0 || i > arity {
                return Err(BoolFnError::CoordinateOutOfRange { coord: i, arity });
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.members.iter().copied()
    }
}

impl fmt::Display for CoordSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, m) in self.members.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{m}")?;
        }
        write!(f, "}}")
    }
}

/// Result of fixing coordinates: a smaller function, or a constant once no
/// coordinates remain.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Restriction {
    Constant(bool),
    Function(BooleanFunction),
}

impl Restriction {
    pub fn prob(&self, o: bool) -> Dyadic {
        match self {
            Restriction::Constant(c) => {
                if *c == o {
                    Dyadic::ONE
                } else {
                    Dyadic::ZERO
                }
            }
            Restriction::Function(f) => f.prob(o),
        }
    }

    pub fn unwrap_function(self) -> BooleanFunction {
        match self {
            Restriction::Function(f) => f,
            Restriction::Constant(_) => panic!("expected non-constant restriction"),
        }
    }
}

/// Bit-packed truth table of a boolean function on `arity <= MAX_ARITY` inputs.
#[derive(Clone, PartialEq, Eq)]
pub struct BooleanFunction {
    arity: u32,
    table: Vec<u64>,
}

// Positions j in a word whose index-bit b is zero, for b < 6.
const PAIR_MASKS: [u64; 6] = [
    0x5555_5555_5555_5555,
    0x3333_3333_3333_3333,
    0x0f0f_0f0f_0f0f_0f0f,
    0x00ff_00ff_00ff_00ff,
    0x0000_ffff_0000_ffff,
    0x0000_0000_ffff_ffff,
];

fn word_count(arity: u32) -> usize {
    if arity < 6 {
        1
    } else {
        1usize << (arity - 6)
    }
}

impl BooleanFunction {
    fn check_arity(arity: u32) -> Result<()> {
        if arity == 0 {
            return Err(BoolFnError::ArityTooSmall { min: 1, got: 0 });
        }
        if arity > MAX_ARITY {
            return Err(BoolFnError::ArityOverflow {
                requested: arity,
                max: MAX_ARITY,
            });
        }
        Ok(())
    }

    /// Builds a function by evaluating `f` on every input.
    pub fn from_fn(arity: u32, mut f: impl FnMut(u32) -> bool) -> Result<BooleanFunction> {
        Self::check_arity(arity)?;
        let mut out = BooleanFunction {
            arity,
            table: vec![0; word_count(arity)],
        };
        for z in 0..(1u32 << arity) {
            if f(z) {
                out.set(z, true);
            }
        }
        Ok(out)
    }

    pub fn constant(arity: u32, value: bool) -> Result<BooleanFunction> {
        Self::check_arity(arity)?;
        let mut table = vec![if value { !0u64 } else { 0 }; word_count(arity)];
        if value && arity < 6 {
            table[0] = (1u64 << (1 << arity)) - 1;
        }
        Ok(BooleanFunction { arity, table })
    }

    pub fn arity(&self) -> u32 {
        self.arity
    }

    pub fn size(&self) -> u64 {
        1u64 << self.arity
    }

    pub fn get(&self, z: u32) -> bool {
        debug_assert!((z as u64) < self.size());
        (self.table[(z >> 6) as usize] >> (z & 63)) & 1 == 1
    }

    fn set(&mut self, z: u32, v: bool) {
        let w = (z >> 6) as usize;
        let b = z & 63;
        if v {
            self.table[w] |= 1u64 << b;
        } else {
            self.table[w] &= !(1u64 << b);
        }
    }

    fn ones(&self) -> u64 {
        self.table.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Exact `Pr[f = o]` over a uniform input.
    pub fn prob(&self, o: bool) -> Dyadic {
        let ones = self.ones();
        let count = if o { ones } else { self.size() - ones };
        Dyadic::from_count(count, self.arity)
    }

    /// Exact influence `Pr_z[f(z) != f(z xor e_i)]` of coordinate `i`.
    pub fn influence(&self, i: u32) -> Result<Dyadic> {
        if i == 0 || i > self.arity {
            return Err(BoolFnError::CoordinateOutOfRange {
                coord: i,
                arity: self.arity,
            });
        }
        let b = i - 1;
        let mut pairs = 0u64;
        if b < 6 {
            let shift = 1u32 << b;
            let mask = if self.arity < 6 {
                // keep to valid positions with index-bit b clear
                PAIR_MASKS[b as usize] & ((1u64 << (1 << self.arity)) - 1)
            } else {
                PAIR_MASKS[b as usize]
            };
            for &w in &self.table {
                let x = w ^ (w >> shift);
                pairs += (x & mask).count_ones() as u64;
            }
        } else {
            let off = 1usize << (b - 6);
            for w in 0..self.table.len() {
                if w & off == 0 {
                    pairs += (self.table[w] ^ self.table[w + off]).count_ones() as u64;
                }
            }
        }
        Ok(Dyadic::from_count(pairs, self.arity - 1))
    }

    pub fn influences(&self) -> Vec<Dyadic> {
        (1..=self.arity)
            .map(|i| self.influence(i).expect("in range"))
            .collect()
    }

    /// Fixes coordinate `i` to `b`, renumbering the remaining coordinates in
    /// order. An arity-1 input collapses to an explicit constant.
    pub fn restrict_fix(&self, i: u32, b: bool) -> Result<Restriction> {
        if i == 0 || i > self.arity {
            return Err(BoolFnError::CoordinateOutOfRange {
                coord: i,
                arity: self.arity,
            });
        }
        if self.arity == 1 {
            return Ok(Restriction::Constant(self.get(b as u32)));
        }
        let new_arity = self.arity - 1;
        let low_mask = (1u32 << (i - 1)) - 1;
        let mut out = BooleanFunction {
            arity: new_arity,
            table: vec![0; word_count(new_arity)],
        };
        let fix = (b as u32) << (i - 1);
        for y in 0..(1u32 << new_arity) {
            let z = ((y & !low_mask) << 1) | (y & low_mask) | fix;
            if self.get(z) {
                out.set(y, true);
            }
        }
        Ok(Restriction::Function(out))
    }

    fn combine_toward(a: &BooleanFunction, b: &BooleanFunction, o: bool) -> BooleanFunction {
        debug_assert_eq!(a.arity, b.arity);
        let table = a
            .table
            .iter()
            .zip(&b.table)
            .map(|(&x, &y)| if o { x | y } else { x & y })
            .collect();
        BooleanFunction {
            arity: a.arity,
            table,
        }
    }

    /// Hands coordinates `S` to the bias-maximizing adversary: the result is
    /// `o` on `y` iff some assignment to `S` makes `f` output `o`. This is
    /// pointwise optimal, so its probability of `o` dominates every adversary.
    pub fn restrict_optimal(&self, s: &CoordSet, o: bool) -> Result<BooleanFunction> {
        s.check_within(self.arity)?;
        if s.len() as u32 >= self.arity {
            return Err(BoolFnError::FullRestriction);
        }
        let mut f = self.clone();
        // Descending order keeps the remaining 1-based indices stable.
        for &i in s.members().iter().rev() {
            let f0 = f.restrict_fix(i, false)?.unwrap_function();
            let f1 = f.restrict_fix(i, true)?.unwrap_function();
            f = Self::combine_toward(&f0, &f1, o);
        }
        Ok(f)
    }

    /// True iff the adversary on `S` can force outcome `o` with probability
    /// at least `1 - eps`.
    pub fn can_bias(&self, s: &CoordSet, o: bool, eps: f64) -> Result<bool> {
        Ok(self.restrict_optimal(s, o)?.prob(o).at_least(1.0 - eps))
    }

    /// Checks the heavy-or-average-influence inequality
    /// `sum_i I_i(f) >= gamma * log2(1/theta) / 20` whenever
    /// `gamma <= Pr[f=1] <= 1-gamma` and every influence is at most `theta`.
    pub fn influence_sum_check(&self, gamma: f64, theta: f64) -> Result<InfluenceSumCheck> {
        if !(0.0 < gamma && gamma < 0.5) {
            return Err(BoolFnError::ParameterRange(format!(
                "gamma={gamma} not in (0, 1/2)"
            )));
        }
        if !(0.0 < theta && theta < 0.125) {
            return Err(BoolFnError::ParameterRange(format!(
                "theta={theta} not in (0, 1/8)"
            )));
        }
        let p1 = self.prob(true).to_f64();
        let infl = self.influences();
        let max_inf = infl.iter().map(|d| d.to_f64()).fold(0.0f64, f64::max);
        let applicable = gamma <= p1 && p1 <= 1.0 - gamma && max_inf <= theta;
        let sum = infl.iter().fold(Dyadic::ZERO, |acc, d| acc.add(d));
        let bound = gamma * (1.0 / theta).log2() / 20.0;
        let holds = !applicable || sum.to_f64() >= bound;
        Ok(InfluenceSumCheck {
            applicable,
            holds,
            sum,
        })
    }

    pub fn negated(&self) -> BooleanFunction {
        let mut table: Vec<u64> = self.table.iter().map(|w| !w).collect();
        if self.arity < 6 {
            table[0] &= (1u64 << (1 << self.arity)) - 1;
        }
        BooleanFunction {
            arity: self.arity,
            table,
        }
    }

    // ---- builtin generators ----

    pub fn parity(arity: u32) -> Result<BooleanFunction> {
        Self::from_fn(arity, |z| z.count_ones() % 2 == 1)
    }

    pub fn majority(arity: u32) -> Result<BooleanFunction> {
        if arity.is_multiple_of(2) {
            return Err(BoolFnError::ParameterRange(format!(
                "majority requires odd arity, got {arity}"
            )));
        }
        Self::from_fn(arity, |z| z.count_ones() > arity / 2)
    }

    pub fn dictator(arity: u32, i: u32) -> Result<BooleanFunction> {
        if i == 0 || i > arity {
            return Err(BoolFnError::CoordinateOutOfRange { coord: i, arity });
        }
        Self::from_fn(arity, move |z| (z >> (i - 1)) & 1 == 1)
    }

    pub fn or_fn(arity: u32) -> Result<BooleanFunction> {
        Self::from_fn(arity, |z| z != 0)
    }

    pub fn and_fn(arity: u32) -> Result<BooleanFunction> {
        Self::from_fn(arity, move |z| z == (1u32 << arity) - 1)
    }

    /// OR of `tribe_count` disjoint ANDs of `width` consecutive coordinates.
    pub fn tribes(tribe_count: u32, width: u32) -> Result<BooleanFunction> {
        if tribe_count == 0 || width == 0 {
            return Err(BoolFnError::ParameterRange(
                "tribes needs count, width >= 1".into(),
            ));
        }
        let arity = tribe_count
            .checked_mul(width)
            .ok_or(BoolFnError::ArityOverflow {
                requested: u32::MAX,
                max: MAX_ARITY,
            })?;
        let tribe_mask = (1u32 << width) - 1;
        Self::from_fn(arity, move |z| {
            (0..tribe_count).any(|t| (z >> (t * width)) & tribe_mask == tribe_mask)
        })
    }

    /// Depth-`d` recursive majority of 3; arity `3^d`. Depth 0 is the identity
    /// on one bit.
    pub fn recursive_majority3(depth: u32) -> Result<BooleanFunction> {
        let arity = 3u32.checked_pow(depth).unwrap_or(u32::MAX);
        Self::check_arity(arity)?;
        fn eval(z: u32, depth: u32) -> bool {
            if depth == 0 {
                return z & 1 == 1;
            }
            let block = 3u32.pow(depth - 1);
            let mask = (1u32 << block) - 1;
            let votes = (0..3)
                .filter(|&j| eval((z >> (j * block)) & mask, depth - 1))
                .count();
            votes >= 2
        }
        Self::from_fn(arity, move |z| eval(z, depth))
    }

    /// Random function: each output bit independently 1 with probability
    /// `density`, drawn from ChaCha8 seeded with `seed`, bits in index order.
    pub fn random(arity: u32, density: f64, seed: u64) -> Result<BooleanFunction> {
        if !(0.0..=1.0).contains(&density) {
            return Err(BoolFnError::ParameterRange(format!(
                "density={density} not in [0,1]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_fn(arity, move |_| rng.random_bool(density))
    }

    /// Parses a builtin spec string like `parity:5`, `tribes:4x3`,
    /// `dictator:5:2`, `recmaj3:2`, or `random:12:0.5:42`.
    pub fn from_name(spec: &str) -> Result<BooleanFunction> {
        let parts: Vec<&str> = spec.split(':').collect();
        let bad = || BoolFnError::Parse(format!("bad function spec `{spec}`"));
        let num = |s: &str| s.parse::<u32>().map_err(|_| bad());
        match parts.as_slice() {
            ["parity", n] => Self::parity(num(n)?),
            ["majority", n] => Self::majority(num(n)?),
            ["dictator", n, i] => Self::dictator(num(n)?, num(i)?),
            ["or", n] => Self::or_fn(num(n)?),
            ["and", n] => Self::and_fn(num(n)?),
            ["tribes", dims] => {
                let (c, w) = dims.split_once('x').ok_or_else(bad)?;
                Self::tribes(num(c)?, num(w)?)
            }
            ["recmaj3", d] => Self::recursive_majority3(num(d)?),
            ["random", n, p, seed] => {
                let p: f64 = p.parse().map_err(|_| bad())?;
                let seed: u64 = seed.parse().map_err(|_| bad())?;
                Self::random(num(n)?, p, seed)
            }
            _ => Err(bad()),
        }
    }

    // ---- serialization: `boolfn v1 arity=<n>` + hex, LS nibble first ----

    pub fn to_spec_string(&self) -> String {
        let nibbles = (self.size() as usize).div_ceil(4);
        let mut hex = String::with_capacity(nibbles);
        for j in 0..nibbles {
            let mut nib = 0u8;
            for b in 0..4 {
                let z = (j * 4 + b) as u64;
                if z < self.size() && self.get(z as u32) {
                    nib |= 1 << b;
                }
            }
            hex.push(char::from_digit(nib as u32, 16).unwrap());
        }
        format!("boolfn v1 arity={}\n{}\n", self.arity, hex)
    }

    pub fn from_spec_string(text: &str) -> Result<BooleanFunction> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| BoolFnError::Parse("empty input".into()))?;
        let arity: u32 = header
            .strip_prefix("boolfn v1 arity=")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| BoolFnError::Parse(format!("bad header `{header}`")))?;
        Self::check_arity(arity)?;
        let hex = lines.next().unwrap_or("").trim();
        let expected = (1usize << arity).div_ceil(4);
        if hex.len() != expected {
            return Err(BoolFnError::Parse(format!(
                "expected {expected} hex digits for arity {arity}, got {}",
                hex.len()
            )));
        }
        let mut out = BooleanFunction {
            arity,
            table: vec![0; word_count(arity)],
        };
        for (j, c) in hex.chars().enumerate() {
            let nib = c
                .to_digit(16)
                .ok_or_else(|| BoolFnError::Parse(format!("bad hex digit `{c}`")))?
                as u64;
            for b in 0..4 {
                let z = (j * 4 + b) as u64;
                if z < out.size() && (nib >> b) & 1 == 1 {
                    out.set(z as u32, true);
                }
            }
        }
        Ok(out)
    }
}

impl fmt::Debug for BooleanFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "BooleanFunction(arity={}, ones={})",
            self.arity,
            self.ones()
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InfluenceSumCheck {
    pub applicable: bool,
    pub holds: bool,
    pub sum: Dyadic,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(num: u64, log_den: u32) -> Dyadic {
        Dyadic::from_count(num, log_den)
    }

    #[test]
    fn prob_examples() {
        assert_eq!(BooleanFunction::parity(3).unwrap().prob(true), d(1, 1));
        assert_eq!(
            BooleanFunction::constant(5, false).unwrap().prob(true),
            Dyadic::ZERO
        );
        // brute force over all 16 inputs
        let tribes = BooleanFunction::tribes(2, 2).unwrap();
        let ones = (0..16u32).filter(|&z| tribes.get(z)).count();
        assert_eq!(ones, 7);
        assert_eq!(tribes.prob(true), d(7, 4));
    }

    #[test]
    fn influence_examples() {
        let dict = BooleanFunction::dictator(3, 1).unwrap();
        assert_eq!(dict.influence(1).unwrap(), Dyadic::ONE);
        assert_eq!(dict.influence(2).unwrap(), Dyadic::ZERO);
        let parity = BooleanFunction::parity(7).unwrap();
        for i in 1..=7 {
            assert_eq!(parity.influence(i).unwrap(), Dyadic::ONE);
        }
        let maj = BooleanFunction::majority(3).unwrap();
        for i in 1..=3 {
            assert_eq!(maj.influence(i).unwrap(), d(1, 1));
        }
        assert!(maj.influence(4).is_err());
    }

    #[test]
    fn influence_matches_brute_force_high_coordinate() {
        // exercise the cross-word path (coordinate > 6)
        let f = BooleanFunction::random(9, 0.5, 7).unwrap();
        for i in 1..=9 {
            let flips = (0..512u32)
                .filter(|&z| f.get(z) != f.get(z ^ (1 << (i - 1))))
                .count();
            assert_eq!(f.influence(i).unwrap(), d(flips as u64, 9));
        }
    }

    #[test]
    fn restrict_fix_examples() {
        let or2 = BooleanFunction::or_fn(2).unwrap();
        let r = or2.restrict_fix(1, true).unwrap().unwrap_function();
        assert_eq!(r, BooleanFunction::constant(1, true).unwrap());

        let parity3 = BooleanFunction::parity(3).unwrap();
        let r = parity3.restrict_fix(2, false).unwrap().unwrap_function();
        assert_eq!(r, BooleanFunction::parity(2).unwrap());

        let maj3 = BooleanFunction::majority(3).unwrap();
        let r = maj3.restrict_fix(1, true).unwrap().unwrap_function();
        assert_eq!(r, BooleanFunction::or_fn(2).unwrap());

        let dict1 = BooleanFunction::dictator(1, 1).unwrap();
        assert_eq!(
            dict1.restrict_fix(1, true).unwrap(),
            Restriction::Constant(true)
        );
    }

    #[test]
    fn restrict_optimal_examples() {
        let or3 = BooleanFunction::or_fn(3).unwrap();
        let g = or3.restrict_optimal(&CoordSet::singleton(1), true).unwrap();
        assert_eq!(g, BooleanFunction::constant(2, true).unwrap());

        let parity5 = BooleanFunction::parity(5).unwrap();
        for i in 1..=5 {
            let g = parity5
                .restrict_optimal(&CoordSet::singleton(i), true)
                .unwrap();
            assert_eq!(g.prob(true), Dyadic::ONE);
        }

        let maj3 = BooleanFunction::majority(3).unwrap();
        let g = maj3
            .restrict_optimal(&CoordSet::singleton(1), true)
            .unwrap();
        assert_eq!(g, BooleanFunction::or_fn(2).unwrap());
        assert_eq!(g.prob(true), d(3, 2));
        // 3/4 = 1/2 + (1/2)/2, the gain identity
        let gain = maj3.prob(true).add(&maj3.influence(1).unwrap().half());
        assert_eq!(g.prob(true), gain);

        assert!(matches!(
            maj3.restrict_optimal(&CoordSet::new(vec![1, 2, 3]).unwrap(), true),
            Err(BoolFnError::FullRestriction)
        ));
    }

    #[test]
    fn can_bias_examples() {
        let maj3 = BooleanFunction::majority(3).unwrap();
        assert!(maj3
            .can_bias(&CoordSet::new(vec![1, 2]).unwrap(), true, 0.0)
            .unwrap());
        let dict = BooleanFunction::dictator(2, 1).unwrap();
        assert!(!dict.can_bias(&CoordSet::singleton(2), true, 0.1).unwrap());
        let tribes = BooleanFunction::tribes(2, 2).unwrap();
        assert!(tribes
            .can_bias(&CoordSet::new(vec![1, 2]).unwrap(), true, 0.0)
            .unwrap());
    }

    #[test]
    fn influence_sum_check_examples() {
        let parity4 = BooleanFunction::parity(4).unwrap();
        let chk = parity4.influence_sum_check(0.1, 1.0 / 16.0).unwrap();
        assert!(!chk.applicable);
        assert!(chk.holds);

        let const1 = BooleanFunction::constant(4, true).unwrap();
        let chk = const1.influence_sum_check(0.1, 1.0 / 16.0).unwrap();
        assert!(!chk.applicable);

        assert!(parity4.influence_sum_check(0.6, 0.01).is_err());
        assert!(parity4.influence_sum_check(0.1, 0.5).is_err());
    }

    #[test]
    fn builtin_examples() {
        let maj3 = BooleanFunction::majority(3).unwrap();
        assert!(maj3.get(0b011));
        let tribes = BooleanFunction::tribes(2, 2).unwrap();
        assert!(!tribes.get(0b0000));
        assert!(tribes.get(0b0011));
        let recmaj = BooleanFunction::recursive_majority3(2).unwrap();
        assert_eq!(recmaj.arity(), 9);
        assert_eq!(recmaj.prob(true), d(1, 1));
        assert!(BooleanFunction::majority(4).is_err());
        assert!(BooleanFunction::from_fn(MAX_ARITY + 1, |_| false).is_err());
    }

    #[test]
    fn random_is_reproducible() {
        let a = BooleanFunction::random(10, 0.5, 42).unwrap();
        let b = BooleanFunction::random(10, 0.5, 42).unwrap();
        assert_eq!(a, b);
        let p = a.prob(true).to_f64();
        assert!((0.4..=0.6).contains(&p), "density far off: {p}");
    }

    #[test]
    fn name_parsing() {
        assert_eq!(
            BooleanFunction::from_name("parity:5").unwrap(),
            BooleanFunction::parity(5).unwrap()
        );
        assert_eq!(
            BooleanFunction::from_name("tribes:4x3").unwrap(),
            BooleanFunction::tribes(4, 3).unwrap()
        );
        assert_eq!(
            BooleanFunction::from_name("random:12:0.5:42").unwrap(),
            BooleanFunction::random(12, 0.5, 42).unwrap()
        );
        assert!(BooleanFunction::from_name("nope:3").is_err());
    }

    #[test]
    fn spec_string_round_trip() {
        for spec in [
            "parity:5",
            "majority:3",
            "tribes:2x2",
            "random:7:0.3:9",
            "dictator:1:1",
        ] {
            let f = BooleanFunction::from_name(spec).unwrap();
            let text = f.to_spec_string();
            let g = BooleanFunction::from_spec_string(&text).unwrap();
            assert_eq!(f, g, "round trip failed for {spec}");
        }
        // pinned encoding: parity(2) has table 0110 -> nibble 0b0110 = 6
        let parity2 = BooleanFunction::parity(2).unwrap();
        assert_eq!(parity2.to_spec_string(), "boolfn v1 arity=2\n6\n");
    }
}
