//! Fixed-width bitstrings packed into a machine word.
//!
//! Position `i` of a string is bit `i` of [`BitString::value`]. The textual
//! form lists position 0 first, so `"10"` has `v_0 = 1, v_1 = 0`. When a
//! string labels a register, position `i` is qubit `i` of that register.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Longest supported string.
pub const MAX_BITS: usize = 64;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct BitString {
    value: u64,
    len: u8,
}

fn mask_for(len: usize) -> u64 {
    if len >= 64 {
        u64::MAX
    } else {
        (1u64 << len) - 1
    }
}

impl BitString {
    /// Builds a string of width `len`; bits of `value` above `len` are dropped.
    pub fn new(value: u64, len: usize) -> Self {
        assert!(len <= MAX_BITS, "bitstring width {len} exceeds {MAX_BITS}");
        Self {
            value: value & mask_for(len),
            len: len as u8,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(0, len)
    }

    pub fn ones(len: usize) -> Self {
        Self::new(u64::MAX, len)
    }

    pub fn empty() -> Self {
        Self::new(0, 0)
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut value = 0u64;
        for (i, &b) in bits.iter().enumerate() {
            if b {
                value |= 1 << i;
            }
        }
        Self::new(value, bits.len())
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self::new(rng.gen::<u64>(), len)
    }

    /// Uniform string of width `len` with exactly `weight` ones.
    pub fn random_with_weight<R: Rng + ?Sized>(len: usize, weight: usize, rng: &mut R) -> Self {
        assert!(weight <= len);
        let mut positions: Vec<usize> = (0..len).collect();
        let mut value = 0u64;
        for k in 0..weight {
            let j = rng.gen_range(k..len);
            positions.swap(k, j);
            value |= 1 << positions[k];
        }
        Self::new(value, len)
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len(), "bit index {i} out of range for width {}", self.len);
        (self.value >> i) & 1 == 1
    }

    pub fn with_bit(mut self, i: usize, bit: bool) -> Self {
        assert!(i < self.len());
        if bit {
            self.value |= 1 << i;
        } else {
            self.value &= !(1 << i);
        }
        self
    }

    pub fn weight(&self) -> usize {
        self.value.count_ones() as usize
    }

    /// Inner product over GF(2).
    pub fn dot(&self, other: &Self) -> bool {
        self.check_len(other);
        (self.value & other.value).count_ones() % 2 == 1
    }

    pub fn xor(&self, other: &Self) -> Self {
        self.check_len(other);
        Self::new(self.value ^ other.value, self.len())
    }

    /// Entrywise product.
    pub fn and(&self, other: &Self) -> Self {
        self.check_len(other);
        Self::new(self.value & other.value, self.len())
    }

    pub fn or(&self, other: &Self) -> Self {
        self.check_len(other);
        Self::new(self.value | other.value, self.len())
    }

    pub fn not(&self) -> Self {
        Self::new(!self.value, self.len())
    }

    /// `self` in the low positions, `high` after it.
    pub fn concat(&self, high: &Self) -> Self {
        Self::new(self.value | (high.value << self.len), self.len() + high.len())
    }

    /// Positions `start..start+len`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.len(), "slice out of range");
        Self::new(self.value >> start, len)
    }

    pub fn split(&self, at: usize) -> (Self, Self) {
        (self.slice(0, at), self.slice(at, self.len() - at))
    }

    pub fn ones_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.get(i))
    }

    /// All strings of width `len` in increasing numeric order.
    pub fn all(len: usize) -> impl Iterator<Item = BitString> {
        assert!(len < 32, "refusing to enumerate 2^{len} strings");
        (0..(1u64 << len)).map(move |v| BitString::new(v, len))
    }

    /// Lowercase hex of the packed value, `ceil(len/4)` digits.
    pub fn to_hex(&self) -> String {
        let digits = self.len().div_ceil(4).max(1);
        format!("{:0width$x}", self.value, width = digits)
    }

    pub fn from_hex(hex: &str, len: usize) -> Result<Self, Error> {
        let value = u64::from_str_radix(hex, 16)
            .map_err(|e| Error::Parse(format!("bad hex bitstring {hex:?}: {e}")))?;
        if len < 64 && value >> len != 0 {
            return Err(Error::Parse(format!("hex {hex} does not fit in {len} bits")));
        }
        Ok(Self::new(value, len))
    }

    fn check_len(&self, other: &Self) {
        assert_eq!(self.len, other.len, "bitstring width mismatch");
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len() {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({self})")
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() > MAX_BITS {
            return Err(Error::Parse(format!("bitstring longer than {MAX_BITS}")));
        }
        let mut bits = Vec::with_capacity(s.len());
        for ch in s.chars() {
            match ch {
                '0' => bits.push(false),
                '1' => bits.push(true),
                _ => return Err(Error::Parse(format!("invalid bit {ch:?} in {s:?}"))),
            }
        }
        Ok(Self::from_bits(&bits))
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn text_lists_position_zero_first() {
        let b: BitString = "10".parse().unwrap();
        assert!(b.get(0));
        assert!(!b.get(1));
        assert_eq!(b.value(), 1);
        assert_eq!(b.to_string(), "10");
    }

    #[test]
    fn concat_and_split_round_trip() {
        let lo: BitString = "101".parse().unwrap();
        let hi: BitString = "0011".parse().unwrap();
        let both = lo.concat(&hi);
        assert_eq!(both.to_string(), "1010011");
        assert_eq!(both.split(3), (lo, hi));
    }

    #[test]
    fn hex_round_trip() {
        let b = BitString::new(0b1_0110, 5);
        assert_eq!(b.to_hex(), "16");
        assert_eq!(BitString::from_hex("16", 5).unwrap(), b);
        assert!(BitString::from_hex("ff", 5).is_err());
    }

    #[test]
    fn fixed_weight_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert_eq!(BitString::random_with_weight(6, 3, &mut rng).weight(), 3);
        }
    }

    proptest! {
        #[test]
        fn dot_is_bilinear(a in 0u64..256, b in 0u64..256, c in 0u64..256) {
            let (a, b, c) = (BitString::new(a, 8), BitString::new(b, 8), BitString::new(c, 8));
            prop_assert_eq!(a.xor(&b).dot(&c), a.dot(&c) ^ b.dot(&c));
        }

        #[test]
        fn display_parse_round_trip(v in any::<u64>(), len in 0usize..=64) {
            let b = BitString::new(v, len);
            prop_assert_eq!(b.to_string().parse::<BitString>().unwrap(), b);
        }
    }
}
