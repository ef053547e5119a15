//! Bit-packed sign patterns and subset masks.
//!
//! A pattern `x ∈ {-1,+1}^n` is stored one bit per coordinate, LSB-first:
//! bit `i % 64` of word `i / 64` holds coordinate `i`, with bit 1 meaning +1
//! and bit 0 meaning -1. Subsets `S ⊆ [n]` use the same layout, bit 1 meaning
//! membership. With that layout the parity is
//!
//! ```text
//! x^S = prod_{i in S} x_i = (-1)^popcount(!bits & mask)
//! ```
//!
//! because the factors equal to -1 are exactly the members of `S` whose bit is 0.
//! Bits at positions `>= n` are always zero in both types.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub(crate) fn word_count(n: usize) -> usize {
    n.div_ceil(64)
}

fn tail_mask(n: usize) -> u64 {
    match n % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

fn check_index(n: usize, i: usize) -> Result<()> {
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, n });
    }
    Ok(())
}

/// A point of the hypercube `{-1,+1}^n`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitPattern {
    n: usize,
    words: Vec<u64>,
}

impl BitPattern {
    /// The all-(-1) pattern.
    pub fn negative(n: usize) -> Self {
        BitPattern { n, words: vec![0; word_count(n)] }
    }

    /// The all-(+1) pattern.
    pub fn positive(n: usize) -> Self {
        let mut words = vec![u64::MAX; word_count(n)];
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(n);
        }
        BitPattern { n, words }
    }

    /// Builds a pattern from signs; any positive value maps to +1, anything else to -1.
    pub fn from_signs<T: Copy + Into<f64>>(signs: &[T]) -> Self {
        let mut p = Self::negative(signs.len());
        for (i, &s) in signs.iter().enumerate() {
            if s.into() > 0.0 {
                p.words[i / 64] |= 1 << (i % 64);
            }
        }
        p
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut p = Self::negative(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                p.words[i / 64] |= 1 << (i % 64);
            }
        }
        p
    }

    /// Pattern whose bit `i` is bit `i` of `index` (the exact-table ordering).
    pub fn from_index(n: usize, index: u64) -> Self {
        assert!(n <= 64, "from_index supports n <= 64");
        let mut p = Self::negative(n);
        if n > 0 {
            p.words[0] = index & tail_mask(n);
        }
        p
    }

    /// Decodes `ceil(n/8)` LSB-first bytes. Unused trailing bits must be zero.
    pub fn from_bytes(n: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != n.div_ceil(8) {
            return Err(Error::Format(format!(
                "pattern of dimension {n} needs {} bytes, got {}",
                n.div_ceil(8),
                bytes.len()
            )));
        }
        let mut p = Self::negative(n);
        for (k, &b) in bytes.iter().enumerate() {
            p.words[k / 8] |= (b as u64) << (8 * (k % 8));
        }
        if let Some(last) = p.words.last() {
            if last & !tail_mask(n) != 0 {
                return Err(Error::Format("pattern has bits set beyond its dimension".into()));
            }
        }
        Ok(p)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        (0..self.n.div_ceil(8))
            .map(|k| (self.words[k / 8] >> (8 * (k % 8))) as u8)
            .collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// The sign of coordinate `i`, as +1 or -1.
    pub fn sign(&self, i: usize) -> i8 {
        if self.bit(i) {
            1
        } else {
            -1
        }
    }

    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < self.n);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, positive: bool) {
        debug_assert!(i < self.n);
        if positive {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn flip(&mut self, i: usize) {
        debug_assert!(i < self.n);
        self.words[i / 64] ^= 1 << (i % 64);
    }

    pub fn flipped(&self, i: usize) -> Self {
        let mut p = self.clone();
        p.flip(i);
        p
    }

    pub fn signs(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.sign(i) as f64).collect()
    }

    /// `x^S`, or an error when the dimensions differ.
    pub fn parity(&self, s: &SubsetMask) -> Result<i8> {
        if self.n != s.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: s.n });
        }
        Ok(self.parity_unchecked(s))
    }

    /// `x^S` without the dimension check. Callers guarantee `self.n() == s.n()`.
    #[inline]
    pub fn parity_unchecked(&self, s: &SubsetMask) -> i8 {
        let odd = self
            .words
            .iter()
            .zip(&s.words)
            .fold(0u32, |acc, (&x, &m)| acc ^ (!x & m).count_ones())
            & 1;
        1 - 2 * odd as i8
    }

    /// Copies the coordinates selected by `mask` from `other`, keeping the rest.
    pub fn splice(&mut self, other: &BitPattern, mask: &SubsetMask) {
        for ((w, &o), &m) in self.words.iter_mut().zip(&other.words).zip(&mask.words) {
            *w = (*w & !m) | (o & m);
        }
    }

    /// Key equal for two patterns iff they agree on every coordinate in `mask`.
    /// Keys order lexicographically by coordinate index, with -1 before +1.
    pub fn restricted_key(&self, mask: &SubsetMask) -> Vec<u64> {
        self.words
            .iter()
            .zip(&mask.words)
            .map(|(&x, &m)| (x & m).reverse_bits())
            .collect()
    }
}

impl fmt::Debug for BitPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitPattern({self})")
    }
}

/// `+` for +1 and `-` for -1, coordinate 0 first.
impl fmt::Display for BitPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            f.write_str(if self.bit(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = parse_bit_string(s)?;
        Ok(Self::from_bools(&bits))
    }
}

/// A subset `S ⊆ [n]`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SubsetMask {
    n: usize,
    words: Vec<u64>,
}

impl SubsetMask {
    pub fn empty(n: usize) -> Self {
        SubsetMask { n, words: vec![0; word_count(n)] }
    }

    pub fn full(n: usize) -> Self {
        let p = BitPattern::positive(n);
        SubsetMask { n, words: p.words }
    }

    /// `{0, .., k-1}`.
    pub fn prefix(n: usize, k: usize) -> Self {
        let mut m = Self::empty(n);
        for i in 0..k.min(n) {
            m.insert(i);
        }
        m
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut m = Self::empty(n);
        for &i in indices {
            check_index(n, i)?;
            m.insert(i);
        }
        Ok(m)
    }

    /// Mask whose bit `i` is bit `i` of `index` (the exact-table ordering).
    pub fn from_index(n: usize, index: u64) -> Self {
        let p = BitPattern::from_index(n, index);
        SubsetMask { n, words: p.words }
    }

    /// The table position of this mask; only meaningful for `n <= 64`.
    pub fn to_index(&self) -> u64 {
        self.words.first().copied().unwrap_or(0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.n && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.n, "index {i} out of range for dimension {}", self.n);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        if i < self.n {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn with(&self, i: usize) -> Self {
        let mut m = self.clone();
        m.insert(i);
        m
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(k, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let t = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(64 * k + t)
            })
        })
    }

    pub fn indices(&self) -> Vec<usize> {
        self.iter().collect()
    }

    pub fn is_subset_of(&self, other: &SubsetMask) -> bool {
        self.n == other.n && self.words.iter().zip(&other.words).all(|(&a, &b)| a & !b == 0)
    }

    pub fn union(&self, other: &SubsetMask) -> Self {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &SubsetMask) -> Self {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn difference(&self, other: &SubsetMask) -> Self {
        self.zip_with(other, |a, b| a & !b)
    }

    pub fn symmetric_difference(&self, other: &SubsetMask) -> Self {
        self.zip_with(other, |a, b| a ^ b)
    }

    pub fn complement(&self) -> Self {
        SubsetMask::full(self.n).difference(self)
    }

    fn zip_with(&self, other: &SubsetMask, op: impl Fn(u64, u64) -> u64) -> Self {
        assert_eq!(self.n, other.n, "mask dimension mismatch");
        SubsetMask {
            n: self.n,
            words: self.words.iter().zip(&other.words).map(|(&a, &b)| op(a, b)).collect(),
        }
    }

    /// Orders by cardinality, then lexicographically on the sorted member list.
    pub fn cmp_minimal(&self, other: &SubsetMask) -> Ordering {
        self.len().cmp(&other.len()).then_with(|| self.iter().cmp(other.iter()))
    }
}

impl fmt::Debug for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// Bit string with character `i` for variable `i`.
impl fmt::Display for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            f.write_str(if self.contains(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for SubsetMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = parse_bit_string(s)?;
        let p = BitPattern::from_bools(&bits);
        Ok(SubsetMask { n: p.n, words: p.words })
    }
}

fn parse_bit_string(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Format(format!("invalid bit character {other:?}"))),
        })
        .collect()
}

impl Serialize for SubsetMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SubsetMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

impl Serialize for BitPattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitPattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Free-function form of [`BitPattern::parity`].
pub fn parity(pattern: &BitPattern, s: &SubsetMask) -> Result<i8> {
    pattern.parity(s)
}
