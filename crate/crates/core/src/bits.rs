//! Short bitstrings packed into a `u64`.
//!
//! Every encoded word, prefix and segment suffix in the simulator is at most
//! [`MAX_BITS`] long, so a right-aligned integer plus a length is enough. Bit 0
//! is the first (most significant) bit of the string.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Longest representable bitstring.
pub const MAX_BITS: usize = 64;

/// A bitstring of length at most [`MAX_BITS`].
///
/// Ordering is by length, then lexicographically; for strings of equal length
/// this is the lexicographic order of the bits.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString {
    len: u8,
    value: u64,
}

fn mask(len: usize) -> u64 {
    if len >= 64 {
        u64::MAX
    } else {
        (1u64 << len) - 1
    }
}

impl BitString {
    pub const fn empty() -> Self {
        Self { len: 0, value: 0 }
    }

    /// The `len` low bits of `value`, most significant first.
    pub fn from_value(value: u64, len: usize) -> Result<Self> {
        if len > MAX_BITS {
            return Err(Error::BitLength { len, max: MAX_BITS });
        }
        Ok(Self {
            len: len as u8,
            value: value & mask(len),
        })
    }

    /// All-zero string of the given length.
    pub fn zeros(len: usize) -> Result<Self> {
        Self::from_value(0, len)
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Integer value of the bits read as an unsigned big-endian number.
    pub fn value(&self) -> u64 {
        self.value
    }

    /// Bit `i`, counting from the start of the string.
    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len(), "bit index {i} out of range for length {}", self.len);
        (self.value >> (self.len() - 1 - i)) & 1 == 1
    }

    /// First `j` bits. Panics if `j > len`.
    pub fn prefix(&self, j: usize) -> Self {
        assert!(j <= self.len(), "prefix {j} longer than string of length {}", self.len);
        if j == 0 {
            return Self::empty();
        }
        Self {
            len: j as u8,
            value: self.value >> (self.len() - j),
        }
    }

    /// Bits `[start, start + len)` as their own string.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.len(), "slice out of range");
        let shifted = self.prefix(start + len);
        Self {
            len: len as u8,
            value: shifted.value & mask(len),
        }
    }

    pub fn is_prefix_of(&self, other: &BitString) -> bool {
        self.len <= other.len && other.prefix(self.len()) == *self
    }

    /// Concatenation of `self` and `tail`.
    pub fn concat(&self, tail: &BitString) -> Result<Self> {
        let len = self.len() + tail.len();
        if len > MAX_BITS {
            return Err(Error::BitLength { len, max: MAX_BITS });
        }
        let value = if tail.len() == 64 {
            tail.value
        } else {
            (self.value << tail.len()) | tail.value
        };
        Ok(Self {
            len: len as u8,
            value,
        })
    }

    pub fn push(&mut self, bit: bool) -> Result<()> {
        *self = self.concat(&BitString::from_value(bit as u64, 1)?)?;
        Ok(())
    }

    /// Extends with zero bits up to `len`.
    pub fn pad_to(&self, len: usize) -> Result<Self> {
        if len < self.len() {
            return Err(Error::BitLength { len: self.len(), max: len });
        }
        self.concat(&BitString::zeros(len - self.len())?)
    }

    /// True if every bit from position `start` on is zero.
    pub fn is_zero_from(&self, start: usize) -> bool {
        start >= self.len() || self.value & mask(self.len() - start) == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len()).map(move |i| self.bit(i))
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString(\"{self}\")")
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = BitString::empty();
        for c in s.chars() {
            match c {
                '0' => out.push(false)?,
                '1' => out.push(true)?,
                _ => return Err(Error::Parse(format!("invalid bit character {c:?} in {s:?}"))),
            }
        }
        Ok(out)
    }
}
