//! Bit-level helpers: a fixed-length history shift register and a packed
//! little-endian bit stream used by the hint file format.

use std::fmt;

/// Fixed-length shift register of branch outcomes.
///
/// Bit 0 is the most recent outcome; `1` means taken. Pushing shifts every
/// bit one position towards the oldest end and drops the oldest bit.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct ShiftRegister {
    len: usize,
    words: Vec<u64>,
}

impl ShiftRegister {
    pub fn new(len: usize) -> Self {
        Self { len, words: vec![0; len.div_ceil(64)] }
    }

    /// Builds a register from bits listed most-recent first.
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut reg = Self::new(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                reg.words[i / 64] |= 1 << (i % 64);
            }
        }
        reg
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, taken: bool) {
        if self.len == 0 {
            return;
        }
        let mut carry = taken as u64;
        for w in &mut self.words {
            let out = *w >> 63;
            *w = (*w << 1) | carry;
            carry = out;
        }
        let tail = self.len % 64;
        if tail != 0 {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << tail) - 1;
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn clear(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Reads `width` (≤ 64) bits starting at `start`; bits past the end read as 0.
    pub fn bits(&self, start: usize, width: usize) -> u64 {
        debug_assert!(width <= 64);
        if width == 0 || start >= self.len {
            return 0;
        }
        let width = width.min(self.len - start);
        let (wi, off) = (start / 64, start % 64);
        let mut v = self.words[wi] >> off;
        if off != 0 && wi + 1 < self.words.len() {
            v |= self.words[wi + 1] << (64 - off);
        }
        if width < 64 {
            v &= (1u64 << width) - 1;
        }
        v
    }

    /// XOR-folds the `take` most recent bits into a `width`-bit value.
    pub fn fold(&self, take: usize, width: usize) -> u64 {
        if width == 0 {
            return 0;
        }
        let take = take.min(self.len);
        let mut acc = 0u64;
        let mut start = 0;
        while start < take {
            let w = width.min(take - start);
            acc ^= self.bits(start, w);
            start += width;
        }
        acc
    }

    /// Raw storage words, least significant bit = most recent outcome.
    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

impl fmt::Debug for ShiftRegister {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.iter().map(|b| if b { '1' } else { '0' }).collect();
        write!(f, "ShiftRegister({s})")
    }
}

/// `⌈log₂(n)⌉`, with `ceil_log2(0) = ceil_log2(1) = 0`.
pub fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Appends fields LSB-first into a byte buffer.
#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        debug_assert!(width == 64 || value >> width == 0, "value wider than field");
        for i in 0..width {
            let byte = (self.bit_len / 8) as usize;
            if byte == self.bytes.len() {
                self.bytes.push(0);
            }
            if (value >> i) & 1 == 1 {
                self.bytes[byte] |= 1 << (self.bit_len % 8);
            }
            self.bit_len += 1;
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.bit_len
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// Reads fields written by [`BitWriter`].
#[derive(Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Returns `None` when the stream runs out.
    pub fn read(&mut self, width: u32) -> Option<u64> {
        if self.pos + width as u64 > self.bytes.len() as u64 * 8 {
            return None;
        }
        let mut v = 0u64;
        for i in 0..width {
            let byte = self.bytes[(self.pos / 8) as usize];
            if (byte >> (self.pos % 8)) & 1 == 1 {
                v |= 1 << i;
            }
            self.pos += 1;
        }
        Some(v)
    }

    pub fn position(&self) -> u64 {
        self.pos
    }
}
