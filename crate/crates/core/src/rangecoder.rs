//! Integer range coder over 16-bit cumulative frequency tables.
//!
//! The coder is the carry-propagating variant with a 32-bit range and a
//! byte cache, so every operation is fixed-width integer arithmetic and the
//! output is bit-exact across platforms. The stream is finished with the
//! shortest tail that still pins the final interval, and trailing zero
//! bytes are dropped; the decoder reads zeros past the end.

use crate::error::{Error, Result};

pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;
const TOP: u32 = 1 << 24;

/// Quantised CDF for one channel: `n` regular symbols covering the integer
/// values `offset .. offset + n`, plus an escape symbol at index `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    pub offset: i32,
    /// Cumulative frequencies, `n + 2` entries from 0 to `TOTAL`.
    pub cdf: Vec<u32>,
}

impl CdfTable {
    /// Builds a table from probabilities of the regular symbols; whatever
    /// mass they leave over goes to the escape symbol. Every symbol gets a
    /// frequency of at least one.
    pub fn from_pmf(offset: i32, pmf: &[f64]) -> Result<Self> {
        let n = pmf.len();
        if n + 1 > TOTAL as usize / 2 {
            return Err(Error::Bitstream(format!("table with {n} symbols exceeds precision")));
        }
        if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Bitstream("pmf entries must be finite and non-negative".into()));
        }
        let covered: f64 = pmf.iter().sum();
        let escape = (1.0 - covered).max(0.0);
        let probs: Vec<f64> = pmf.iter().copied().chain(std::iter::once(escape)).collect();
        let norm: f64 = probs.iter().sum();
        let mut freq: Vec<u32> = probs
            .iter()
            .map(|p| ((p / norm) * TOTAL as f64).round().max(1.0) as u32)
            .collect();
        let mut sum: i64 = freq.iter().map(|&f| f as i64).sum();
        // Settle the rounding error on the largest entries.
        while sum != TOTAL as i64 {
            let (i, _) = freq
                .iter()
                .enumerate()
                .max_by_key(|(i, f)| (**f, usize::MAX - i))
                .expect("non-empty");
            if sum > TOTAL as i64 {
                let cut = (sum - TOTAL as i64).min(freq[i] as i64 - 1);
                if cut == 0 {
                    return Err(Error::Bitstream("cannot normalise frequency table".into()));
                }
                freq[i] -= cut as u32;
                sum -= cut;
            } else {
                freq[i] += (TOTAL as i64 - sum) as u32;
                sum = TOTAL as i64;
            }
        }
        let mut cdf = Vec::with_capacity(n + 2);
        cdf.push(0);
        let mut acc = 0;
        for f in freq {
            acc += f;
            cdf.push(acc);
        }
        Ok(Self { offset, cdf })
    }

    /// Number of regular symbols.
    pub fn symbols(&self) -> usize {
        self.cdf.len() - 2
    }

    pub fn escape_index(&self) -> usize {
        self.symbols()
    }

    /// Table index of `value`, or `None` when it needs escaping.
    pub fn index_of(&self, value: i32) -> Option<usize> {
        let idx = value as i64 - self.offset as i64;
        (0..self.symbols() as i64).contains(&idx).then_some(idx as usize)
    }

    pub fn frequency(&self, index: usize) -> u32 {
        self.cdf[index + 1] - self.cdf[index]
    }

    /// Ideal code length of `value` under the table, including the 32 raw
    /// bits an escaped value costs.
    pub fn cost_bits(&self, value: i32) -> f64 {
        match self.index_of(value) {
            Some(i) => PRECISION as f64 - (self.frequency(i) as f64).log2(),
            None => {
                PRECISION as f64 - (self.frequency(self.escape_index()) as f64).log2() + 32.0
            }
        }
    }

    fn locate(&self, target: u32) -> usize {
        // Largest index with cdf[index] <= target.
        self.cdf.partition_point(|&c| c <= target) - 1
    }
}

#[derive(Debug, Default)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    /// Codes the sub-interval `[start, start + size)` of `TOTAL`.
    pub fn encode(&mut self, start: u32, size: u32) {
        debug_assert!(size > 0 && start + size <= TOTAL);
        let r = self.range >> PRECISION;
        self.low += r as u64 * start as u64;
        self.range = r * size;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode_symbol(&mut self, table: &CdfTable, index: usize) {
        self.encode(table.cdf[index], table.frequency(index));
    }

    /// Writes `value` as two uniform 16-bit symbols.
    pub fn encode_raw32(&mut self, value: u32) {
        self.encode(value >> 16, 1);
        self.encode(value & 0xFFFF, 1);
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Finishes the stream and returns `(payload, bit_length)`.
    pub fn finish(mut self) -> (Vec<u8>, u64) {
        // Pick the point of [low, low + range) with the most trailing zero
        // bits, so the zero padding the decoder assumes lands inside it.
        let hi = self.low + self.range as u64 - 1;
        for k in (0..=32).rev() {
            let mask = (1u64 << k) - 1;
            let v = (self.low + mask) & !mask;
            if v <= hi {
                self.low = v;
                break;
            }
        }
        for _ in 0..5 {
            self.shift_low();
        }
        let mut bytes = self.out;
        // The first byte is always the initial empty cache.
        debug_assert_eq!(bytes[0], 0);
        bytes.remove(0);
        while bytes.last() == Some(&0) {
            bytes.pop();
        }
        let bit_length = match bytes.last() {
            Some(&b) => 8 * bytes.len() as u64 - b.trailing_zeros() as u64,
            None => 0,
        };
        (bytes, bit_length)
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        let mut d = Self {
            code: 0,
            range: u32::MAX,
            input,
            pos: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    fn target(&self) -> Result<(u32, u32)> {
        let r = self.range >> PRECISION;
        let v = self.code / r;
        if v >= TOTAL {
            return Err(Error::Bitstream("range decoder left the coding interval".into()));
        }
        Ok((r, v))
    }

    fn consume(&mut self, r: u32, start: u32, size: u32) {
        self.code -= r * start;
        self.range = r * size;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte() as u32;
        }
    }

    pub fn decode_symbol(&mut self, table: &CdfTable) -> Result<usize> {
        let (r, v) = self.target()?;
        let index = table.locate(v);
        self.consume(r, table.cdf[index], table.frequency(index));
        Ok(index)
    }

    pub fn decode_raw32(&mut self) -> Result<u32> {
        let (r, hi) = self.target()?;
        self.consume(r, hi, 1);
        let (r, lo) = self.target()?;
        self.consume(r, lo, 1);
        Ok((hi << 16) | lo)
    }
}
