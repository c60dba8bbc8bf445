//! Adaptive binary arithmetic coder: 32-bit range with carry propagation,
//! 12-bit probability states, byte-aligned output. Encoder and decoder
//! update contexts identically bin by bin, so they stay in lockstep on any
//! well-formed payload.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CoderError {
    #[error("bitstream exhausted at byte {offset}")]
    Exhausted { offset: usize },
    #[error("context-model desync: termination sentinel mismatch")]
    Desync,
}

const PROB_BITS: u32 = 12;
const PROB_ONE: u16 = 1 << PROB_BITS;
const ADAPT_SHIFT: u16 = 5;
const TOP: u32 = 1 << 24;

/// Probability that the next bin is zero, as a 12-bit adaptive counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinProb(u16);

impl BinProb {
    pub fn new() -> Self {
        BinProb(PROB_ONE / 2)
    }

    fn update(&mut self, bit: bool) {
        if bit {
            self.0 -= self.0 >> ADAPT_SHIFT;
        } else {
            self.0 += (PROB_ONE - self.0) >> ADAPT_SHIFT;
        }
    }
}

impl Default for BinProb {
    fn default() -> Self {
        BinProb::new()
    }
}

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    pub fn encode(&mut self, prob: &mut BinProb, bit: bool) {
        let bound = (self.range >> PROB_BITS) * prob.0 as u32;
        if !bit {
            self.range = bound;
        } else {
            self.low += bound as u64;
            self.range -= bound;
        }
        prob.update(bit);
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    /// Fixed 1/2 split, no adaptation.
    pub fn encode_bypass(&mut self, bit: bool) {
        let bound = self.range >> 1;
        if !bit {
            self.range = bound;
        } else {
            self.low += bound as u64;
            self.range -= bound;
        }
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    pub fn encode_byte_bypass(&mut self, byte: u8) {
        for i in (0..8).rev() {
            self.encode_bypass((byte >> i) & 1 == 1);
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > u32::MAX as u64 {
            let carry = (self.low >> 32) as u8;
            self.out.push(self.cache.wrapping_add(carry));
            for _ in 1..self.cache_size {
                self.out.push(0xFFu8.wrapping_add(carry));
            }
            self.cache = (self.low >> 24) as u8;
            self.cache_size = 0;
        }
        self.cache_size += 1;
        self.low = (self.low << 8) & u32::MAX as u64;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

impl Default for RangeEncoder {
    fn default() -> Self {
        RangeEncoder::new()
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self, CoderError> {
        let mut d = RangeDecoder {
            data,
            pos: 0,
            range: u32::MAX,
            code: 0,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8, CoderError> {
        let b = self
            .data
            .get(self.pos)
            .copied()
            .ok_or(CoderError::Exhausted { offset: self.pos })?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, prob: &mut BinProb) -> Result<bool, CoderError> {
        let bound = (self.range >> PROB_BITS) * prob.0 as u32;
        let bit = if self.code < bound {
            self.range = bound;
            false
        } else {
            self.code -= bound;
            self.range -= bound;
            true
        };
        prob.update(bit);
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(bit)
    }

    pub fn decode_bypass(&mut self) -> Result<bool, CoderError> {
        let bound = self.range >> 1;
        let bit = if self.code < bound {
            self.range = bound;
            false
        } else {
            self.code -= bound;
            self.range -= bound;
            true
        };
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(bit)
    }

    pub fn decode_byte_bypass(&mut self) -> Result<u8, CoderError> {
        let mut byte = 0u8;
        for _ in 0..8 {
            byte = (byte << 1) | self.decode_bypass()? as u8;
        }
        Ok(byte)
    }
}

/// In-stream termination sentinel; a desynced context model garbles it.
pub const SENTINEL: u8 = 0xA5;
