//! Lossless coding of quantized parameter indices.
//!
//! Binarization per value: a significance bin, a sign bin, then the
//! magnitude minus one as order-0 exponential-Golomb bins. Every bin is
//! coded with an adaptive context; Golomb bins are bucketed by bin index,
//! capped at bucket 16, so sparse (L1-trained) index arrays shrink to a
//! few bits per value.

use super::rangecoder::{BinProb, CoderError, RangeDecoder, RangeEncoder, SENTINEL};

const MAG_CONTEXTS: usize = 17;

struct IndexContexts {
    significant: BinProb,
    negative: BinProb,
    magnitude: [BinProb; MAG_CONTEXTS],
}

impl IndexContexts {
    fn new() -> Self {
        IndexContexts {
            significant: BinProb::new(),
            negative: BinProb::new(),
            magnitude: [BinProb::new(); MAG_CONTEXTS],
        }
    }
}

pub fn encode_indices(values: &[i32]) -> Vec<u8> {
    let mut ctx = IndexContexts::new();
    let mut enc = RangeEncoder::new();
    for &v in values {
        enc.encode(&mut ctx.significant, v != 0);
        if v == 0 {
            continue;
        }
        enc.encode(&mut ctx.negative, v < 0);
        let u = (v as i64).unsigned_abs() - 1;
        // exp-Golomb order 0: b one-bins, a zero-bin, then b suffix bins
        let b = 64 - (u + 1).leading_zeros() - 1;
        let mut bin = 0usize;
        let mut code = |enc: &mut RangeEncoder, ctx: &mut IndexContexts, bit: bool| {
            enc.encode(&mut ctx.magnitude[bin.min(MAG_CONTEXTS - 1)], bit);
            bin += 1;
        };
        for _ in 0..b {
            code(&mut enc, &mut ctx, true);
        }
        code(&mut enc, &mut ctx, false);
        let suffix = u + 1 - (1u64 << b);
        for i in (0..b).rev() {
            code(&mut enc, &mut ctx, (suffix >> i) & 1 == 1);
        }
    }
    enc.encode_byte_bypass(SENTINEL);
    enc.finish()
}

pub fn decode_indices(bytes: &[u8], count: usize) -> Result<Vec<i32>, CoderError> {
    let mut ctx = IndexContexts::new();
    let mut dec = RangeDecoder::new(bytes)?;
    // cap the up-front reservation; a corrupt count fails on exhaustion
    // long before the vector grows this far
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        if !dec.decode(&mut ctx.significant)? {
            out.push(0);
            continue;
        }
        let negative = dec.decode(&mut ctx.negative)?;
        let mut bin = 0usize;
        let mut next = |dec: &mut RangeDecoder, ctx: &mut IndexContexts| {
            let r = dec.decode(&mut ctx.magnitude[bin.min(MAG_CONTEXTS - 1)]);
            bin += 1;
            r
        };
        let mut b = 0u32;
        while next(&mut dec, &mut ctx)? {
            b += 1;
            if b > 63 {
                return Err(CoderError::Desync);
            }
        }
        let mut suffix = 0u64;
        for _ in 0..b {
            suffix = (suffix << 1) | next(&mut dec, &mut ctx)? as u64;
        }
        let u = (1u64 << b) - 1 + suffix;
        let magnitude = u as i64 + 1;
        out.push(if negative {
            (-magnitude) as i32
        } else {
            magnitude as i32
        });
    }
    if dec.decode_byte_bypass()? != SENTINEL {
        return Err(CoderError::Desync);
    }
    Ok(out)
}
