//! Non-empty-cube map coding: the `2^(3M)`-bit occupancy bitmap traversed
//! in Morton order, each bit conditioned on the two previously coded bits.
//! Spatial clustering of non-empty cubes makes the neighbor context skew
//! hard, so typical maps shrink far below the raw bitmap.

use super::rangecoder::{BinProb, CoderError, RangeDecoder, RangeEncoder, SENTINEL};

/// Largest cube-grid depth the bitmap representation supports; beyond this
/// the bitmap itself would outgrow any parameter payload.
pub const MAX_CUBE_BITS: u8 = 8;

fn morton_of(c: &[u32; 3]) -> u64 {
    let mut out = 0u64;
    for bit in 0..MAX_CUBE_BITS as u64 {
        out |= ((c[0] as u64 >> bit) & 1) << (3 * bit);
        out |= ((c[1] as u64 >> bit) & 1) << (3 * bit + 1);
        out |= ((c[2] as u64 >> bit) & 1) << (3 * bit + 2);
    }
    out
}

fn coord_of(morton: u64) -> [u32; 3] {
    let mut c = [0u32; 3];
    for bit in 0..MAX_CUBE_BITS as u64 {
        c[0] |= (((morton >> (3 * bit)) & 1) as u32) << bit;
        c[1] |= (((morton >> (3 * bit + 1)) & 1) as u32) << bit;
        c[2] |= (((morton >> (3 * bit + 2)) & 1) as u32) << bit;
    }
    c
}

/// Codes the occupancy bitmap of the cube grid. `cubes` must lie inside
/// the `2^cube_bits` grid.
pub fn encode_cube_map(cubes: &[[u32; 3]], cube_bits: u8) -> Vec<u8> {
    assert!(cube_bits <= MAX_CUBE_BITS, "cube grid too deep for a bitmap");
    let total: u64 = 1u64 << (3 * cube_bits);
    let mut bitmap = vec![false; total as usize];
    for c in cubes {
        bitmap[morton_of(c) as usize] = true;
    }
    // context: the two previously coded bits
    let mut probs = [BinProb::new(); 4];
    let mut enc = RangeEncoder::new();
    let (mut prev1, mut prev2) = (false, false);
    for &bit in &bitmap {
        let ctx = (prev1 as usize) << 1 | prev2 as usize;
        enc.encode(&mut probs[ctx], bit);
        prev2 = prev1;
        prev1 = bit;
    }
    enc.encode_byte_bypass(SENTINEL);
    enc.finish()
}

/// Exact inverse of [`encode_cube_map`]; returns sorted cube coordinates.
pub fn decode_cube_map(bytes: &[u8], cube_bits: u8) -> Result<Vec<[u32; 3]>, CoderError> {
    assert!(cube_bits <= MAX_CUBE_BITS);
    let total: u64 = 1u64 << (3 * cube_bits);
    let mut probs = [BinProb::new(); 4];
    let mut dec = RangeDecoder::new(bytes)?;
    let (mut prev1, mut prev2) = (false, false);
    let mut cubes = Vec::new();
    for morton in 0..total {
        let ctx = (prev1 as usize) << 1 | prev2 as usize;
        let bit = dec.decode(&mut probs[ctx])?;
        if bit {
            cubes.push(coord_of(morton));
        }
        prev2 = prev1;
        prev1 = bit;
    }
    if dec.decode_byte_bypass()? != SENTINEL {
        return Err(CoderError::Desync);
    }
    cubes.sort_unstable();
    Ok(cubes)
}
