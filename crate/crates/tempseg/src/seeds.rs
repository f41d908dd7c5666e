//! Deterministic fan-out of one run seed into per-stage seeds.
//!
//! Every stochastic stage gets its own seed derived from the run seed and a
//! stage tag, so changing one stage's consumption of randomness never shifts
//! another stage's stream.

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x00000100000001b3;

/// FNV-1a over the seed's little-endian bytes followed by the tag bytes.
pub fn sub_seed(seed: u64, tag: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().into_iter().chain(tag.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}
