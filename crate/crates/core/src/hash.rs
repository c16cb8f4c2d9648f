//! Stable 64-bit hashes used for trace keys, config digests and the
//! table predictor's context perturbation.

use crate::schedule::TokenId;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Canonical byte encoding of a token array: little-endian `i32` per
/// position, `-1` for the mask token.
pub fn canonical_state_bytes(tokens: &[TokenId], mask_id: TokenId) -> Vec<u8> {
    let mut out = Vec::with_capacity(tokens.len() * 4);
    for &t in tokens {
        let v: i32 = if t == mask_id { -1 } else { t as i32 };
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// FNV-1a 64 digest of the canonical encoding, as 16 lowercase hex digits.
pub fn state_key(tokens: &[TokenId], mask_id: TokenId) -> String {
    format!("{:016x}", fnv1a64(&canonical_state_bytes(tokens, mask_id)))
}
