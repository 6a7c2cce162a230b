//! Stable hashing and seed derivation. Everything downstream of a seed must
//! reproduce byte-identically across runs and machines, so no use of the
//! standard library's randomized hasher.

/// FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; breaks up the structure FNV leaves in low bits.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent substream seed from a master seed and a tagged index.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(fnv1a64(tag.as_bytes()) ^ splitmix64(index)))
}

/// Map a hash to a uniform fraction in [0, 1).
pub fn hash_fraction(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}
