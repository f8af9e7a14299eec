/// Derives an independent sub-seed for the `index`-th job of a seeded batch.
///
/// SplitMix64 finalizer over `seed ^ golden * (index + 1)`; stable across
/// platforms and thread counts, so batch results do not depend on scheduling.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
