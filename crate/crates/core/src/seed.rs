//! Deterministic seed derivation.
//!
//! Every random stream in the crate (perturbation, strategy draws, simulated
//! probes, topology generation) is a ChaCha generator seeded from a user
//! seed. Sub-streams are derived by mixing the base seed with a component tag
//! and an index, so sweeps stay reproducible without threading generators
//! through every call.

/// Derives an independent sub-seed from `base`, a component `tag` and an index.
///
/// Uses the splitmix64 finalizer, which is stable across platforms.
pub fn derive(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = base ^ 0x9e37_79b9_7f4a_7c15;
    for &b in tag.as_bytes() {
        h = splitmix(h ^ b as u64);
    }
    splitmix(h ^ index)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
