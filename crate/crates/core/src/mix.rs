//! Seed derivation for reproducible, order-independent randomness.
//!
//! Every random draw in this crate is keyed by a tuple such as
//! (master seed, trial, agent, good). The tuple is folded through splitmix64
//! into a single 64-bit key, so a draw's value depends only on its key and
//! never on scheduling order, which makes parallel trial execution
//! bit-reproducible.

/// Finalizer from the splitmix64 generator. Bijective on u64.
pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds key components into one 64-bit key.
pub(crate) fn mix(parts: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3; // pi fraction, arbitrary non-zero start
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

/// Maps a key to a uniform double in the open interval (0, 1).
///
/// Uses the top 52 bits, offset by half a step so 0.0 and 1.0 are never
/// produced; quantile transforms stay finite. 52 bits keep the offset sum
/// exactly representable (53 would round the top value up to 1.0).
pub(crate) fn unit_open(x: u64) -> f64 {
    ((x >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}
