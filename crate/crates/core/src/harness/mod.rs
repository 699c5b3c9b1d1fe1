//! Calibration, experiments, reports and the interactive session server.

pub mod calibration;
pub mod config;
pub mod experiment;
pub mod report;
pub mod server;
pub mod stats;

/// Mixes `parts` into `base` with the SplitMix64 finalizer, so nearby inputs
/// give unrelated streams.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
