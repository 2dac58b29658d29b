//! Seeded random streams.
//!
//! Every parallel unit of work (a Monte Carlo trajectory, a simulation
//! replicate, a bootstrap resample) draws from its own ChaCha stream keyed by
//! `(master seed, domain, index)`. Results therefore never depend on how work
//! is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream domains. Distinct domains keep e.g. replicate data generation and
/// trajectory sampling from sharing random numbers under the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Trajectory = 1,
    Replicate = 2,
    Bootstrap = 3,
    Oracle = 4,
    Pilot = 5,
    Init = 6,
    Generate = 7,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed; used to hand an independent master seed to a
/// nested computation (e.g. the G-computation run inside replicate `index`).
pub fn derive_seed(master: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ (domain as u64).rotate_left(32)) ^ splitmix64(index))
}

/// Independent stream for unit `index` of `domain` under `master`.
pub fn stream(master: u64, domain: Domain, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master ^ (domain as u64).rotate_left(32)));
    rng.set_stream(index);
    rng
}
