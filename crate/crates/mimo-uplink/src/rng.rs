//! Deterministic counter-based RNG streams.
//!
//! Every Monte Carlo routine in this crate derives independent per-chunk
//! streams from a (seed, stream id) pair, so results are bit-identical
//! regardless of how chunks are scheduled across workers.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fixed chunk length for sharded Monte Carlo sums.
pub const CHUNK: usize = 1 << 14;

/// splitmix64 finalizer, used to decorrelate derived stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Independent stream `id` of a master seed.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(id)))
}

/// Two-level stream derivation (e.g. per-drop, per-block).
pub fn substream(seed: u64, id1: u64, id2: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(id1)) ^ mix(id2.wrapping_add(0xa5a5))))
}

/// One sample of a circularly symmetric complex Gaussian with E|y|^2 = power
/// (variance power/2 per real dimension), via Box-Muller.
pub fn complex_gaussian<R: Rng>(rng: &mut R, power: f64) -> Complex64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    let r = (-power * u1.ln()).sqrt();
    let th = 2.0 * std::f64::consts::PI * u2;
    Complex64::new(r * th.cos(), r * th.sin())
}

/// One standard real Gaussian sample.
pub fn real_gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
