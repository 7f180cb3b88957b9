//! Seeded random number streams.
//!
//! All randomness comes from ChaCha8 streams keyed by `(seed, stream id)`.
//! ChaCha is counter-based, so a stream can be recreated from its key alone
//! and streams with different ids are independent. Particle `i` of a
//! simulation always draws from stream `i`; enlarging the ensemble therefore
//! does not perturb the noise of existing particles, and per-stream draws are
//! identical under any thread count.
//!
//! Gaussian variates are produced by the Box-Muller transform (pairs of
//! uniforms mapped through `sqrt(-2 ln u1) * (cos, sin)(2 pi u2)`). The
//! transform is fixed so that stored golden values remain valid.

pub use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; full-avalanche mixing of a 64-bit word.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a path of indices.
///
/// Used to give every experiment cell and replication its own seed so that
/// sweep cells are independent and individually rerunnable.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut s = mix64(master ^ GOLDEN_GAMMA);
    for (i, part) in path.iter().enumerate() {
        s = mix64(s ^ mix64(part.wrapping_add(GOLDEN_GAMMA.wrapping_mul(i as u64 + 1))));
    }
    s
}

/// A ChaCha8 generator for stream `stream` of the run keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn next_f64(rng: &mut ChaCha8Rng) -> f64 {
    const DEN: f64 = (1u64 << 53) as f64;
    ((rng.next_u64() >> 11) as f64) / DEN
}

/// One Box-Muller pair of independent standard normals.
#[inline]
pub fn standard_normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    // u1 in (0, 1] so the logarithm is finite.
    let u1 = 1.0 - next_f64(rng);
    let u2 = next_f64(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let phi = std::f64::consts::TAU * u2;
    (r * phi.cos(), r * phi.sin())
}

/// Fills `out` with independent standard normals.
///
/// Draws whole Box-Muller pairs and discards the spare when `out.len()` is
/// odd, so the uniform consumption per call depends only on the length.
pub fn fill_standard_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let mut i = 0;
    while i + 1 < out.len() {
        let (a, b) = standard_normal_pair(rng);
        out[i] = a;
        out[i + 1] = b;
        i += 2;
    }
    if i < out.len() {
        let (a, _) = standard_normal_pair(rng);
        out[i] = a;
    }
}
