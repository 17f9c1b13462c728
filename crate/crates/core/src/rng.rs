//! Counter-keyed random streams.
//!
//! Every stochastic step draws from its own ChaCha stream derived from a
//! tuple such as `(seed, epoch, frame, op)`. Results therefore do not depend
//! on the order in which frames are processed or on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Operation tags used as the last key component.
pub mod op {
    pub const FLIP: u64 = 1;
    pub const ROTATE: u64 = 2;
    pub const SCALE: u64 = 3;
    pub const SAMPLE: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const HINTS: u64 = 6;
    pub const FRAME_ORDER: u64 = 7;
    pub const INIT: u64 = 8;
    pub const PIXELS: u64 = 9;
    pub const KMEANS: u64 = 10;
    pub const GEOMETRY: u64 = 11;
    pub const COLORS: u64 = 12;
    pub const NOISE: u64 = 13;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A generator keyed by an arbitrary tuple of counters.
pub fn stream(key: &[u64]) -> StreamRng {
    let mut h = 0x6A09_E667_F3BC_C908u64;
    for &k in key {
        h = splitmix64(h ^ k);
    }
    let mut seed = [0u8; 32];
    for (i, chunk) in seed.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(h.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Uniform draw in `[0, 1)`.
#[inline]
pub fn unit(rng: &mut impl Rng) -> f64 {
    rng.gen::<f64>()
}

/// Uniform draw in `[lo, hi]`; returns `lo` when the interval is empty.
pub fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        lo + (hi - lo) * rng.gen::<f64>()
    } else {
        lo
    }
}

/// Standard normal draw (Box-Muller).
pub fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    crate::math::sqrt(-2.0 * crate::math::ln(u1)) * crate::math::cos(2.0 * core::f64::consts::PI * u2)
}
