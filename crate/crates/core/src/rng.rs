//! Deterministic seeding utilities.
//!
//! Every randomized component takes an explicit 64-bit seed. Sub-component
//! seeds are derived with a splitmix64 hash of (parent seed, tag) so that
//! adding a consumer never shifts the stream of an existing one.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout; ChaCha gives identical streams on all platforms.
pub type Stream = ChaCha8Rng;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive an independent child seed from a parent seed and a tag.
pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag))
}

/// Open a deterministic stream for (seed, tag).
pub fn stream(seed: u64, tag: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}

/// Standard normal draw via Box-Muller; two uniforms per call keeps the
/// stream layout independent of any library ziggurat internals.
pub fn standard_normal(rng: &mut Stream) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Resumable state of a [`Stream`]: the 64-bit seed it was opened with plus
/// the current word position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamState {
    pub seed: u64,
    pub word_pos: u128,
}

impl StreamState {
    pub fn capture(seed: u64, rng: &Stream) -> Self {
        Self {
            seed,
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(self) -> Stream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
