//! Label-free alignment of an image encoder to a frozen character-bigram prior.
//!
//! An encoder maps observation vectors (flattened, pixel-permuted glyph images)
//! to a distribution over the 26 letters. It never sees a label. The only
//! supervision is a frozen table of next-letter probabilities, enforced through
//! a batch-contrastive loss over consecutive observation pairs. The trained
//! encoder then drives a fixed trigger-word detector whose threshold is set
//! from the trigger's expected frequency alone.
//!
//! This crate is `no_std` + `alloc`. File formats, data loading and the
//! experiment CLI live in the companion `ungrounded` crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod alphabet;
pub mod baselines;
pub mod corpus;
pub mod detection;
pub mod encoder;
pub mod error;
pub mod fonts;
pub mod linalg;
pub mod losses;
pub mod optim;
pub mod stats;
pub mod training;

pub use error::{Error, Result};

/// Floor applied inside every logarithm and denominator.
pub const EPS: f64 = 1e-12;

/// Seeded generator used for every stochastic step in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Build the crate's generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
