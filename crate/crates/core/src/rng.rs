//! Named random sub-streams derived from one root seed.
//!
//! Every stochastic stage draws from its own ChaCha stream so that any
//! stage can be re-run in isolation and still see the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Corpus = 1,
    Augment = 2,
    Split = 3,
    Init = 4,
    Shuffle = 5,
    Undersample = 6,
}

/// Returns the generator for `(root, stream, index)`.
pub fn stream(root: u64, kind: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(((kind as u64) << 32) | (index & 0xffff_ffff));
    rng
}
