//! Seeded random streams.
//!
//! Every random draw in an experiment comes from one root seed split into
//! named substreams, so that changing one consumer (say, the channel) never
//! shifts the draws seen by another (say, bias injection).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named substreams derived from the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Dataset synthesis.
    Data,
    /// Knowledge-base construction: meta split, flipping, imbalance.
    Kb,
    /// Channel noise and fading draws.
    Channel,
    /// Parameter initialization.
    Init,
    /// Mini-batch index sampling.
    Batch,
    /// Evaluation-time channel draws.
    Eval,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Kb => 2,
            Stream::Channel => 3,
            Stream::Init => 4,
            Stream::Batch => 5,
            Stream::Eval => 6,
        }
    }
}

/// Returns the generator for `stream` under `seed`.
pub fn substream(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Further splits a substream, e.g. one generator per model being initialized.
pub fn child(seed: u64, stream: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream.id());
    rng
}
