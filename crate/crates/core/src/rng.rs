//! Keyed random streams.
//!
//! Every simulator takes an [`RngStream`] by value and builds its own
//! generator from it, so simulations are pure functions of their inputs.
//! Sub-streams for independent components of one subject are derived with
//! [`RngStream::fork`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// A statistically independent stream labelled by `tag`, keeping the same
    /// stream id.
    pub fn fork(&self, tag: u64) -> Self {
        Self {
            seed: mix(self.seed ^ mix(tag.wrapping_add(0x632b_e59b_d9b4_e019))),
            stream_id: self.stream_id,
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for replication `rep` of a study run under `master_seed`.
pub fn replication_seed(master_seed: u64, rep: u64) -> u64 {
    mix(master_seed ^ mix(rep.wrapping_mul(0xd1b5_4a32_d192_ed03)))
}
