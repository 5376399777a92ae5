use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Fixed stream offsets so every module draws from its own sequence.
pub mod streams {
    pub const WORLD: u64 = 0x10;
    pub const TRIPLETS: u64 = 0x11;
    pub const NOISE: u64 = 0x12;
    pub const VAL_TRIPLETS: u64 = 0x13;
    pub const ARBITER: u64 = 0x20;
    pub const ANCHOR: u64 = 0x21;
    pub const EKI_INIT: u64 = 0x30;
    pub const EKI_SHUFFLE: u64 = 0x31;
    pub const EKI_DROPOUT: u64 = 0x32;
    pub const EKI_HOLDOUT: u64 = 0x33;
    pub const HEAD_INIT: u64 = 0x40;
    pub const DSR_SHUFFLE: u64 = 0x41;
    pub const DSR_CONFIDENCE: u64 = 0x42;
    pub const EVAL_SUBSET: u64 = 0x50;
}

/// Seed plus stream id of a ChaCha8 generator.
///
/// ChaCha is counter based and portable, so `(seed, stream)` fixes the draw
/// sequence on every platform. Child states are derived by hashing an offset
/// into the stream id, which lets independent workers draw without sharing
/// a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn derive(&self, offset: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(
                self.stream ^ splitmix64(offset.wrapping_add(0x9E37_79B9_7F4A_7C15)),
            ),
        }
    }

    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
