//! Deterministic random streams keyed by `(seed, purpose, client, step)`.
//!
//! Every random decision in a run draws from its own stream, so results do not
//! depend on the order (or thread) in which clients are processed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Purpose {
    Subsample,
    Quantize,
    Shuffle,
    ModelInit,
    Synthetic,
    Probe,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Subsample => 0x5355_4253,
            Purpose::Quantize => 0x5155_414e,
            Purpose::Shuffle => 0x5348_5546,
            Purpose::ModelInit => 0x494e_4954,
            Purpose::Synthetic => 0x5359_4e54,
            Purpose::Probe => 0x5052_4f42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub purpose: Purpose,
    pub client: u64,
    pub step: u64,
}

pub fn derive_stream(seed: u64, purpose: Purpose, client: u64, step: u64) -> RngStream {
    RngStream {
        seed,
        purpose,
        client,
        step,
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    /// Builds the generator for this stream. Calling it twice yields identical draws.
    pub fn rng(&self) -> ChaCha8Rng {
        // each absorbed word passes through a full mix before the next one
        let absorb = |state: u64, word: u64| {
            let mut s = state ^ word;
            splitmix64(&mut s)
        };
        let mut state = absorb(
            absorb(absorb(self.seed, self.purpose.tag()), self.client),
            self.step,
        );
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}
