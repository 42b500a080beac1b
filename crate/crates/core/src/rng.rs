//! Deterministic named RNG substreams.
//!
//! One root seed spawns an independent ChaCha8 stream per
//! `(device, round, purpose)` triple. Streams never depend on the
//! aggregation scheme, so coupled runs of different schemes draw identical
//! mini-batches, fading realizations, and channel noise. ChaCha's key
//! schedule does the mixing; the triple is written directly into the
//! 256-bit key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Pseudo-device id for server-side draws (channel noise, global init).
pub const SERVER: u32 = u32::MAX;

/// What a substream is consumed for. Each purpose gets its own stream per
/// (device, round) so consuming one cannot perturb another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Global model initialization.
    Init,
    /// Synthetic data generation / dataset partitioning.
    Data,
    /// Device placement inside the cell.
    Placement,
    /// Mini-batch index sampling.
    Batch,
    /// Small-scale fading gains.
    Fading,
    /// Additive channel noise.
    Noise,
    /// Probing for constant estimation.
    Probe,
}

impl Purpose {
    fn tag(self) -> u8 {
        match self {
            Purpose::Init => 1,
            Purpose::Data => 2,
            Purpose::Placement => 3,
            Purpose::Batch => 4,
            Purpose::Fading => 5,
            Purpose::Noise => 6,
            Purpose::Probe => 7,
        }
    }
}

/// Derive the substream for `(device, round, purpose)` under `root_seed`.
pub fn substream(root_seed: u64, device: u32, round: u32, purpose: Purpose) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&root_seed.to_le_bytes());
    key[8..12].copy_from_slice(&device.to_le_bytes());
    key[12..16].copy_from_slice(&round.to_le_bytes());
    key[16] = purpose.tag();
    ChaCha8Rng::from_seed(key)
}
