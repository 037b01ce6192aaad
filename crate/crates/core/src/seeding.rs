//! Hash-based seed splitting.
//!
//! Each random stream is keyed by `(base seed, replica, purpose)`; the 32-byte
//! ChaCha seed is `SHA-256("pucb-seed/v1" ‖ base ‖ replica ‖ purpose)` with
//! integers encoded little-endian.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SeededRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    /// Initial states, transitions and reward draws.
    Environment,
    /// Agent-side randomness (random baseline policies).
    Agent,
    /// Laplace noise inside the private counters.
    CounterNoise,
    /// Construction of randomly generated environments.
    Generator,
}

impl StreamPurpose {
    fn tag(self) -> u8 {
        match self {
            StreamPurpose::Environment => 1,
            StreamPurpose::Agent => 2,
            StreamPurpose::CounterNoise => 3,
            StreamPurpose::Generator => 4,
        }
    }
}

pub fn derive_seed(base: u64, replica: u64, purpose: StreamPurpose) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"pucb-seed/v1");
    hasher.update(base.to_le_bytes());
    hasher.update(replica.to_le_bytes());
    hasher.update([purpose.tag()]);
    hasher.finalize().into()
}

pub fn derive_rng(base: u64, replica: u64, purpose: StreamPurpose) -> SeededRng {
    SeededRng::from_seed(derive_seed(base, replica, purpose))
}

/// A `u64` drawn from the derived stream, for APIs that take a plain seed.
pub fn derive_u64(base: u64, replica: u64, purpose: StreamPurpose) -> u64 {
    let bytes = derive_seed(base, replica, purpose);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}
