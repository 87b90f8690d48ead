//! Seeded random streams.
//!
//! Every stochastic component draws from its own stream. A stream's seed is
//! the first eight bytes of `SHA-256(scenario_seed_le || label)`, so adding a
//! UE or a cell never perturbs the streams of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Random stream type used throughout the simulator.
pub type StreamRng = ChaCha12Rng;

/// Derive the 64-bit seed of a labelled stream.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

pub fn stream(seed: u64, label: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, label))
}

/// Labels of the per-UE streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UeStream {
    Traffic,
    Channel,
    Cqi,
    Harq,
}

impl UeStream {
    fn name(self) -> &'static str {
        match self {
            Self::Traffic => "traffic",
            Self::Channel => "channel",
            Self::Cqi => "cqi",
            Self::Harq => "harq",
        }
    }
}

/// Stream for one UE, identified by cell and index within the cell.
pub fn ue_stream(seed: u64, cell: usize, ue_index: usize, kind: UeStream) -> StreamRng {
    stream(seed, &format!("cell{cell}/ue{ue_index}/{}", kind.name()))
}

/// Seed of the `run`-th replication of a scenario.
pub fn run_seed(base: u64, run: usize) -> u64 {
    derive_seed(base, &format!("run{run}"))
}
