//! Named, independent random streams.
//!
//! Every estimator stage draws from its own stream of a counter-based
//! generator (ChaCha8), keyed by a label hash. Streams derived from the same
//! seed are mutually independent, so replications and pipeline stages can be
//! parallelized or reordered without correlating draws, and a stage can be
//! rerun bit-identically no matter what the other stages consumed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit FNV-1a over the label bytes. Not cryptographic; only needs
/// to map distinct labels to distinct stream ids with near certainty.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Factory for independent named streams under one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedRng {
    seed: u64,
}

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream dedicated to `label`.
    pub fn stream(&self, label: &str) -> ChaCha8Rng {
        self.indexed(label, 0)
    }

    /// One of a family of streams, e.g. one per anchor or per replication.
    pub fn indexed(&self, label: &str, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(label.as_bytes()).wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        rng
    }

    /// Factory for a numbered replication; keeps per-replication streams
    /// disjoint from the parent's.
    pub fn replication(&self, index: u64) -> SeedRng {
        SeedRng {
            seed: self
                .seed
                .wrapping_add(fnv1a(&index.to_le_bytes()).wrapping_mul(0x2545_f491_4f6c_dd1d)),
        }
    }
}
