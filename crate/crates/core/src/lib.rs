//! Simulator and scheduler trainer for age-of-information (AoI) aware
//! transmission scheduling in lossy multi-sensor networks.
//!
//! A central controller selects one of `N` sensors per task; the selected
//! sensor samples fresh data and transmits it (with geometric
//! retransmissions) until the packet gets through. Each sensor carries an
//! age that resets to the transmission duration when it is served and grows
//! by that duration otherwise. The goal is to keep a weighted combination of
//! average age and threshold-violation probability low.
//!
//! Modules:
//! - [`env`]: task-indexed environment (age recursion, retransmissions,
//!   throughput process, reward, observation construction)
//! - [`policy`]: scheduler abstraction plus non-learned baselines
//! - [`net`]: actor-critic network (1D conv + dense) with exact manual
//!   gradients and a binary checkpoint format
//! - [`train`]: asynchronous advantage actor-critic training loop
//! - [`metrics`]: evaluation harness (average AoI, violation probability,
//!   objective, CDFs, policy comparison)
//! - [`config`]: experiment configuration file handling

pub mod config;
pub mod env;
pub mod metrics;
pub mod net;
pub mod policy;
pub mod train;

use thiserror::Error;

/// Deterministic RNG used throughout the crate. Every stream is derived
/// from an explicit seed so runs are reproducible.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; the message names the offending key.
    #[error("configuration error: {0}")]
    Config(String),

    /// Argument outside an operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Scheduling action outside `[0, n_sensors)`.
    #[error("action {action} out of range for {n_sensors} sensors")]
    ActionOutOfRange { action: usize, n_sensors: usize },

    /// `step` called after the episode horizon was reached.
    #[error("episode finished: step called after done")]
    EpisodeFinished,

    /// Tensor/vector shape mismatch.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// API misuse (empty rollout, mismatched reports, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A parameter update was rejected (non-finite gradients).
    #[error("update rejected: {0}")]
    UpdateRejected(String),

    /// Malformed or incompatible checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A training worker failed.
    #[error("worker {worker} failed: {source}")]
    Worker {
        worker: usize,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Derives an independent RNG seed from a base seed, a stream tag and an
/// index (worker id, episode id, ...) via splitmix64 finalization.
pub fn mix_seed(base: u64, tag: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream tags for [`mix_seed`], one per RNG purpose, so no two purposes
/// ever share a seed.
pub mod seed_tag {
    /// Network parameter initialization.
    pub const INIT: u64 = 1;
    /// Per-episode environment streams during training.
    pub const TRAIN_ENV: u64 = 2;
    /// Per-worker action sampling during training.
    pub const TRAIN_POLICY: u64 = 3;
    /// Per-episode environment streams during evaluation.
    pub const EVAL_ENV: u64 = 4;
    /// Policy-side draws during evaluation.
    pub const EVAL_POLICY: u64 = 5;
}

/// 64-bit FNV-1a over a byte string. Used to fingerprint configurations in
/// emitted artifacts; not cryptographic.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}
