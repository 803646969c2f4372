use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("inventory load failed in {file}: {reason}")]
    InventoryLoad { file: PathBuf, reason: String },

    #[error("dangling relation target {target} referenced by {referrer}")]
    DanglingRelation { referrer: String, target: String },

    #[error("corpus file {file}: {reason}")]
    CorpusLoad { file: PathBuf, reason: String },

    #[error("embeddings file {file}: {reason}")]
    EmbeddingLoad { file: PathBuf, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("lemma '{lemma}' ({pos}) has no senses in the inventory")]
    Unresolvable { lemma: String, pos: String },

    #[error("checkpoint {file}: {reason}")]
    Checkpoint { file: PathBuf, reason: String },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("inventory fingerprint {found:#018x} does not match checkpoint fingerprint {expected:#018x}")]
    FingerprintMismatch { found: u64, expected: u64 },

    #[error("training diverged: non-finite loss in batch {batch} of epoch {epoch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("conversion failed in {file}: {reason}")]
    Convert { file: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
