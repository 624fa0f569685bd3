use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("dimension mismatch: expected length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("cosine distance undefined for zero vector")]
    ZeroVector,
    #[error("gallery parse error: {0}")]
    GalleryParse(String),
    #[error("duplicate gallery id: {0}")]
    DuplicateId(String),
    #[error("unknown gallery id: {0}")]
    UnknownId(String),
    #[error("age group {group} has {have} entries, need {need}")]
    UndersizedGroup { group: usize, have: usize, need: usize },
    #[error("alignment requires frame payloads, entry {0} carries embeddings only")]
    EmbeddingOnlyPayload(String),
    #[error("invalid neighbor sets: {0}")]
    InvalidNeighborSets(String),
    #[error("illegal action: {0}")]
    IllegalAction(String),
    #[error("enumeration budget exceeded: need {need}, budget {budget}")]
    BudgetExceeded { need: u64, budget: u64 },
    #[error("optimization diverged: {0}")]
    Diverged(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
