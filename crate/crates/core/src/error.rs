use thiserror::Error;

pub type Result<T> = std::result::Result<T, KdmError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KdmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid bandwidth: {0}")]
    InvalidBandwidth(String),

    #[error("unsupported kernel family for this operation: {0}")]
    UnsupportedFamily(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite even after PSD flooring ({0})")]
    NotPositiveDefinite(String),

    #[error("rank deficient input: achievable rank {rank} of {requested}")]
    RankDeficient { rank: usize, requested: usize },

    #[error("input is not orthonormal under <u,v>_N (max deviation {0:.3e})")]
    NotOrthonormal(f64),

    #[error("eigenvalues are near-degenerate (gap {0:.3e})")]
    NearDegenerate(f64),

    #[error("no generator available for problem `{0}`")]
    NoGenerator(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("every candidate was flagged; nothing to select")]
    AllCandidatesFlagged,

    #[error("non-finite value: {0}")]
    NonFinite(String),
}
