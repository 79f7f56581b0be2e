use alloc::string::String;

/// Errors raised by the core algorithms.
///
/// Variants are grouped by the stage that produces them; each carries enough
/// context to print a single diagnostic line.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("target vocabulary size {target} is below the base alphabet size {base}")]
    VocabTooSmall { target: usize, base: usize },
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error("invalid vocabulary layout: {0}")]
    InvalidVocab(&'static str),

    #[error("need at least k={k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("non-finite feature value at row {row}")]
    NonFiniteFeature { row: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty reference sequence")]
    EmptyReference,
    #[error("{frames} frames cannot fit a CTC path of minimum length {needed}")]
    InfeasibleAlignment { frames: usize, needed: usize },
    #[error("malformed posteriors: {0}")]
    MalformedPosteriors(String),
    #[error("word token counts sum to {counts}, but there are {spans} token spans")]
    CountMismatch { counts: usize, spans: usize },

    #[error("invalid alignment: {0}")]
    InvalidAlignment(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty segment: {0}")]
    EmptySegment(&'static str),
    #[error("token id {id} is not valid here ({context})")]
    InvalidTokenId { id: u32, context: &'static str },

    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("loss mask selects no positions")]
    EmptyLossMask,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("missing gold field: {0}")]
    MissingGold(&'static str),
    #[error("zero-norm vector")]
    ZeroNorm,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
