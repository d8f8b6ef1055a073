use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    /// A record in a JSONL (or similar line-oriented) file could not be parsed.
    /// Line numbers are 1-based.
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("no events")]
    NoEvents,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("duplicate post id {0:?} in history")]
    DuplicatePost(String),

    #[error("unknown post id {post_id:?} in timeline {timeline_id:?}")]
    UnknownPost {
        timeline_id: String,
        post_id: String,
    },

    #[error("duplicate candidate day {0}")]
    DuplicateCandidate(chrono::NaiveDate),

    #[error("empty lexicon")]
    EmptyLexicon,

    #[error("no medoid: timeline {0:?} has no ground-truth days")]
    NoMedoid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate quartiles")]
    DegenerateQuartiles,

    #[error("single-class input: both labels are required")]
    SingleClass,

    #[error("missing scores for post {0:?}")]
    MissingScore(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
