use thiserror::Error;

use crate::client::PseudoId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid party count {0}: at least 2 parties are required")]
    InvalidPartyCount(usize),
    #[error("incomplete share set: {0}")]
    IncompleteShareSet(String),
    #[error("preprocessed beaver triples exhausted")]
    TripleExhausted,
    #[error("preprocessed comparison randomness exhausted")]
    ComparisonMaskExhausted,
    #[error("point ({x}, {y}) is outside the service area")]
    PointOutsideServiceArea { x: i64, y: i64 },
    #[error("invalid grid configuration: {0}")]
    InvalidGridConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("fixes are not time-ordered at index {0}")]
    InvalidSequence(usize),
    #[error("pseudo-ID pool exhausted: needed {needed}, {remaining} remaining")]
    OutOfPseudoIds { needed: usize, remaining: usize },
    #[error("transport gave up after {attempts} attempts for server {server}")]
    RetryExhausted { server: usize, attempts: u32 },
    #[error("pseudo ID {0} was already reported")]
    PseudoIdReuse(PseudoId),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("real ID {0} is already registered")]
    AlreadyRegistered(u64),
    #[error("real ID {0} is not registered")]
    NotRegistered(u64),
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error("malformed dealer material: {0}")]
    Material(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
