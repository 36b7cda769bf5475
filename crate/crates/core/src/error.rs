use alloc::string::String;

use crate::graph::EntityKind;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
    #[error("unknown relation id {0}")]
    UnknownRelation(u32),
    #[error("unknown entity name `{0}`")]
    UnknownName(String),
    #[error("entity `{name}` is already a {existing}, cannot redeclare it as {requested}")]
    KindConflict {
        name: String,
        existing: EntityKind,
        requested: EntityKind,
    },
    #[error("entity `{name}` is a {found}, expected {expected}")]
    WrongKind {
        name: String,
        expected: EntityKind,
        found: EntityKind,
    },
    #[error("self-loop on entity `{0}`")]
    SelfLoop(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("no positive item of the user is a scored candidate")]
    NoScoreablePositive,
    #[error("item `{0}` is not a candidate of this subgraph")]
    NotCandidate(String),
    #[error("relation `{0}` has no configured extraction target")]
    UnconfiguredTarget(String),
    #[error("review {0} cannot be resolved to a (user, item) pair")]
    UnresolvedReview(usize),
    #[error("invalid prompt template: {0}")]
    Template(String),
    #[error("chat client failure: {0}")]
    Chat(String),
    #[error("checkpoint does not match the graph: {0}")]
    CheckpointMismatch(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
