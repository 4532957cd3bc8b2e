use thiserror::Error;

use crate::version::VersionId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("merge parents are identical")]
    EqualParents,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("version not found")]
    NotFound,
    #[error("version not found on any replica")]
    NotFoundEverywhere,
    #[error("region exhausted and no alternative node exists")]
    RegionExhaustedNoAlternative,
    #[error("new capacity {requested} is below current usage {used}")]
    BelowUsage { requested: u64, used: u64 },
    #[error("delta base {0:?} is missing")]
    CorruptDelta(VersionId),
    #[error("only {acked} of {required} replicas acknowledged")]
    QuorumUnavailable { acked: usize, required: usize },
    #[error("read access denied")]
    Denied,
    #[error("requester is not the owner of this key")]
    NotOwner,
    #[error("no common ancestor (version index is corrupt)")]
    NoCommonAncestor,
    #[error("unknown merge function {0:?}")]
    UnknownMergeFunction(String),
    #[error("merge conflict: {0}")]
    Conflict(String),
    #[error("transaction aborted")]
    TxnAborted,
    #[error("key has never been written")]
    KeyUninitialized,
    #[error("unknown transaction id {0}")]
    UnknownTid(u64),
    #[error("transaction {0} already terminated")]
    AlreadyTerminal(u64),
    #[error("latch on {0:?} is not held by this transaction")]
    LatchNotHeld(String),
    #[error("this server does not host the transaction coordinator")]
    NoCoordinator,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("io: {0}")]
    Io(String),
    #[error("{0}")]
    Remote(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Malformed(e.to_string())
    }
}
