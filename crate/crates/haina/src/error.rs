use haina_core::bdam::FetchError;
use haina_core::chain::{BlockDecodeError, ChainError};
use haina_core::crypto::CryptoError;
use haina_core::lock::LockError;
use haina_core::por::PorError;
use haina_core::wire::FrameError;
use haina_core::Digest;

use crate::meta::MetaError;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetError {
    #[error("{0} is unreachable")]
    Unreachable(String),
    #[error("{0} timed out")]
    Timeout(String),
    #[error("io error talking to {addr}: {reason}")]
    Io { addr: String, reason: String },
    #[error("protocol error from {addr}: {reason}")]
    Protocol { addr: String, reason: String },
    #[error("{addr} answered with error {code}: {detail}")]
    Remote { addr: String, code: String, detail: String },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Network(#[from] NetError),
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("chain incomplete, unresolved block addresses: {}", fmt_digests(.missing))]
    IncompleteChain { missing: Vec<Digest> },
    #[error("no node volunteered to store block {block}")]
    CampaignEmpty { block: usize },
    #[error("upload aborted at block {block} after placing {} blocks: {reason}", placed.len())]
    UploadAborted { block: usize, placed: Vec<String>, reason: String },
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn fmt_digests(ds: &[Digest]) -> String {
    if ds.is_empty() {
        return "none, the chain closed early".into();
    }
    ds.iter().map(|d| d.to_hex()).collect::<Vec<_>>().join(", ")
}

/// Coarse classification that maps onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Network,
    Integrity,
    IncompleteChain,
    Other,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Other => 1,
            ErrorClass::Usage => 2,
            ErrorClass::Network => 3,
            ErrorClass::Integrity => 4,
            ErrorClass::IncompleteChain => 5,
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Usage(_) | Error::Meta(_) => ErrorClass::Usage,
            Error::Network(_) | Error::CampaignEmpty { .. } | Error::UploadAborted { .. } => ErrorClass::Network,
            Error::Integrity(_) => ErrorClass::Integrity,
            Error::IncompleteChain { .. } => ErrorClass::IncompleteChain,
            Error::Io(_) => ErrorClass::Other,
        }
    }
}

impl From<CryptoError> for Error {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::Integrity | CryptoError::CiphertextLength(_) | CryptoError::TruncatedShard { .. } => {
                Error::Integrity(e.to_string())
            }
            _ => Error::Usage(e.to_string()),
        }
    }
}

impl From<PorError> for Error {
    fn from(e: PorError) -> Self {
        Error::Usage(e.to_string())
    }
}

impl From<ChainError> for Error {
    fn from(e: ChainError) -> Self {
        Error::Integrity(e.to_string())
    }
}

impl From<LockError> for Error {
    fn from(e: LockError) -> Self {
        Error::Integrity(e.to_string())
    }
}

impl From<BlockDecodeError> for Error {
    fn from(e: BlockDecodeError) -> Self {
        Error::Integrity(e.to_string())
    }
}

impl From<FetchError> for Error {
    fn from(e: FetchError) -> Self {
        match e {
            FetchError::Incomplete { missing, .. } => Error::IncompleteChain { missing },
            FetchError::Broken(_) => Error::Integrity(e.to_string()),
        }
    }
}

impl From<FrameError> for Error {
    fn from(e: FrameError) -> Self {
        Error::Network(NetError::Protocol { addr: String::new(), reason: e.to_string() })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
