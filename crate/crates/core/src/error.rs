use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The requested deviation budget cannot be met inside the signaling space.
    #[error("deviation budget {gamma} unreachable: {reason}")]
    BudgetUnreachable { gamma: f64, reason: String },

    /// No adder-channel code is tabulated for this many users.
    #[error("unsupported number of units for full-duplex coding: {0} (supported: 1..=18)")]
    UnsupportedSize(usize),

    /// A sum sequence that no bit vector produces.
    #[error("sum sequence has no preimage: {0}")]
    NoPreimage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
