use thiserror::Error;

use crate::netharness::Message;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("no data: {0}")]
    NoData(String),

    #[error("conditional correlation undefined for {0}: no detected pairs")]
    UndefinedConditional(String),

    #[error("unknown model `{0}` (expected `pearle` or `socks`)")]
    UnknownModel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("audit impossible: {0}")]
    AuditImpossible(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("solver did not converge: {message} (max residual {max_residual:.3e})")]
    Solver {
        message: String,
        max_residual: f64,
        residuals: Vec<f64>,
    },

    #[error("protocol fault in slot {slot}: {reason}")]
    ProtocolFault {
        slot: u64,
        reason: String,
        message: Option<Message>,
    },
}
