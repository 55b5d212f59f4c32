use thiserror::Error;

/// Errors raised by the kernels, oracles and file formats in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// Every key position was masked out for at least one query row.
    #[error("empty attention window: {0}")]
    EmptyWindow(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// No candidate tile configuration satisfies the buffer limits.
    #[error("no feasible configuration: {0}")]
    Infeasible(String),

    #[error("plan does not match inputs: {0}")]
    PlanMismatch(String),

    #[error("kernel placement rejected: {0}")]
    Placement(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
