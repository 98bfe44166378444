use alloc::string::String;

use crate::federation::Endpoint;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("{context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid value for `{key}`: {reason}")]
    InvalidConfig { key: &'static str, reason: String },
    #[error("{context}: need at least {needed} samples, have {available}")]
    TooFewSamples {
        context: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("parameter layouts differ")]
    LayoutMismatch,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("soft cluster {0} has zero total mass")]
    EmptySoftCluster(usize),
    #[error("degenerate clustering: every point sits on its centroid (R = 0)")]
    DegenerateBic,
    #[error("at least two classes are required, found {0}")]
    TooFewClasses(usize),
    #[error("unknown endpoint {0:?}")]
    UnknownEndpoint(Endpoint),
    #[error("invalid route {from:?} -> {to:?}")]
    InvalidRoute { from: Endpoint, to: Endpoint },
    #[error("injected failure at {endpoint:?} in round {round}")]
    InjectedFailure { endpoint: Endpoint, round: u32 },
    #[error("round {round} on channel {from:?} -> {to:?} precedes round {last}")]
    RoundRegression {
        from: Endpoint,
        to: Endpoint,
        round: u32,
        last: u32,
    },
    #[error("real-data samples may not leave node {0:?}")]
    PrivacyViolation(Endpoint),
    #[error("protocol violation: {0}")]
    Protocol(&'static str),
}
