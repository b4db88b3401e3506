use thiserror::Error;

use crate::backends::TokenDistribution;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("template: {0}")]
    Template(String),

    #[error("unsupported prompt variant: {0}")]
    UnsupportedVariant(String),

    #[error("config: {0}")]
    Config(String),

    /// Transport-level failure. `retryable` failures have already exhausted
    /// the retry budget when they reach the caller.
    #[error("network: {message}")]
    Network { message: String, retryable: bool },

    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },

    #[error("backend {0} returned no token scores")]
    NonIntrospectableBackend(String),

    #[error("no cached completion for key {0} in replay mode")]
    ReplayMiss(String),

    #[error("no option token present in distribution at position {}", .distribution.position)]
    NoOptionMass { distribution: TokenDistribution },

    #[error("could not extract an answer label from {0:?}")]
    UnparseableAnswer(String),

    #[error("answer {0:?} matches several options")]
    AmbiguousAnswer(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl std::fmt::Display, source: std::io::Error) -> Self {
        Error::Io { path: path.to_string(), source }
    }

    /// Short machine-friendly tag used in trial failure annotations.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Dataset(_) => "dataset",
            Error::Validation(_) => "validation",
            Error::Template(_) => "template",
            Error::UnsupportedVariant(_) => "unsupported_variant",
            Error::Config(_) => "config",
            Error::Network { .. } => "network",
            Error::RateLimited { .. } => "rate_limited",
            Error::NonIntrospectableBackend(_) => "non_introspectable_backend",
            Error::ReplayMiss(_) => "replay_miss",
            Error::NoOptionMass { .. } => "no_option_mass",
            Error::UnparseableAnswer(_) => "unparseable_answer",
            Error::AmbiguousAnswer(_) => "ambiguous_answer",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
