use thiserror::Error;

use crate::coordination::RankerModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dialogue history is empty")]
    EmptyHistory,

    #[error("final utterance renders to {len} chars, limit is {limit}")]
    OversizeTurn { len: usize, limit: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("provider timed out: {0}")]
    ProviderTimeout(String),

    #[error("provider rate limited after {attempts} attempts")]
    ProviderRateLimited { attempts: u32 },

    #[error("provider unavailable (status {status}) after {attempts} attempts")]
    ProviderUnavailable { status: u16, attempts: u32 },

    #[error("provider rejected the request (status {status}): {body}")]
    ProviderRejected { status: u16, body: String },

    #[error("malformed provider response: {0}")]
    MalformedResponse(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("template `{template}` references placeholder `{name}` that was not supplied")]
    MissingPlaceholder { template: String, name: String },

    #[error("aspect {aspect_id}: promoter output contained no list items")]
    UnparseableCandidates { aspect_id: usize },

    #[error("aspect {aspect_id}: {source}")]
    Agent {
        aspect_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("k = {k} exceeds the {distinct} distinct points")]
    DegenerateK { k: usize, distinct: usize },

    #[error("silhouette is undefined for fewer than two non-empty clusters")]
    UndefinedSilhouette,

    #[error("non-finite value in {0}")]
    NumericOverflow(&'static str),

    #[error("expected {expected} progression signals, got {got}")]
    SignalCountMismatch { expected: usize, got: usize },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged {
        epoch: usize,
        last_good: Box<RankerModel>,
    },

    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },

    #[error("version mismatch: {0}")]
    VersionMismatch(String),

    #[error("corpus hash mismatch: stored {stored}, expected {expected}")]
    HashMismatch { stored: String, expected: String },

    #[error("corrupt store file: {0}")]
    Corrupt(String),

    #[error("generation was empty after stripping the speaker label")]
    EmptyGeneration,

    #[error("empty corpus: {0}")]
    EmptyCorpus(&'static str),

    #[error("too many dialogues failed: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("model or centroids not loaded")]
    ModelNotLoaded,

    #[error("a turn is already in progress for this session")]
    TurnInProgress,

    #[error("unknown session `{0}`")]
    UnknownSession(String),

    #[error("unknown round {0}")]
    UnknownRound(usize),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier, used on the wire and across the C ABI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyHistory => "empty_history",
            Error::OversizeTurn { .. } => "oversize_turn",
            Error::InvalidInput(_) => "invalid_input",
            Error::ProviderTimeout(_) => "provider_timeout",
            Error::ProviderRateLimited { .. } => "provider_rate_limited",
            Error::ProviderUnavailable { .. } => "provider_unavailable",
            Error::ProviderRejected { .. } => "provider_rejected",
            Error::MalformedResponse(_) => "malformed_response",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::MissingPlaceholder { .. } => "missing_placeholder",
            Error::UnparseableCandidates { .. } => "unparseable_candidates",
            Error::Agent { source, .. } => source.code(),
            Error::DegenerateK { .. } => "degenerate_k",
            Error::UndefinedSilhouette => "undefined_silhouette",
            Error::NumericOverflow(_) => "numeric_overflow",
            Error::SignalCountMismatch { .. } => "signal_count_mismatch",
            Error::TrainingDiverged { .. } => "training_diverged",
            Error::SchemaViolation { .. } => "schema_violation",
            Error::VersionMismatch(_) => "version_mismatch",
            Error::HashMismatch { .. } => "hash_mismatch",
            Error::Corrupt(_) => "corrupt",
            Error::EmptyGeneration => "empty_generation",
            Error::EmptyCorpus(_) => "empty_corpus",
            Error::TooManyFailures { .. } => "too_many_failures",
            Error::ModelNotLoaded => "model_not_loaded",
            Error::TurnInProgress => "turn_in_progress",
            Error::UnknownSession(_) => "unknown_session",
            Error::UnknownRound(_) => "unknown_round",
            Error::Stage { source, .. } => source.code(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Transient provider failures that the gateway retries.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            Error::ProviderTimeout(_)
                | Error::ProviderRateLimited { .. }
                | Error::ProviderUnavailable { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn for_aspect(self, aspect_id: usize) -> Self {
        match self {
            e @ Error::Agent { .. } => e,
            e => Error::Agent {
                aspect_id,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
