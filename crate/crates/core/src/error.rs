//! Stable error code names shared by the CLI exit path and the HTTP API.

use crate::align::AlignError;
use crate::config::ConfigError;
use crate::dataset::DatasetError;
use crate::media::MediaError;
use crate::qc::QcError;
use crate::store::StoreError;
use crate::taxon::RegistryError;
use crate::transcribe::TranscribeError;
use crate::workflow::WorkflowError;

pub trait ErrorCode {
    /// The variant name, e.g. `EmptySegment`.
    fn code(&self) -> &'static str;
}

impl ErrorCode for StoreError {
    fn code(&self) -> &'static str {
        match self {
            StoreError::StorageFull => "StorageFull",
            StoreError::Missing(_) => "ObjectMissing",
            StoreError::Corrupt { .. } => "ObjectCorrupt",
            StoreError::Sidecar { .. } => "SidecarCorrupt",
            StoreError::Io(_) => "Io",
        }
    }
}

impl ErrorCode for RegistryError {
    fn code(&self) -> &'static str {
        match self {
            RegistryError::Parse(_) => "RegistryParse",
            RegistryError::Invariant { .. } => "RegistryInvariant",
        }
    }
}

impl ErrorCode for MediaError {
    fn code(&self) -> &'static str {
        match self {
            MediaError::UndecodableMedia(_) => "UndecodableMedia",
            MediaError::ZeroDuration => "ZeroDuration",
            MediaError::StorageFull => "StorageFull",
            MediaError::InvalidCapture(_) => "InvalidCapture",
            MediaError::EmptySegment => "EmptySegment",
            MediaError::SegmentOutOfRange(_) => "SegmentOutOfRange",
            MediaError::BadFps(_) => "BadFps",
            MediaError::DecodeFailure { .. } => "DecodeFailure",
            MediaError::NoAudioStream => "NoAudioStream",
            MediaError::AudioDecode(_) => "AudioDecode",
            MediaError::AudioLengthMismatch { .. } => "AudioLengthMismatch",
            MediaError::DecoderConfig(_) => "DecoderConfig",
            MediaError::UnknownVideo(_) => "UnknownVideo",
            MediaError::Store(e) => e.code(),
        }
    }
}

impl ErrorCode for TranscribeError {
    fn code(&self) -> &'static str {
        match self {
            TranscribeError::TranscriberUnavailable(_) => "TranscriberUnavailable",
            TranscribeError::TranscriberRejectedAudio(_) => "TranscriberRejectedAudio",
            TranscribeError::DurationMismatch { .. } => "DurationMismatch",
            TranscribeError::BadScript { .. } => "BadScript",
        }
    }
}

impl ErrorCode for AlignError {
    fn code(&self) -> &'static str {
        match self {
            AlignError::CrossVideoInput { .. } => "CrossVideoInput",
        }
    }
}

impl ErrorCode for QcError {
    fn code(&self) -> &'static str {
        match self {
            QcError::UndecodableImage(_) => "UndecodableImage",
        }
    }
}

impl ErrorCode for DatasetError {
    fn code(&self) -> &'static str {
        match self {
            DatasetError::StaleEventId { .. } => "StaleEventId",
            DatasetError::Validation(_) => "ValidationError",
            DatasetError::UnknownBatch(_) => "UnknownBatch",
            DatasetError::UnknownTaxon(_) => "UnknownTaxon",
            DatasetError::UnknownVersion(_) => "UnknownVersion",
            DatasetError::BadRatios(_) => "BadRatios",
            DatasetError::ExportTargetNotEmpty(_) => "ExportTargetNotEmpty",
            DatasetError::StorageFull => "StorageFull",
            DatasetError::Corrupt { .. } => "LogCorrupt",
            DatasetError::Store(e) => e.code(),
            DatasetError::Io(_) => "Io",
        }
    }
}

impl ErrorCode for WorkflowError {
    fn code(&self) -> &'static str {
        match self {
            WorkflowError::UnknownTask(_) => "UnknownTask",
            WorkflowError::UnknownTaxon(_) => "UnknownTaxon",
            WorkflowError::IllegalTransition { .. } => "IllegalTransition",
            WorkflowError::GuardFailed(_) => "GuardFailed",
            WorkflowError::WrongState { .. } => "WrongState",
            WorkflowError::BadAmount(_) => "BadAmount",
            WorkflowError::UnknownItem(_) => "UnknownItem",
            WorkflowError::AlreadyResolved(_) => "AlreadyResolved",
            WorkflowError::InvalidDecision(_) => "InvalidDecision",
            WorkflowError::Corrupt { .. } => "LogCorrupt",
            WorkflowError::StorageFull => "StorageFull",
            WorkflowError::Io(_) => "Io",
        }
    }
}

impl ErrorCode for ConfigError {
    fn code(&self) -> &'static str {
        match self {
            ConfigError::Read { .. } => "ConfigRead",
            ConfigError::Parse(_) => "ConfigParse",
            ConfigError::MissingPath { .. } => "ConfigMissingPath",
            ConfigError::Invalid(_) => "ConfigInvalid",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error(transparent)]
    Transcribe(#[from] TranscribeError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Qc(#[from] QcError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown segment {0}")]
    UnknownSegment(String),
    #[error("unknown batch {0}")]
    UnknownBatch(String),
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl ErrorCode for Error {
    fn code(&self) -> &'static str {
        match self {
            Error::Store(e) => e.code(),
            Error::Registry(e) => e.code(),
            Error::Media(e) => e.code(),
            Error::Transcribe(e) => e.code(),
            Error::Align(e) => e.code(),
            Error::Qc(e) => e.code(),
            Error::Dataset(e) => e.code(),
            Error::Workflow(e) => e.code(),
            Error::Config(e) => e.code(),
            Error::UnknownSegment(_) => "UnknownSegment",
            Error::UnknownBatch(_) => "UnknownBatch",
            Error::BadRequest(_) => "BadRequest",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Store(e.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
