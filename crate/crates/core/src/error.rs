use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("channel mismatch: {left} vs {right}")]
    ChannelMismatch { left: usize, right: usize },
    #[error("non-finite value in {0}")]
    NonFiniteData(&'static str),
    #[error("reference mask has no set pixels")]
    EmptyReferenceMask,
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("index {index} out of range for {len} pixels")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("target masks of objects {0} and {1} overlap")]
    OverlappingTargetMasks(usize, usize),
    #[error("histogram layouts differ")]
    LayoutMismatch,
    #[error("empty list")]
    EmptyList,
    #[error("mask pair has an empty union")]
    EmptyUnion,
    #[error("no ground-truth keypoint is visible")]
    NoVisibleKeypoints,
    #[error("ground-truth flow has no valid pixel")]
    EmptyValidity,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(u8),
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("no cached reference for object {object} at t={t}, layer={layer}")]
    MissingReference { object: u32, t: u32, layer: u32 },
    #[error("no readout correspondence recorded")]
    NoReadoutRecorded,
    #[error("manifest sample lacks role {0:?}")]
    MissingRole(String),
    #[error("server error {code}: {message}")]
    Remote { code: u16, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable short name, used in evaluation reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ChannelMismatch { .. } => "ChannelMismatch",
            Error::NonFiniteData(_) => "NonFiniteData",
            Error::EmptyReferenceMask => "EmptyReferenceMask",
            Error::EmptyMask => "EmptyMask",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::OverlappingTargetMasks(..) => "OverlappingTargetMasks",
            Error::LayoutMismatch => "LayoutMismatch",
            Error::EmptyList => "EmptyList",
            Error::EmptyUnion => "EmptyUnion",
            Error::NoVisibleKeypoints => "NoVisibleKeypoints",
            Error::EmptyValidity => "EmptyValidity",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::InvariantViolation(_) => "InvariantViolation",
            Error::Parse(_) => "ParseError",
            Error::BadMagic(_) => "BadMagic",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::UnsupportedDtype(_) => "UnsupportedDtype",
            Error::TruncatedPayload { .. } => "TruncatedPayload",
            Error::UnknownSession(_) => "UnknownSession",
            Error::MissingReference { .. } => "MissingReference",
            Error::NoReadoutRecorded => "NoReadoutRecorded",
            Error::MissingRole(_) => "MissingRole",
            Error::Remote { .. } => "Remote",
            Error::Io(_) => "Io",
        }
    }
}

pub(crate) fn dims_mismatch(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::DimensionMismatch(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}
