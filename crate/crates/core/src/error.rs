use std::path::PathBuf;

use thiserror::Error;

use crate::model::PlaneId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("plane has no pixels with positive alpha")]
    EmptyInstance,

    #[error("depth map is constant; cannot split it into planes")]
    ConstantDepth,

    #[error("placement failed: {0}")]
    PlacementFailure(String),

    #[error("plane {0} cannot be the target of this operation")]
    InvalidTarget(PlaneId),

    #[error("no plane with id {0}")]
    UnknownPlane(PlaneId),

    #[error("plane {p} must be in front of plane {q}")]
    OrderViolation { p: PlaneId, q: PlaneId },

    #[error("inpainting unavailable: {0}")]
    InpaintUnavailable(String),

    #[error("resolution mismatch: expected {expected:?}, got {actual:?}")]
    ResolutionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid stack: {0}")]
    InvalidStack(String),

    #[error("failed to load {field}: {message}")]
    Load { field: String, message: String },

    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("session {0} is busy with another edit")]
    Busy(String),

    #[error("session limit of {0} reached")]
    SessionLimit(usize),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png error: {0}")]
    Png(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case name of the variant, for clients that branch on it.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyInstance => "empty_instance",
            Error::ConstantDepth => "constant_depth",
            Error::PlacementFailure(_) => "placement_failure",
            Error::InvalidTarget(_) => "invalid_target",
            Error::UnknownPlane(_) => "unknown_plane",
            Error::OrderViolation { .. } => "order_violation",
            Error::InpaintUnavailable(_) => "inpaint_unavailable",
            Error::ResolutionMismatch { .. } => "resolution_mismatch",
            Error::InvalidValue(_) => "invalid_value",
            Error::InvalidStack(_) => "invalid_stack",
            Error::Load { .. } => "load_error",
            Error::UnknownSession(_) => "unknown_session",
            Error::Busy(_) => "busy",
            Error::SessionLimit(_) => "session_limit",
            Error::Unsupported(_) => "unsupported",
            Error::Io { .. } => "io_error",
            Error::Png(_) => "png_error",
            Error::Json(_) => "json_error",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn load(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Load {
            field: field.into(),
            message: message.into(),
        }
    }
}
