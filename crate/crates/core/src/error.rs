use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point count {points} does not match normal count {normals}")]
    LengthMismatch { points: usize, normals: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("ambiguous extrusion axis: eigenvalue gap {gap:e} below tolerance {tolerance:e}")]
    AmbiguousAxis { gap: f64, tolerance: f64 },

    #[error("segment {segment} has no barrel support")]
    EmptySegment { segment: usize },

    #[error("segment index {segment} out of range for {segments} segments")]
    SegmentOutOfRange { segment: usize, segments: usize },

    #[error("cost matrix contains a non-finite entry at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },

    #[error("invalid sketch profile: {0}")]
    InvalidProfile(String),

    #[error("no extrusion axis modes found")]
    NoModes,

    #[error("synthetic model generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    /// True for failures caused by degenerate geometry rather than bad input.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::AmbiguousAxis { .. } | Error::EmptySegment { .. } | Error::NoModes
        )
    }
}
