use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for the vehicle model pipeline.
///
/// Variants separate bad input data (files, point sets) from numerical
/// failure modes (degenerate training sets, unsolvable observations) so the
/// command line layer can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("keypoint count mismatch: expected {expected}, got {got}")]
    KeypointCountMismatch { expected: usize, got: usize },

    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),

    #[error("rank-deficient shape basis")]
    RankDeficient,

    #[error("non-positive disparity")]
    NonPositiveDisparity,

    #[error("depth must be positive")]
    NonPositiveDepth,

    #[error("plane fit failed: sampled points are collinear")]
    CollinearPoints,

    #[error("empty point set")]
    EmptyPointSet,

    #[error("degenerate viewpoint: {0}")]
    DegenerateViewpoint(String),

    #[error("degenerate observations: no particle has finite energy")]
    DegenerateObservations,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed {kind} data: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(kind: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            kind,
            msg: msg.into(),
        }
    }

    /// True for failures of the numerical pipeline as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateTrainingSet(_)
                | Error::RankDeficient
                | Error::NonPositiveDisparity
                | Error::NonPositiveDepth
                | Error::CollinearPoints
                | Error::DegenerateViewpoint(_)
                | Error::DegenerateObservations
        )
    }
}
