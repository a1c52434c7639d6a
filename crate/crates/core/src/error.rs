use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate quadric: (4,4) entry {0:e} cannot be normalized")]
    DegenerateQuadric(f64),

    #[error("invalid value for `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("landmark {landmark_id} has {found} detections, at least {required} are needed")]
    InsufficientObservations {
        landmark_id: usize,
        found: usize,
        required: usize,
    },

    #[error("degenerate quadric fit: {0}")]
    DegenerateSolution(String),

    #[error("covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("linear system is singular")]
    SingularSystem,

    #[error("invalid factor graph: {0}")]
    InvalidGraph(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("landmark id mismatch: {0}")]
    IdMismatch(String),

    #[error("no valid volume estimates to aggregate")]
    NoValidVolumes,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("world generation failed: {0}")]
    WorldGeneration(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
