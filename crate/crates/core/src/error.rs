use std::path::PathBuf;

/// Errors produced by the annotation engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("degenerate surface: total triangle area is zero")]
    DegenerateSurface,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("point cloud size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("exact EMD limited to {cap} points (got {n}); use approximate mode")]
    ExactEmdTooLarge { n: usize, cap: usize },

    #[error("resolution mismatch: {0}x{1} vs {2}x{3}")]
    ResolutionMismatch(usize, usize, usize, usize),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("view has no depth map")]
    MissingDepth,

    #[error("no observations: object is not visible in any view")]
    NoObservations,

    #[error("object unobservable: {0}")]
    Unobservable(String),

    #[error("non-finite objective at {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("invalid tree path: {0}")]
    InvalidPath(String),

    #[error("database too large for exhaustive search: {leaves} leaves (limit {limit})")]
    DatabaseTooLarge { leaves: usize, limit: usize },

    #[error("unknown CAD model: {0}")]
    UnknownModel(String),

    #[error("no models of class {0}")]
    EmptyClass(String),

    #[error("instance mismatch: {0} vs {1}")]
    InstanceMismatch(String, String),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("illegal status transition: {from} -> {to}")]
    IllegalTransition { from: String, to: String },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
