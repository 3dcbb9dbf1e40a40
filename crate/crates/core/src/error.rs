use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("undefined bearing between coincident points")]
    UndefinedBearing,

    #[error("non-positive interval: {0} h")]
    NonPositiveInterval(f64),

    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },

    #[error("degenerate bounding box: {0}")]
    DegenerateBbox(String),

    #[error("invalid cell size {0}")]
    InvalidCellSize(f64),

    #[error("unknown cell id {0}")]
    UnknownCell(u32),

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("no points of the track fall inside cell {0}")]
    NoPointsInCell(u32),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid normalizer range for {feature}: min {min} >= max {max}")]
    DegenerateRange { feature: String, min: f64, max: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed csv header in {path}: expected `{expected}`")]
    Header { path: PathBuf, expected: String },

    #[error("unsupported artifact schema `{found}`, expected `{expected}`")]
    Schema { found: String, expected: String },

    #[error("malformed geojson: {0}")]
    GeoJson(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
