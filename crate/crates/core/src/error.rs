use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty set")]
    EmptySet,
    #[error("grid does not cover the domain bounding box")]
    GridDoesNotCover,
    #[error("point lies outside the grid")]
    OutsideGrid,
    #[error("unknown component label {0}")]
    UnknownLabel(usize),
    #[error("disconnected family")]
    DisconnectedFamily,
    #[error("family is empty at the working grid: {0}")]
    EmptyFamily(String),
    #[error("size cap exceeded: {cells} cells (limit {limit})")]
    SizeCap { cells: usize, limit: usize },
    #[error("p = {p} outside the ring-bound range (n-1, n] for n = {n}")]
    OutsideRingBoundRange { p: f64, n: usize },
    #[error("degenerate continuum")]
    DegenerateContinuum,
    #[error("straddles region boundary")]
    StraddlesBoundary,
    #[error("singular value decomposition failed")]
    SvdFailure,
    #[error("polyline too close to the support boundary")]
    TooCloseToBoundary,
    #[error("refine grid: {0}")]
    RefineGrid(String),
    #[error("no valid sets: {0}")]
    NoValidSets(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
