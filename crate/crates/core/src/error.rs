use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("latent dimension k={k} exceeds min(m={m}, n={n})")]
    Dimension { k: usize, m: usize, n: usize },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("region {region} has no members")]
    EmptyRegion { region: usize },

    #[error("sensor {sensor} is not part of the sensor set")]
    UnknownSensor { sensor: usize },

    #[error("sensor {sensor} has no region assignment")]
    UnassignedSensor { sensor: usize },

    #[error("no coordinates for sensor {sensor}")]
    MissingCoordinate { sensor: usize },

    #[error("sensors {a} and {b} share a position; 1/d^2 weight is undefined")]
    CoincidentSensors { a: usize, b: usize },

    #[error("adjacency is not symmetric at ({row}, {col})")]
    Asymmetry { row: usize, col: usize },

    #[error("sensor {sensor} has no local training entries")]
    EmptyLocalData { sensor: usize },

    #[error("time index {j} out of range for n={n}")]
    Index { j: usize, n: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("update produced a non-finite value in column {column}")]
    NonFinite { column: usize },

    #[error("training diverged in round {round}")]
    Divergence { round: usize },

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("training values are constant; scale is degenerate")]
    DegenerateScale,

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("row at line {line} has {found} fields, expected {expected}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors that stem from numerical divergence rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::NonFinite { .. })
    }
}
