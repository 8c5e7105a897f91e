use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed npy file: {0}")]
    NpyHeader(String),

    #[error("unsupported npy dtype {0:?} (expected <f4, <f8, <i4 or <i8)")]
    UnsupportedDtype(String),

    #[error("unsupported array rank {0} (expected 1-D or 2-D)")]
    UnsupportedRank(usize),

    #[error("csv line {line}: expected {expected} fields, found {found}")]
    RaggedCsv {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("csv line {line}: cannot parse {token:?} as a number")]
    CsvParse { line: usize, token: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("empty array: {0}")]
    Empty(String),

    #[error("label {value} at index {index} is outside [0, {num_classes})")]
    LabelOutOfRange {
        index: usize,
        value: i64,
        num_classes: usize,
    },

    #[error("invalid label matrix: {0}")]
    InvalidLabels(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("layer {layer:?} has {found} rows but labels have {expected}")]
    RowMismatch {
        layer: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate depth_from_end {depth} (layers {first:?} and {second:?})")]
    DuplicateDepth {
        depth: usize,
        first: String,
        second: String,
    },

    #[error("row {0} has zero norm; cosine similarity is undefined")]
    ZeroNormRow(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("graph has {0} vertices; at least 2 are needed for nearest neighbors")]
    TooFewVertices(usize),

    #[error("the combinatorial Laplacian requires a symmetric graph")]
    AsymmetricGraph,

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("mixup index {index} out of range for {rows} rows")]
    PlanIndex { index: usize, rows: usize },

    #[error("{0}")]
    MissingLayer(String),

    #[error("{0}")]
    MissingMixup(String),

    #[error("graph {index}: {source}")]
    Graph {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
