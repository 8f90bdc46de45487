use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can report.
///
/// Each variant maps to a stable class name (see [`Error::class`]) and to one
/// of the CLI exit codes (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: cell `{cell}` in column `{column}` is not a number")]
    NonNumericCell {
        line: usize,
        column: String,
        cell: String,
    },
    #[error("line {line}: timestamp decreases ({prev} -> {next})")]
    NonMonotoneTime { line: usize, prev: f64, next: f64 },
    #[error("record has {0} samples, at least 2 required")]
    TooFewSamples(usize),
    #[error("line {line}: invalid sample: {reason}")]
    InvalidSample { line: usize, reason: String },
    #[error("manifest line {line}: record file {path:?} does not exist")]
    DanglingPath { line: usize, path: PathBuf },
    #[error("manifest line {line}: duplicate record path {path:?}")]
    DuplicatePath { line: usize, path: PathBuf },
    #[error("manifest line {line}: unknown label `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("manifest line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },

    #[error("zero time step between samples {0} and {1}")]
    DegenerateTime(usize, usize),
    #[error("channel `{0}` is not available")]
    MissingChannel(&'static str),

    #[error("invalid axis `{0}` for this grid")]
    InvalidAxis(String),
    #[error("invalid rotation angle {0} (allowed: 90, 180, 270)")]
    InvalidAngle(u32),
    #[error("grid is not square: extents {0:?}")]
    NonSquareGrid(Vec<usize>),
    #[error("plan invalid for {dim}D input: {reason}")]
    PlanInvalidForDimension { dim: usize, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("extent {extent} on axis {axis} is not divisible by the pooling window")]
    IndivisibleExtent { axis: usize, extent: usize },
    #[error("non-finite logit {0}")]
    NonFiniteLogit(f64),
    #[error("unsupported spatial rank {0} (expected 1, 2 or 3)")]
    UnsupportedRank(usize),
    #[error("input too small for the layer schedule: {0}")]
    ShapeUnderflow(String),

    #[error("class {0} has no records")]
    ClassMissing(&'static str),
    #[error("partition `{0}` is empty")]
    EmptyPartition(&'static str),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("loss diverged at epoch {epoch}: {loss}")]
    NumericDivergence { epoch: usize, loss: f64 },

    #[error("config: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(String),
    #[error("{path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Machine-readable class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "MissingColumn",
            Error::NonNumericCell { .. } => "NonNumericCell",
            Error::NonMonotoneTime { .. } => "NonMonotoneTime",
            Error::TooFewSamples(_) => "TooFewSamples",
            Error::InvalidSample { .. } => "InvalidSample",
            Error::DanglingPath { .. } => "DanglingPath",
            Error::DuplicatePath { .. } => "DuplicatePath",
            Error::UnknownLabel { .. } => "UnknownLabel",
            Error::MalformedManifest { .. } => "MalformedManifest",
            Error::DegenerateTime(..) => "DegenerateTime",
            Error::MissingChannel(_) => "MissingChannel",
            Error::InvalidAxis(_) => "InvalidAxis",
            Error::InvalidAngle(_) => "InvalidAngle",
            Error::NonSquareGrid(_) => "NonSquareGrid",
            Error::PlanInvalidForDimension { .. } => "PlanInvalidForDimension",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::IndivisibleExtent { .. } => "IndivisibleExtent",
            Error::NonFiniteLogit(_) => "NonFiniteLogit",
            Error::UnsupportedRank(_) => "UnsupportedRank",
            Error::ShapeUnderflow(_) => "ShapeUnderflow",
            Error::ClassMissing(_) => "ClassMissing",
            Error::EmptyPartition(_) => "EmptyPartition",
            Error::EmptyMatrix => "EmptyMatrix",
            Error::NumericDivergence { .. } => "NumericDivergence",
            Error::Config(_) => "ConfigError",
            Error::Format(_) => "FormatError",
            Error::Io { .. } => "IoError",
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::PlanInvalidForDimension { .. }
            | Error::UnsupportedRank(_)
            | Error::InvalidAxis(_)
            | Error::InvalidAngle(_) => 2,
            Error::NumericDivergence { .. } | Error::NonFiniteLogit(_) => 4,
            _ => 3,
        }
    }
}
