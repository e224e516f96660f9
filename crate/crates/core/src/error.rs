use std::io;
use std::path::PathBuf;

use crate::storage::VertexId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated file, need {needed} bytes but found {actual}")]
    Truncated {
        path: PathBuf,
        needed: u64,
        actual: u64,
    },

    #[error("CSR offsets not monotone at vertex {vertex}: {left} > {right}")]
    NonMonotoneOffsets { vertex: u64, left: u64, right: u64 },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("{path}:{line}: malformed edge line {text:?}")]
    MalformedEdge {
        path: PathBuf,
        line: usize,
        text: String,
    },

    #[error("vertex id {id} out of range (num_vertices = {num_vertices})")]
    VertexOutOfRange { id: u64, num_vertices: u64 },

    #[error("spill ids must be strictly ascending (position {position})")]
    UnsortedIds { position: usize },

    #[error("spill id {id} outside partition range [{start}, {end})")]
    IdOutsidePartition { id: VertexId, start: u64, end: u64 },

    #[error("row data does not match ids: {0}")]
    RowShape(String),

    #[error("no spill covers vertex {0}")]
    CoverageGap(VertexId),

    #[error("vertex {0} present in more than one spill")]
    DuplicateVertex(VertexId),

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimMismatch {
        expected: usize,
        found: usize,
        context: &'static str,
    },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("illegal state transition for vertex {vertex}: {from:?} -> {to:?}")]
    IllegalTransition {
        vertex: VertexId,
        from: crate::orchestrator::VertexState,
        to: crate::orchestrator::VertexState,
    },

    #[error("memory manager contract violation: {0}")]
    Contract(String),

    #[error("cold store has no record for vertex {0}")]
    ColdMiss(VertexId),

    #[error("layer incomplete: {count} vertices never completed (first: {sample:?})")]
    MissingMessages { count: usize, sample: Vec<VertexId> },

    #[error("graph too large for in-memory oracle: estimated {estimate} bytes > limit {limit}")]
    OracleScale { estimate: u64, limit: u64 },

    #[error("outputs differ in shape: {0}")]
    ShapeMismatch(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("ablation outputs differ across knob values: {0}")]
    KnobSensitive(String),

    #[error("pipeline stage aborted because a peer stage failed")]
    Aborted,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Attaches a path to `io::Result`s.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
