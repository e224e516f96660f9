//! On-disk formats: CSR topology, in-degree arrays, sorted spill files,
//! partition manifests and model weights, plus edge-list ingestion and
//! deterministic synthetic graph generation.
//!
//! All integers are little-endian. Sections that are read with direct I/O
//! begin on 4096-byte boundaries.

mod csr;
mod ingest;
mod manifest;
mod spill;
mod synth;
mod weights;

pub use csr::{
    read_csr, read_in_degrees, write_csr, GraphCsr, TopologyReader, TopologySlice,
    IN_DEGREE_FILE, TOPOLOGY_FILE,
};
pub use ingest::{ingest_edge_list, GraphSummary};
pub use manifest::{
    partition_of, partition_ranges, read_matrix_set, write_dense_matrix_set, MatrixSet,
    MatrixSetMeta, PartitionManifest, MANIFEST_FILE, MATRIX_META_FILE,
};
pub use spill::{
    read_spill, read_spill_header, write_spill, Rows, RowsRef, SpillFile, SpillHeader,
    SPILL_HEADER_LEN,
};
pub use synth::{generate_synthetic, GraphKind, SyntheticSpec, FEATURES_DIR};
pub use weights::{read_weights, write_weights, LayerWeights, ModelKind, ModelWeights};

use std::path::Path;

use crate::error::{Error, Result};

pub type VertexId = u64;

pub const FORMAT_VERSION: u32 = 1;

/// Element type of stored feature/embedding rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Dtype {
    #[default]
    F32,
    F16,
}

impl Dtype {
    pub const fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 => 2,
        }
    }

    pub const fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F16 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F16),
            _ => None,
        }
    }

    pub fn row_bytes(self, dim: usize) -> u64 {
        (self.size() * dim) as u64
    }
}

impl std::fmt::Display for Dtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Dtype::F32 => "f32",
            Dtype::F16 => "f16",
        })
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f16" => Ok(Dtype::F16),
            other => Err(Error::Config(format!("unknown dtype {other:?}"))),
        }
    }
}

/// Little-endian field reader over a header byte slice.
pub(crate) struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> HeaderCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self {
            bytes,
            pos: 0,
            path,
        }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                needed: end as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.take::<4>()?;
        if &found != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                expected: *expected,
                found,
            });
        }
        Ok(())
    }

    pub(crate) fn version(&mut self) -> Result<()> {
        let found = self.u32()?;
        if found != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                path: self.path.to_path_buf(),
                expected: FORMAT_VERSION,
                found,
            });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }
}

pub(crate) fn truncated(path: &Path, needed: u64, actual: u64) -> Error {
    Error::Truncated {
        path: path.to_path_buf(),
        needed,
        actual,
    }
}
