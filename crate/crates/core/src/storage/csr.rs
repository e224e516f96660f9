use std::fs;
use std::path::Path;

use super::{truncated, HeaderCursor, VertexId, FORMAT_VERSION};
use crate::dio::{self, align_up, AlignedBuf, DioFile, IoMode, ALIGN};
use crate::error::{Error, IoContext, Result};

pub const TOPOLOGY_FILE: &str = "topology.acsr";
pub const IN_DEGREE_FILE: &str = "in_degree.aind";

const CSR_MAGIC: &[u8; 4] = b"ACSR";
const IND_MAGIC: &[u8; 4] = b"AIND";

/// Out-edge topology in compressed sparse row form plus in-degrees.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GraphCsr {
    pub offsets: Vec<u64>,
    pub neighbors: Vec<VertexId>,
    pub in_degrees: Vec<u32>,
}

impl GraphCsr {
    /// Builds a CSR from an edge list. Neighbors are sorted per source and
    /// duplicate edges removed; self-loops are kept.
    pub fn from_edges(num_vertices: u64, edges: &mut Vec<(VertexId, VertexId)>) -> Result<Self> {
        for &(s, d) in edges.iter() {
            for id in [s, d] {
                if id >= num_vertices {
                    return Err(Error::VertexOutOfRange { id, num_vertices });
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let n = num_vertices as usize;
        let mut offsets = vec![0u64; n + 1];
        let mut in_degrees = vec![0u32; n];
        for &(s, d) in edges.iter() {
            offsets[s as usize + 1] += 1;
            in_degrees[d as usize] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let neighbors = edges.iter().map(|&(_, d)| d).collect();
        Ok(Self {
            offsets,
            neighbors,
            in_degrees,
        })
    }

    pub fn num_vertices(&self) -> u64 {
        self.in_degrees.len() as u64
    }

    pub fn num_edges(&self) -> u64 {
        self.neighbors.len() as u64
    }

    pub fn out_neighbors(&self, v: VertexId) -> &[VertexId] {
        let v = v as usize;
        &self.neighbors[self.offsets[v] as usize..self.offsets[v + 1] as usize]
    }

    pub fn out_degree(&self, v: VertexId) -> u64 {
        let v = v as usize;
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn max_in_degree(&self) -> u32 {
        self.in_degrees.iter().copied().max().unwrap_or(0)
    }

    /// In-neighbor lists (CSC view), each sorted ascending.
    pub fn in_neighbors(&self) -> Vec<Vec<VertexId>> {
        let mut lists: Vec<Vec<VertexId>> = self
            .in_degrees
            .iter()
            .map(|&d| Vec::with_capacity(d as usize))
            .collect();
        for u in 0..self.num_vertices() {
            for &v in self.out_neighbors(u) {
                lists[v as usize].push(u);
            }
        }
        lists
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.in_degrees.len();
        if self.offsets.len() != n + 1 {
            return Err(Error::InvalidGraph(format!(
                "offsets length {} != num_vertices + 1 = {}",
                self.offsets.len(),
                n + 1
            )));
        }
        check_offsets(&self.offsets, self.num_edges())?;
        let mut recount = vec![0u32; n];
        for u in 0..n {
            let list = self.out_neighbors(u as u64);
            for (i, &v) in list.iter().enumerate() {
                if v >= n as u64 {
                    return Err(Error::VertexOutOfRange {
                        id: v,
                        num_vertices: n as u64,
                    });
                }
                if i > 0 && list[i - 1] >= v {
                    return Err(Error::InvalidGraph(format!(
                        "neighbors of {u} not strictly ascending"
                    )));
                }
                recount[v as usize] += 1;
            }
        }
        if recount != self.in_degrees {
            return Err(Error::InvalidGraph(
                "in_degrees disagree with neighbor array".into(),
            ));
        }
        Ok(())
    }

    fn id_width(&self) -> u8 {
        if self.num_vertices() < u32::MAX as u64 {
            4
        } else {
            8
        }
    }
}

fn check_offsets(offsets: &[u64], num_edges: u64) -> Result<()> {
    if offsets.first().copied().unwrap_or(0) != 0 {
        return Err(Error::InvalidGraph("offsets[0] != 0".into()));
    }
    for (k, w) in offsets.windows(2).enumerate() {
        if w[0] > w[1] {
            return Err(Error::NonMonotoneOffsets {
                vertex: k as u64,
                left: w[0],
                right: w[1],
            });
        }
    }
    if offsets.last().copied().unwrap_or(0) != num_edges {
        return Err(Error::InvalidGraph(format!(
            "offsets[|V|] = {} but |E| = {num_edges}",
            offsets.last().copied().unwrap_or(0)
        )));
    }
    Ok(())
}

struct CsrLayout {
    num_vertices: u64,
    num_edges: u64,
    id_width: u8,
}

impl CsrLayout {
    fn offsets_start(&self) -> u64 {
        ALIGN as u64
    }
    fn neighbors_start(&self) -> u64 {
        self.offsets_start() + align_up((self.num_vertices + 1) * 8)
    }
    fn neighbors_end(&self) -> u64 {
        self.neighbors_start() + self.num_edges * self.id_width as u64
    }
}

/// Writes `topology.acsr` and `in_degree.aind` into `dir`.
pub fn write_csr(graph: &GraphCsr, dir: &Path) -> Result<()> {
    graph.validate()?;
    fs::create_dir_all(dir).at(dir)?;
    let width = graph.id_width();

    let mut buf = AlignedBuf::new();
    buf.extend_from_slice(CSR_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&graph.num_vertices().to_le_bytes());
    buf.extend_from_slice(&graph.num_edges().to_le_bytes());
    buf.extend_from_slice(&[width]);
    buf.pad_to_alignment();
    for &o in &graph.offsets {
        buf.extend_from_slice(&o.to_le_bytes());
    }
    buf.pad_to_alignment();
    for &v in &graph.neighbors {
        if width == 4 {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        } else {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf.pad_to_alignment();
    dio::write_file(&dir.join(TOPOLOGY_FILE), &buf, IoMode::Buffered)?;

    let mut buf = AlignedBuf::new();
    buf.extend_from_slice(IND_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&graph.num_vertices().to_le_bytes());
    buf.pad_to_alignment();
    for &d in &graph.in_degrees {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.pad_to_alignment();
    dio::write_file(&dir.join(IN_DEGREE_FILE), &buf, IoMode::Buffered)?;
    Ok(())
}

fn parse_csr_header(bytes: &[u8], path: &Path) -> Result<CsrLayout> {
    let mut cur = HeaderCursor::new(bytes, path);
    cur.magic(CSR_MAGIC)?;
    cur.version()?;
    let num_vertices = cur.u64()?;
    let num_edges = cur.u64()?;
    let id_width = cur.u8()?;
    if id_width != 4 && id_width != 8 {
        return Err(Error::InvalidGraph(format!("id width {id_width}")));
    }
    Ok(CsrLayout {
        num_vertices,
        num_edges,
        id_width,
    })
}

/// Reads the whole topology plus in-degrees written by [`write_csr`].
pub fn read_csr(dir: &Path) -> Result<GraphCsr> {
    let path = dir.join(TOPOLOGY_FILE);
    let bytes = fs::read(&path).at(&path)?;
    let layout = parse_csr_header(&bytes, &path)?;
    let len = bytes.len() as u64;
    let need = layout.neighbors_end();
    if len < need {
        return Err(truncated(&path, need, len));
    }
    let off_start = layout.offsets_start() as usize;
    let offsets: Vec<u64> = bytes[off_start..off_start + (layout.num_vertices as usize + 1) * 8]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    check_offsets(&offsets, layout.num_edges)?;
    let nb_start = layout.neighbors_start() as usize;
    let nb_bytes = &bytes[nb_start..layout.neighbors_end() as usize];
    let neighbors = decode_ids(nb_bytes, layout.id_width);

    let in_degrees = read_in_degrees(dir)?;
    if in_degrees.len() as u64 != layout.num_vertices {
        return Err(Error::InvalidGraph(format!(
            "in-degree file has {} vertices, topology has {}",
            in_degrees.len(),
            layout.num_vertices
        )));
    }
    let graph = GraphCsr {
        offsets,
        neighbors,
        in_degrees,
    };
    graph.validate()?;
    Ok(graph)
}

fn decode_ids(bytes: &[u8], width: u8) -> Vec<VertexId> {
    if width == 4 {
        bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as u64)
            .collect()
    } else {
        bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }
}

pub fn read_in_degrees(dir: &Path) -> Result<Vec<u32>> {
    let path = dir.join(IN_DEGREE_FILE);
    let bytes = fs::read(&path).at(&path)?;
    let mut cur = HeaderCursor::new(&bytes, &path);
    cur.magic(IND_MAGIC)?;
    cur.version()?;
    let n = cur.u64()?;
    let need = ALIGN as u64 + n * 4;
    if (bytes.len() as u64) < need {
        return Err(truncated(&path, need, bytes.len() as u64));
    }
    Ok(bytes[ALIGN..need as usize]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Topology for a contiguous vertex range, offsets rebased to zero.
#[derive(Debug, Clone, Default)]
pub struct TopologySlice {
    pub local_offsets: Vec<u64>,
    pub out_neighbors: Vec<VertexId>,
    pub bytes_fetched: u64,
}

/// Streams per-range slices of the topology file with positioned reads.
#[derive(Debug)]
pub struct TopologyReader {
    file: DioFile,
    layout: CsrLayout,
}

impl std::fmt::Debug for CsrLayout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CsrLayout")
            .field("num_vertices", &self.num_vertices)
            .field("num_edges", &self.num_edges)
            .field("id_width", &self.id_width)
            .finish()
    }
}

impl TopologyReader {
    pub fn open(dir: &Path, mode: IoMode) -> Result<Self> {
        let path = dir.join(TOPOLOGY_FILE);
        let mut file = DioFile::open(&path, mode)?;
        let head = file.read_range(0, ALIGN.min(file.len() as usize) as u64)?;
        let layout = parse_csr_header(head.bytes(), &path)?;
        if file.len() < layout.neighbors_end() {
            return Err(truncated(&path, layout.neighbors_end(), file.len()));
        }
        Ok(Self { file, layout })
    }

    pub fn num_vertices(&self) -> u64 {
        self.layout.num_vertices
    }

    pub fn num_edges(&self) -> u64 {
        self.layout.num_edges
    }

    /// Reads offsets and neighbors for `[start, end)`: two positioned reads.
    pub fn slice(&mut self, start: VertexId, end: VertexId) -> Result<TopologySlice> {
        assert!(start <= end && end <= self.layout.num_vertices);
        let off = self
            .file
            .read_range(self.layout.offsets_start() + start * 8, (end - start + 1) * 8)?;
        let raw: Vec<u64> = off
            .bytes()
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let base = raw[0];
        let last = *raw.last().unwrap();
        for (k, w) in raw.windows(2).enumerate() {
            if w[0] > w[1] {
                return Err(Error::NonMonotoneOffsets {
                    vertex: start + k as u64,
                    left: w[0],
                    right: w[1],
                });
            }
        }
        if last > self.layout.num_edges {
            return Err(Error::InvalidGraph(format!(
                "offset {last} beyond |E| = {}",
                self.layout.num_edges
            )));
        }
        let width = self.layout.id_width as u64;
        let nb = self.file.read_range(
            self.layout.neighbors_start() + base * width,
            (last - base) * width,
        )?;
        let out_neighbors = decode_ids(nb.bytes(), self.layout.id_width);
        if let Some(&bad) = out_neighbors
            .iter()
            .find(|&&v| v >= self.layout.num_vertices)
        {
            return Err(Error::VertexOutOfRange {
                id: bad,
                num_vertices: self.layout.num_vertices,
            });
        }
        Ok(TopologySlice {
            local_offsets: raw.iter().map(|&o| o - base).collect(),
            out_neighbors,
            bytes_fetched: off.fetched + nb.fetched,
        })
    }
}
