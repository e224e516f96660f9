use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{write_csr, GraphCsr};
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphSummary {
    pub num_vertices: u64,
    pub num_edges: u64,
    pub max_in_degree: u32,
    pub self_loops: u64,
}

impl GraphSummary {
    pub fn of(graph: &GraphCsr) -> Self {
        let self_loops = (0..graph.num_vertices())
            .filter(|&u| graph.out_neighbors(u).binary_search(&u).is_ok())
            .count() as u64;
        Self {
            num_vertices: graph.num_vertices(),
            num_edges: graph.num_edges(),
            max_in_degree: graph.max_in_degree(),
            self_loops,
        }
    }
}

/// Parses a `src dst` edge list and writes its CSR into `out`.
/// Duplicate edges are dropped; self-loops survive.
pub fn ingest_edge_list(edges: &Path, num_vertices: u64, out: &Path) -> Result<GraphSummary> {
    let file = File::open(edges).at(edges)?;
    let mut list = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(edges)?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let malformed = || Error::MalformedEdge {
            path: edges.to_path_buf(),
            line: i + 1,
            text: line.clone(),
        };
        let mut parts = text.split_whitespace();
        let (Some(src), Some(dst), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(malformed());
        };
        let src: u64 = src.parse().map_err(|_| malformed())?;
        let dst: u64 = dst.parse().map_err(|_| malformed())?;
        list.push((src, dst));
    }
    let graph = GraphCsr::from_edges(num_vertices, &mut list)?;
    write_csr(&graph, out)?;
    Ok(GraphSummary::of(&graph))
}
