//! Truncated all-pairs shortest hop distances.
//!
//! Distances are computed with a per-source breadth-first search cut off at
//! `max_hop`; anything farther (or disconnected) is the `UNREACHABLE`
//! sentinel. Dense matrices are used up to [`DENSE_PATH_LIMIT`] nodes;
//! beyond that rows are recomputed on demand behind a small LRU cache.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use super::Graph;
use crate::error::{Error, Result};

/// Sentinel for hop counts beyond the truncation bound or disconnected pairs.
pub const UNREACHABLE: u8 = u8::MAX;

/// Largest node count for which the full N x N matrix is materialised.
pub const DENSE_PATH_LIMIT: usize = 50_000;

const NQPM_MAGIC: &[u8; 4] = b"NQPM";
const NQPM_VERSION: u16 = 1;

/// Dense truncated hop-distance matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathMatrix {
    n: usize,
    max_hop: u8,
    dist: Vec<u8>,
}

/// One BFS row: hop distances from `src` to every node, truncated at `max_hop`.
pub fn bfs_row(graph: &Graph, src: u32, max_hop: u8) -> Vec<u8> {
    let n = graph.num_nodes();
    let mut row = vec![UNREACHABLE; n];
    row[src as usize] = 0;
    let mut queue = VecDeque::with_capacity(64);
    queue.push_back(src);
    while let Some(u) = queue.pop_front() {
        let d = row[u as usize];
        if d >= max_hop {
            continue;
        }
        for &v in graph.neighbours(u) {
            if row[v as usize] == UNREACHABLE {
                row[v as usize] = d + 1;
                queue.push_back(v);
            }
        }
    }
    row
}

/// All-pairs truncated shortest paths, one BFS per source (sources run in
/// parallel; each source writes a disjoint row, so the result is
/// deterministic).
pub fn shortest_paths(graph: &Graph, max_hop: u8) -> Result<PathMatrix> {
    if max_hop < 1 {
        return Err(Error::Invalid("max_hop must be >= 1".into()));
    }
    if max_hop == UNREACHABLE {
        return Err(Error::Invalid("max_hop must be < 255".into()));
    }
    let n = graph.num_nodes();
    let rows: Vec<Vec<u8>> = (0..n as u32)
        .into_par_iter()
        .map(|src| bfs_row(graph, src, max_hop))
        .collect();
    let mut dist = Vec::with_capacity(n * n);
    for row in rows {
        dist.extend_from_slice(&row);
    }
    Ok(PathMatrix { n, max_hop, dist })
}

impl PathMatrix {
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn max_hop(&self) -> u8 {
        self.max_hop
    }

    pub fn get(&self, i: u32, j: u32) -> u8 {
        self.dist[i as usize * self.n + j as usize]
    }

    pub fn row(&self, i: u32) -> &[u8] {
        let start = i as usize * self.n;
        &self.dist[start..start + self.n]
    }

    /// Persist as the NQPM binary format: 16-byte header (magic, version,
    /// max_hop, node count), then the row-major hop bytes.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(NQPM_MAGIC).map_err(io)?;
        w.write_all(&NQPM_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.max_hop as u16).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.n as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&self.dist).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let mut header = [0u8; 16];
        r.read_exact(&mut header).map_err(io)?;
        if &header[0..4] != NQPM_MAGIC {
            return Err(Error::Format {
                format: "NQPM",
                msg: "bad magic".into(),
            });
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != NQPM_VERSION {
            return Err(Error::Format {
                format: "NQPM",
                msg: format!("unsupported version {version}"),
            });
        }
        let max_hop = u16::from_le_bytes([header[6], header[7]]) as u8;
        let n = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let mut dist = vec![0u8; n * n];
        r.read_exact(&mut dist).map_err(io)?;
        Ok(PathMatrix { n, max_hop, dist })
    }
}

/// Row access to hop distances that scales past dense storage: dense matrix
/// for small graphs, recomputed BFS rows behind an LRU cache otherwise.
pub enum PathAccess<'g> {
    Dense(PathMatrix),
    Lazy(LazyPaths<'g>),
}

pub struct LazyPaths<'g> {
    graph: &'g Graph,
    max_hop: u8,
    capacity: usize,
    stamp: u64,
    cache: HashMap<u32, (u64, Vec<u8>)>,
}

impl<'g> PathAccess<'g> {
    /// Dense below [`DENSE_PATH_LIMIT`] nodes, lazy above.
    pub fn build(graph: &'g Graph, max_hop: u8) -> Result<Self> {
        if graph.num_nodes() <= DENSE_PATH_LIMIT {
            Ok(PathAccess::Dense(shortest_paths(graph, max_hop)?))
        } else {
            Ok(PathAccess::Lazy(LazyPaths {
                graph,
                max_hop,
                capacity: 4096,
                stamp: 0,
                cache: HashMap::new(),
            }))
        }
    }

    pub fn from_dense(pm: PathMatrix) -> Self {
        PathAccess::Dense(pm)
    }

    pub fn lazy(graph: &'g Graph, max_hop: u8, capacity: usize) -> Self {
        PathAccess::Lazy(LazyPaths {
            graph,
            max_hop,
            capacity: capacity.max(1),
            stamp: 0,
            cache: HashMap::new(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        match self {
            PathAccess::Dense(pm) => pm.num_nodes(),
            PathAccess::Lazy(lazy) => lazy.graph.num_nodes(),
        }
    }

    pub fn max_hop(&self) -> u8 {
        match self {
            PathAccess::Dense(pm) => pm.max_hop(),
            PathAccess::Lazy(lazy) => lazy.max_hop,
        }
    }

    pub fn row(&mut self, i: u32) -> &[u8] {
        match self {
            PathAccess::Dense(pm) => pm.row(i),
            PathAccess::Lazy(lazy) => lazy.row(i),
        }
    }
}

impl<'g> LazyPaths<'g> {
    fn row(&mut self, i: u32) -> &[u8] {
        self.stamp += 1;
        let stamp = self.stamp;
        if !self.cache.contains_key(&i) {
            if self.cache.len() >= self.capacity {
                // Evict the least recently used row.
                if let Some((&old, _)) = self.cache.iter().min_by_key(|(_, (s, _))| *s) {
                    self.cache.remove(&old);
                }
            }
            let row = bfs_row(self.graph, i, self.max_hop);
            self.cache.insert(i, (stamp, row));
        }
        let entry = self.cache.get_mut(&i).unwrap();
        entry.0 = stamp;
        &entry.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> Graph {
        let edges: Vec<(u32, u32)> = (0..n as u32 - 1).map(|i| (i, i + 1)).collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn triangle_all_ones() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let pm = shortest_paths(&g, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0 } else { 1 };
                assert_eq!(pm.get(i, j), want);
            }
        }
    }

    #[test]
    fn path_graph_truncation() {
        let pm = shortest_paths(&path_graph(5), 2).unwrap();
        assert_eq!(pm.get(0, 2), 2);
        assert_eq!(pm.get(0, 3), UNREACHABLE);
        assert_eq!(pm.get(0, 0), 0);
        // Symmetry.
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(pm.get(i, j), pm.get(j, i));
            }
        }
    }

    #[test]
    fn distance_one_iff_edge() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let pm = shortest_paths(&g, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(pm.get(i, j) == 1, g.has_edge(i, j));
            }
        }
    }

    #[test]
    fn lazy_rows_match_dense() {
        let g = path_graph(9);
        let pm = shortest_paths(&g, 3).unwrap();
        let mut lazy = PathAccess::lazy(&g, 3, 2);
        for i in 0..9u32 {
            assert_eq!(lazy.row(i), pm.row(i), "row {i}");
        }
        // Revisit after eviction.
        assert_eq!(lazy.row(0), pm.row(0));
    }

    #[test]
    fn nqpm_round_trip() {
        let g = path_graph(6);
        let pm = shortest_paths(&g, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("paths.nqpm");
        pm.save(&path).unwrap();
        let loaded = PathMatrix::load(&path).unwrap();
        assert_eq!(loaded, pm);
        assert_eq!(loaded.max_hop(), 4);
    }
}
