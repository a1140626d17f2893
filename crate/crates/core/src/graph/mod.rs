//! Attributed, optionally labelled graphs and the sampling machinery the
//! training loop draws from: truncated shortest-path distances, structural
//! triplets and semi-supervised label pairs.

mod io;
mod paths;
mod sample;

pub use io::load_graph;
pub use paths::{bfs_row, shortest_paths, PathAccess, PathMatrix, UNREACHABLE};
pub use sample::{sample_label_pairs, sample_triplet, LabelPair, LabelSubset, Triplet};

use crate::error::{Error, Result};

/// Undirected graph over contiguous node ids `0..N` with sparse binary
/// attributes and optional multi-label node labels.
///
/// Adjacency is kept as sorted neighbour lists; construction symmetrises,
/// deduplicates and drops self-loops so the type invariants hold for every
/// reachable value.
#[derive(Debug, Clone)]
pub struct Graph {
    adj: Vec<Vec<u32>>,
    num_edges: usize,
    attrs: Option<SparseAttrs>,
    labels: Option<Labels>,
}

/// Sparse binary attribute matrix: per node, the sorted indices of its 1-bits.
#[derive(Debug, Clone)]
pub struct SparseAttrs {
    pub dim: usize,
    pub rows: Vec<Vec<u32>>,
}

/// Per-node label-id sets. An empty set means the node is unlabelled.
#[derive(Debug, Clone)]
pub struct Labels {
    pub count: usize,
    pub rows: Vec<Vec<u32>>,
}

impl Labels {
    /// True iff the two nodes share at least one label.
    pub fn same_label(&self, i: u32, j: u32) -> bool {
        let (a, b) = (&self.rows[i as usize], &self.rows[j as usize]);
        // Both lists are sorted; merge-scan for an intersection.
        let (mut x, mut y) = (0, 0);
        while x < a.len() && y < b.len() {
            match a[x].cmp(&b[y]) {
                std::cmp::Ordering::Less => x += 1,
                std::cmp::Ordering::Greater => y += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    /// Ids of nodes with at least one label.
    pub fn labelled_nodes(&self) -> Vec<u32> {
        (0..self.rows.len() as u32)
            .filter(|&i| !self.rows[i as usize].is_empty())
            .collect()
    }
}

impl Graph {
    /// Build a graph from an undirected edge list. Self-loops are dropped
    /// and duplicates collapsed; `n` fixes the node count (isolated nodes
    /// are allowed).
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Result<Self> {
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a as usize >= n || b as usize >= n {
                return Err(Error::NodeOutOfBounds {
                    id: a.max(b) as u64,
                    n,
                });
            }
            if a == b {
                log::warn!("dropping self-loop on node {a}");
                continue;
            }
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
        let mut num_edges = 0;
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            num_edges += list.len();
        }
        Ok(Graph {
            adj,
            num_edges: num_edges / 2,
            attrs: None,
            labels: None,
        })
    }

    pub fn with_attrs(mut self, attrs: SparseAttrs) -> Result<Self> {
        if attrs.rows.len() != self.num_nodes() {
            return Err(Error::Dim(format!(
                "attribute rows ({}) != node count ({})",
                attrs.rows.len(),
                self.num_nodes()
            )));
        }
        for row in &attrs.rows {
            if row.iter().any(|&b| b as usize >= attrs.dim) {
                return Err(Error::Dim("attribute index >= declared dimension".into()));
            }
        }
        self.attrs = Some(attrs);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Labels) -> Result<Self> {
        if labels.rows.len() != self.num_nodes() {
            return Err(Error::Dim(format!(
                "label rows ({}) != node count ({})",
                labels.rows.len(),
                self.num_nodes()
            )));
        }
        for row in &labels.rows {
            if row.iter().any(|&l| l as usize >= labels.count) {
                return Err(Error::Invalid(format!(
                    "label id >= declared label count {}",
                    labels.count
                )));
            }
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn neighbours(&self, i: u32) -> &[u32] {
        &self.adj[i as usize]
    }

    pub fn degree(&self, i: u32) -> usize {
        self.adj[i as usize].len()
    }

    pub fn has_edge(&self, i: u32, j: u32) -> bool {
        self.adj[i as usize].binary_search(&j).is_ok()
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.adj.iter().enumerate().flat_map(|(i, list)| {
            let i = i as u32;
            list.iter().copied().filter(move |&j| i < j).map(move |j| (i, j))
        })
    }

    pub fn attrs(&self) -> Option<&SparseAttrs> {
        self.attrs.as_ref()
    }

    pub fn attr_dim(&self) -> Option<usize> {
        self.attrs.as_ref().map(|a| a.dim)
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    /// Drop the listed edges, returning a new graph with the same nodes,
    /// attributes and labels. Unknown edges are ignored.
    pub fn without_edges(&self, removed: &[(u32, u32)]) -> Graph {
        use std::collections::HashSet;
        let gone: HashSet<(u32, u32)> = removed
            .iter()
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect();
        let mut g = self.clone();
        let mut dropped = 0;
        for (i, list) in g.adj.iter_mut().enumerate() {
            let i = i as u32;
            let before = list.len();
            list.retain(|&j| !gone.contains(&(i.min(j), i.max(j))));
            dropped += before - list.len();
        }
        g.num_edges -= dropped / 2;
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_from_edges() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 3);
        assert!(g.has_edge(0, 1) && g.has_edge(1, 0));
    }

    #[test]
    fn self_loops_dropped_and_duplicates_merged() {
        let g = Graph::from_edges(2, &[(0, 0), (0, 1), (1, 0), (0, 1)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.neighbours(0), &[1]);
    }

    #[test]
    fn out_of_bounds_edge_rejected() {
        assert!(Graph::from_edges(2, &[(0, 5)]).is_err());
    }

    #[test]
    fn multi_label_intersection() {
        let labels = Labels {
            count: 4,
            rows: vec![vec![1, 2], vec![2, 3], vec![0]],
        };
        assert!(labels.same_label(0, 1));
        assert!(!labels.same_label(0, 2));
    }

    #[test]
    fn edge_removal_keeps_symmetry() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let h = g.without_edges(&[(2, 1)]);
        assert_eq!(h.num_edges(), 2);
        assert!(!h.has_edge(1, 2) && !h.has_edge(2, 1));
    }
}
