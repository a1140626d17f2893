//! Text ingestion for edges, attributes and labels.
//!
//! Formats:
//! - edges: whitespace-separated integer pairs, `#` starts a comment;
//! - attributes: one line per node listing the indices of its 1-bits;
//! - labels: `node_id label_id[,label_id...]`.
//!
//! Node ids from the edge file are remapped to contiguous 0-based ids in
//! ascending order of the original id. Attribute lines are positional in
//! that remapped order; label lines name nodes by their original id.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{Graph, Labels, SparseAttrs};
use crate::error::{Error, Result};

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

fn parse_id(tok: &str, path: &Path, line_no: usize) -> Result<u64> {
    tok.parse::<u64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        msg: format!("expected a non-negative integer, got `{tok}`"),
    })
}

/// Load a graph from an edge file plus optional attribute and label files.
pub fn load_graph(
    edge_file: &Path,
    attr_file: Option<&Path>,
    label_file: Option<&Path>,
) -> Result<Graph> {
    let mut raw_edges: Vec<(u64, u64)> = Vec::new();
    for (idx, raw) in read_lines(edge_file)?.iter().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let (a, b) = match (toks.next(), toks.next(), toks.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::Parse {
                    path: edge_file.to_path_buf(),
                    line: line_no,
                    msg: "expected exactly two node ids".into(),
                })
            }
        };
        raw_edges.push((
            parse_id(a, edge_file, line_no)?,
            parse_id(b, edge_file, line_no)?,
        ));
    }
    if raw_edges.is_empty() {
        return Err(Error::Parse {
            path: edge_file.to_path_buf(),
            line: 0,
            msg: "edge file contains no edges".into(),
        });
    }

    // Remap original ids to contiguous 0-based ids, ascending.
    let mut ids: Vec<u64> = raw_edges
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() > u32::MAX as usize {
        return Err(Error::NodeOutOfBounds {
            id: *ids.last().unwrap(),
            n: ids.len(),
        });
    }
    let remap: HashMap<u64, u32> = ids
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new as u32))
        .collect();
    let n = ids.len();

    let edges: Vec<(u32, u32)> = raw_edges
        .iter()
        .map(|&(a, b)| (remap[&a], remap[&b]))
        .collect();
    let mut graph = Graph::from_edges(n, &edges)?;

    if let Some(path) = attr_file {
        let lines = read_lines(path)?;
        if lines.len() != n {
            return Err(Error::Dim(format!(
                "attribute file has {} lines but graph has {} nodes",
                lines.len(),
                n
            )));
        }
        let mut rows: Vec<Vec<u32>> = Vec::with_capacity(n);
        let mut dim: usize = 0;
        for (idx, raw) in lines.iter().enumerate() {
            let line = strip_comment(raw).trim();
            let mut row: Vec<u32> = Vec::new();
            for tok in line.split_whitespace() {
                let bit = parse_id(tok, path, idx + 1)?;
                if bit > u32::MAX as u64 {
                    return Err(Error::NodeOutOfBounds { id: bit, n: 0 });
                }
                dim = dim.max(bit as usize + 1);
                row.push(bit as u32);
            }
            row.sort_unstable();
            row.dedup();
            rows.push(row);
        }
        graph = graph.with_attrs(SparseAttrs { dim, rows })?;
    }

    if let Some(path) = label_file {
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut count: usize = 0;
        for (idx, raw) in read_lines(path)?.iter().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let mut toks = line.split_whitespace();
            let (node_tok, label_tok) = match (toks.next(), toks.next(), toks.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line_no,
                        msg: "expected `node_id label_id[,label_id...]`".into(),
                    })
                }
            };
            let orig = parse_id(node_tok, path, line_no)?;
            let node = *remap.get(&orig).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("node id {orig} does not appear in the edge file"),
            })?;
            for part in label_tok.split(',') {
                let label = parse_id(part, path, line_no)?;
                if label > u32::MAX as u64 {
                    return Err(Error::NodeOutOfBounds { id: label, n: 0 });
                }
                count = count.max(label as usize + 1);
                rows[node as usize].push(label as u32);
            }
        }
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
        }
        graph = graph.with_labels(Labels { count, rows })?;
    }

    Ok(graph)
}
