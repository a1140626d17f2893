pub mod bench;
pub mod encode;
pub mod evaluate;
pub mod recommend;
pub mod synth;
pub mod train;

use std::path::Path;

use anyhow::Result;
use nodequant_core::config::Config;
use nodequant_core::graph::{load_graph, Graph};

/// Load the graph named by the config's `edges`/`attrs`/`labels` keys.
pub fn graph_from_config(cfg: &Config) -> Result<Graph> {
    let (edges, attrs, labels) = cfg.graph_paths()?;
    Ok(load_graph(
        &edges,
        attrs.as_deref(),
        labels.as_deref(),
    )?)
}

/// The config's input files, for manifest hashing.
pub fn input_paths(cfg: &Config) -> Result<Vec<std::path::PathBuf>> {
    let (edges, attrs, labels) = cfg.graph_paths()?;
    let mut out = vec![edges];
    out.extend(attrs);
    out.extend(labels);
    Ok(out)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| anyhow::anyhow!("cannot create {}: {e}", dir.display()))
}
