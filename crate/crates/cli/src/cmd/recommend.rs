use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use nodequant_core::codestore::{build_tables, recommend_top_k, CodeStore};
use nodequant_core::graph::load_graph;

#[derive(Parser)]
pub struct Args {
    /// Code store (NQCS).
    #[arg(long)]
    store: PathBuf,
    /// Query node id.
    #[arg(long)]
    node: u32,
    #[arg(short, long, default_value_t = 50)]
    k: usize,
    /// Exclude the query's neighbours from results (training edges).
    #[arg(long)]
    exclude_edges: Option<PathBuf>,
    /// Write the TSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let store = CodeStore::load(&args.store)?;
    let tables = build_tables(&store.codebooks);
    let exclude: Vec<u32> = match &args.exclude_edges {
        Some(path) => {
            let graph = load_graph(path, None, None)?;
            anyhow::ensure!(
                graph.num_nodes() <= store.num_nodes(),
                "edge file names more nodes than the store holds"
            );
            graph.neighbours(args.node).to_vec()
        }
        None => Vec::new(),
    };
    let top = recommend_top_k(&store, &tables, args.node as usize, args.k, &exclude)?;
    let mut text = String::from("rank\tnode_id\tscore\n");
    for (rank, (node, score)) in top.items.iter().enumerate() {
        text.push_str(&format!("{}\t{node}\t{score:.6}\n", rank + 1));
    }
    if top.truncated {
        log::warn!("only {} candidates were available", top.items.len());
    }
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
