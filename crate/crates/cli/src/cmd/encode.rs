use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use ndarray::Array2;
use nodequant_core::codestore::{export_codes, storage_report};
use nodequant_core::graph::load_graph;
use nodequant_core::train::TrainedModel;

#[derive(Parser)]
pub struct Args {
    /// Trained checkpoint (NQCK).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    attrs: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output code store (NQCS).
    #[arg(long)]
    out: PathBuf,
    /// Also dump evaluation-mode continuous embeddings as a one-section
    /// NQCK file (section name `embeddings`), e.g. for `bench`.
    #[arg(long)]
    embeddings_out: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let graph = load_graph(&args.edges, args.attrs.as_deref(), args.labels.as_deref())?;
    let model = TrainedModel::load(&args.checkpoint)?;
    let store = export_codes(&graph, &model)?;
    store.save(&args.out)?;

    let report = storage_report(
        store.num_nodes(),
        store.num_books(),
        store.codebook_size(),
        store.embed_dim(),
    );
    println!(
        "encoded N={} nodes, M={} codebooks, K={} codewords, L={} dims ({} bits/node)",
        store.num_nodes(),
        store.num_books(),
        store.codebook_size(),
        store.embed_dim(),
        store.bytes_per_node() * 8
    );
    println!("{report}");
    println!("store: {}", args.out.display());

    if let Some(emb_path) = &args.embeddings_out {
        let emb: Array2<f32> = model.embed_all(&graph)?;
        nodequant_core::checkpoint::save(emb_path, &[("embeddings".to_string(), &emb)])?;
        println!("embeddings: {}", emb_path.display());
    }
    Ok(())
}
