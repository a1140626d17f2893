use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use nodequant_core::synth::{generate, write_files, SbmConfig};

#[derive(Parser)]
pub struct Args {
    /// Output directory for edges.txt / attrs.txt / labels.txt / run.cfg.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    nodes: usize,
    #[arg(long, default_value_t = 5)]
    communities: usize,
    #[arg(long, default_value_t = 0.1)]
    p_in: f64,
    #[arg(long, default_value_t = 0.005)]
    p_out: f64,
    #[arg(long, default_value_t = 300)]
    attr_dim: usize,
    #[arg(long, default_value_t = 0.05)]
    attr_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

pub fn run(args: Args) -> Result<()> {
    let cfg = SbmConfig {
        nodes: args.nodes,
        communities: args.communities,
        p_in: args.p_in,
        p_out: args.p_out,
        attr_dim: args.attr_dim,
        attr_noise: args.attr_noise,
        label_noise: args.label_noise,
        seed: args.seed,
    };
    let graph = generate(&cfg)?;
    super::ensure_dir(&args.out)?;
    let files = write_files(&graph, &args.out)?;

    // A ready-to-edit run config pointing at the fixture.
    let cfg_path = args.out.join("run.cfg");
    let text = format!(
        "edges={}\nattrs={}\nlabels={}\nseed={}\n",
        files.edges.display(),
        files.attrs.display(),
        files.labels.display(),
        args.seed
    );
    std::fs::write(&cfg_path, text)?;

    println!(
        "generated {} nodes / {} edges / {} communities",
        graph.num_nodes(),
        graph.num_edges(),
        args.communities
    );
    println!("edges:  {}", files.edges.display());
    println!("attrs:  {}", files.attrs.display());
    println!("labels: {}", files.labels.display());
    println!("config: {}", cfg_path.display());
    Ok(())
}
