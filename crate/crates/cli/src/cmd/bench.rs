use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::Parser;
use ndarray::Array2;
use nodequant_core::codestore::{build_tables, score_all, storage_report, CodeStore};
use nodequant_core::seeds;
use rand::Rng;

#[derive(Parser)]
pub struct Args {
    /// Code store (NQCS).
    #[arg(long)]
    store: PathBuf,
    /// Float embeddings: a one-section NQCK file as written by
    /// `encode --embeddings-out`.
    #[arg(long)]
    embeddings: PathBuf,
    /// Number of query nodes to time.
    #[arg(long, default_value_t = 20)]
    queries: usize,
    /// Ranking depth kept per query.
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// Indices of the top-k scores, ties to the lower id. The same selection
/// runs on both representations so only scoring differs.
fn top_k_indices(scores: &[f32], skip: usize, k: usize) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..scores.len() as u32)
        .filter(|&i| i as usize != skip)
        .collect();
    let k = k.min(idx.len());
    idx.select_nth_unstable_by(k.saturating_sub(1), |&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx.sort_unstable_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    idx
}

fn l2_scores(embeddings: &Array2<f32>, query: usize) -> Vec<f32> {
    let q = embeddings.row(query);
    let mut out = vec![0f32; embeddings.nrows()];
    for (i, row) in embeddings.rows().into_iter().enumerate() {
        let mut ss = 0f32;
        for (&a, &b) in q.iter().zip(row.iter()) {
            let d = a - b;
            ss += d * d;
        }
        // Negative squared distance ranks identically to L2 distance.
        out[i] = -ss;
    }
    out
}

pub struct BenchOutcome {
    pub table_ms: f64,
    pub float_ms: f64,
    pub speedup: f64,
}

pub fn measure(
    store: &CodeStore,
    embeddings: &Array2<f32>,
    queries: &[usize],
    k: usize,
) -> Result<BenchOutcome> {
    let tables = build_tables(&store.codebooks);

    // Warm both paths once.
    let _ = top_k_indices(&score_all(store, &tables, queries[0])?, queries[0], k);
    let _ = top_k_indices(&l2_scores(embeddings, queries[0]), queries[0], k);

    let start = Instant::now();
    for &q in queries {
        let scores = score_all(store, &tables, q)?;
        std::hint::black_box(top_k_indices(&scores, q, k));
    }
    let table_ms = start.elapsed().as_secs_f64() * 1000.0 / queries.len() as f64;

    let start = Instant::now();
    for &q in queries {
        let scores = l2_scores(embeddings, q);
        std::hint::black_box(top_k_indices(&scores, q, k));
    }
    let float_ms = start.elapsed().as_secs_f64() * 1000.0 / queries.len() as f64;

    Ok(BenchOutcome {
        table_ms,
        float_ms,
        speedup: float_ms / table_ms,
    })
}

pub fn run(args: Args) -> Result<()> {
    if args.queries == 0 {
        bail!(nodequant_core::Error::Invalid(
            "bench needs at least one query".into()
        ));
    }
    let store = CodeStore::load(&args.store)?;
    let sections = nodequant_core::checkpoint::load(&args.embeddings)?;
    let embeddings = sections
        .get("embeddings")
        .ok_or_else(|| {
            anyhow::anyhow!(
                "{} has no `embeddings` section (write it with encode --embeddings-out)",
                args.embeddings.display()
            )
        })?
        .clone();
    if embeddings.nrows() != store.num_nodes() {
        bail!(nodequant_core::Error::Dim(format!(
            "store has {} nodes but embeddings have {} rows",
            store.num_nodes(),
            embeddings.nrows()
        )));
    }

    let mut rng = seeds::rng(args.seed);
    let queries: Vec<usize> = (0..args.queries)
        .map(|_| rng.random_range(0..store.num_nodes()))
        .collect();
    let outcome = measure(&store, &embeddings, &queries, args.k)?;

    let report = storage_report(
        store.num_nodes(),
        store.num_books(),
        store.codebook_size(),
        store.embed_dim(),
    );
    println!(
        "full ranking of {} nodes, mean over {} queries (top-{}):",
        store.num_nodes(),
        args.queries,
        args.k
    );
    println!("  table lookup: {:.4} ms/query", outcome.table_ms);
    println!("  float L2:     {:.4} ms/query", outcome.float_ms);
    println!("  speedup:      {:.1}x", outcome.speedup);
    println!("{report}");
    Ok(())
}
