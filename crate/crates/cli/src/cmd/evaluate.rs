use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use ndarray::Array2;
use nodequant_core::codestore::{build_tables, CodeStore, LookupTables};
use nodequant_core::eval::{
    link_prediction_auc, node_classification, node_recommendation_ndcg, path_prediction,
    split_edges, CodeScorer, EmbeddingScorer, LrConfig, PairScorer, SplitSpec,
};
use nodequant_core::graph::{shortest_paths, Graph};
use nodequant_core::seeds;
use nodequant_core::train::TrainedModel;

use crate::KeyValue;

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Link,
    Class,
    Path,
    Ndcg,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum Repr {
    Continuous,
    Discrete,
    Both,
}

#[derive(Parser)]
pub struct Args {
    /// Run configuration naming the graph files (and optional split.*).
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<KeyValue>,
    /// Trained checkpoint (continuous embeddings + discrete reconstruction).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Code store (discrete similarity).
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, value_enum)]
    protocol: Protocol,
    #[arg(long, value_enum, default_value = "both")]
    repr: Repr,
    /// Output directory for result CSVs.
    #[arg(long, default_value = "eval")]
    out: PathBuf,
    /// Classification training fractions, in percent.
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10")]
    fractions: Vec<f64>,
    /// Path-prediction training ratios, in percent.
    #[arg(long, value_delimiter = ',', default_value = "20,40,60,80")]
    train_ratios: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 1000)]
    pairs_per_class: usize,
    /// NDCG cut-off.
    #[arg(long, default_value_t = 50)]
    k: usize,
    /// NDCG holdout fraction.
    #[arg(long, default_value_t = 0.10)]
    holdout: f64,
}

struct Reprs {
    /// (name, explicit vectors) pairs: continuous and/or reconstructed.
    vectors: Vec<(&'static str, Array2<f32>)>,
    /// Code store + tables for similarity-based protocols.
    codes: Option<(CodeStore, LookupTables)>,
}

fn load_reprs(args: &Args, graph: &Graph) -> Result<Reprs> {
    let mut vectors = Vec::new();
    let mut codes = None;
    let want_cont = matches!(args.repr, Repr::Continuous | Repr::Both);
    let want_disc = matches!(args.repr, Repr::Discrete | Repr::Both);

    if want_cont {
        let ck = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("--repr continuous needs --checkpoint"))?;
        let model = TrainedModel::load(ck)?;
        vectors.push(("continuous", model.embed_all(graph)?));
    }
    if want_disc {
        let store = match &args.store {
            Some(path) => CodeStore::load(path)?,
            None => {
                let ck = args.checkpoint.as_ref().ok_or_else(|| {
                    anyhow::anyhow!("--repr discrete needs --store or --checkpoint")
                })?;
                let model = TrainedModel::load(ck)?;
                nodequant_core::codestore::export_codes(graph, &model)?
            }
        };
        anyhow::ensure!(
            store.num_nodes() == graph.num_nodes(),
            "store holds {} nodes but the graph has {}",
            store.num_nodes(),
            graph.num_nodes()
        );
        if matches!(args.protocol, Protocol::Class | Protocol::Path) {
            // Feature-based protocols need explicit vectors.
            vectors.push(("discrete", store.reconstruct_embeddings()?));
        }
        let tables = build_tables(&store.codebooks);
        codes = Some((store, tables));
    }
    Ok(Reprs { vectors, codes })
}

fn write_csv(dir: &std::path::Path, name: &str, content: &str) -> Result<PathBuf> {
    super::ensure_dir(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn run(args: Args) -> Result<()> {
    let cfg = crate::config_from(Some(&args.config), &args.sets)?;
    let train_cfg = cfg.train_config()?;
    let graph = super::graph_from_config(&cfg)?;

    if matches!(args.protocol, Protocol::Class) && graph.labels().is_none() {
        bail!(nodequant_core::Error::Invalid(
            "node classification needs a labelled graph (no label file configured)".into()
        ));
    }

    let reprs = load_reprs(&args, &graph)?;
    let mut summary = String::new();
    let csv_path = match args.protocol {
        Protocol::Link => {
            let spec = cfg.split_spec()?.unwrap_or(SplitSpec {
                seed: train_cfg.seed,
                ..SplitSpec::default()
            });
            let split = split_edges(&graph, &spec)?;
            anyhow::ensure!(
                !split.test.is_empty(),
                "the split produced no held-out test edges"
            );
            let mut csv = String::from("repr,auc\n");
            for (name, emb) in &reprs.vectors {
                if *name == "discrete" {
                    continue; // link prediction scores codes via tables
                }
                let mut rng = seeds::rng_for(train_cfg.seed, seeds::NEG, 0);
                let auc = link_prediction_auc(
                    &EmbeddingScorer { embeddings: emb },
                    &graph,
                    &split.test,
                    &mut rng,
                )?;
                writeln!(csv, "{name},{auc:.6}")?;
                writeln!(summary, "link AUC ({name}): {auc:.4}")?;
            }
            if let Some((store, tables)) = &reprs.codes {
                let mut rng = seeds::rng_for(train_cfg.seed, seeds::NEG, 0);
                let auc = link_prediction_auc(
                    &CodeScorer { store, tables },
                    &graph,
                    &split.test,
                    &mut rng,
                )?;
                writeln!(csv, "discrete,{auc:.6}")?;
                writeln!(summary, "link AUC (discrete): {auc:.4}")?;
            }
            write_csv(&args.out, "link.csv", &csv)?
        }
        Protocol::Class => {
            let labels = graph.labels().expect("checked above");
            let fractions: Vec<f64> = args.fractions.iter().map(|f| f / 100.0).collect();
            let mut csv = String::from("repr,fraction,macro_f1,micro_f1\n");
            for (name, emb) in &reprs.vectors {
                let results = node_classification(
                    emb,
                    labels,
                    &fractions,
                    args.repeats,
                    train_cfg.seed,
                    &LrConfig::default(),
                )?;
                for r in &results {
                    writeln!(
                        csv,
                        "{name},{:.3},{:.6},{:.6}",
                        r.fraction, r.macro_f1, r.micro_f1
                    )?;
                    writeln!(
                        summary,
                        "classification ({name}) @{:.0}%: macro {:.4} micro {:.4}",
                        r.fraction * 100.0,
                        r.macro_f1,
                        r.micro_f1
                    )?;
                }
            }
            write_csv(&args.out, "class.csv", &csv)?
        }
        Protocol::Path => {
            let paths = shortest_paths(&graph, train_cfg.max_hop.max(5))?;
            let mut csv = String::from(
                "repr,train_ratio,macro_f1,micro_f1,avg_f1,f1_1,f1_2,f1_3,f1_4,f1_no\n",
            );
            for (name, emb) in &reprs.vectors {
                for &ratio_pct in &args.train_ratios {
                    let r = path_prediction(
                        emb,
                        &paths,
                        ratio_pct / 100.0,
                        args.pairs_per_class,
                        train_cfg.seed,
                        &LrConfig::default(),
                    )?;
                    writeln!(
                        csv,
                        "{name},{:.2},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                        r.train_ratio,
                        r.macro_f1,
                        r.micro_f1,
                        r.avg_f1,
                        r.per_class_f1[0],
                        r.per_class_f1[1],
                        r.per_class_f1[2],
                        r.per_class_f1[3],
                        r.per_class_f1[4]
                    )?;
                    writeln!(
                        summary,
                        "path prediction ({name}) @{ratio_pct:.0}%: macro {:.4} micro {:.4} avg {:.4}",
                        r.macro_f1, r.micro_f1, r.avg_f1
                    )?;
                }
            }
            write_csv(&args.out, "path.csv", &csv)?
        }
        Protocol::Ndcg => {
            let mut csv = String::from("repr,ndcg,evaluated,excluded\n");
            let mut run_one = |name: &str, scorer: &dyn PairScorer| -> Result<()> {
                let r = node_recommendation_ndcg(
                    scorer,
                    &graph,
                    args.holdout,
                    args.k,
                    args.repeats,
                    train_cfg.seed,
                )?;
                writeln!(csv, "{name},{:.6},{},{}", r.ndcg, r.evaluated, r.excluded)?;
                writeln!(
                    summary,
                    "NDCG@{} ({name}): {:.4} ({} evaluations, {} nodes excluded)",
                    args.k, r.ndcg, r.evaluated, r.excluded
                )?;
                Ok(())
            };
            for (name, emb) in &reprs.vectors {
                if *name == "discrete" {
                    continue;
                }
                run_one(name, &EmbeddingScorer { embeddings: emb })?;
            }
            if let Some((store, tables)) = &reprs.codes {
                run_one("discrete", &CodeScorer { store, tables })?;
            }
            write_csv(&args.out, "ndcg.csv", &csv)?
        }
    };

    print!("{summary}");
    println!("results: {}", csv_path.display());
    Ok(())
}
