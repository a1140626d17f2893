use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use nodequant_core::eval::split_edges;
use nodequant_core::train::{fit_early_stop, fit_from, write_log_csv, TrainedModel};

use crate::manifest::RunManifest;
use crate::KeyValue;

#[derive(Parser)]
pub struct Args {
    /// Run configuration file (key=value lines).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<KeyValue>,
    /// Output directory for checkpoint.nqck, train_log.csv and manifest.txt.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Resume from an existing checkpoint (input hashes are verified
    /// against the output directory's previous manifest, if present).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many epochs without validation-AUC improvement
    /// (requires a `split.*` config with a validation fraction).
    #[arg(long)]
    early_stop_patience: Option<u32>,
}

pub fn run(args: Args) -> Result<()> {
    let cfg = crate::config_from(Some(&args.config), &args.sets)?;
    let train_cfg = cfg.train_config()?;
    let graph = super::graph_from_config(&cfg)?;
    let inputs = super::input_paths(&cfg)?;
    let input_refs: Vec<&std::path::Path> = inputs.iter().map(|p| p.as_path()).collect();

    super::ensure_dir(&args.out)?;
    let manifest_path = args.out.join("manifest.txt");
    if args.resume.is_some() && manifest_path.exists() {
        RunManifest::verify_against(&manifest_path, &input_refs)
            .context("resume hash verification failed")?;
    }
    // The manifest lands before any artifact.
    RunManifest::new("train", train_cfg.seed, &input_refs, cfg.snapshot())?
        .write(&manifest_path)?;

    let resume_model = match &args.resume {
        Some(path) => Some(TrainedModel::load(path)?),
        None => None,
    };

    let split = cfg.split_spec()?;
    let (train_graph, val_edges) = match &split {
        Some(spec) => {
            let s = split_edges(&graph, spec)?;
            log::info!(
                "edge split: {} train / {} val / {} test edges",
                s.train.num_edges(),
                s.val.len(),
                s.test.len()
            );
            (s.train, s.val)
        }
        None => (graph, Vec::new()),
    };

    let mut output = match args.early_stop_patience {
        Some(patience) => {
            anyhow::ensure!(
                !val_edges.is_empty(),
                "early stopping needs a split.val fraction in the config"
            );
            anyhow::ensure!(
                resume_model.is_none(),
                "early stopping and --resume cannot be combined"
            );
            fit_early_stop(&train_graph, &train_cfg, &val_edges, patience)?
        }
        None => fit_from(&train_graph, &train_cfg, resume_model)?,
    };

    let ck_path = args.out.join("checkpoint.nqck");
    output.model.save(&ck_path)?;
    let log_path = args.out.join("train_log.csv");
    write_log_csv(&log_path, &output.log)?;

    if let Some(last) = output.log.last() {
        println!(
            "trained {} epochs: l_a={:.4} l_r={:.4} l_c={:.4} l_q={:.4}",
            output.log.len(),
            last.l_a,
            last.l_r,
            last.l_c,
            last.l_q
        );
    } else {
        println!("trained 0 epochs (checkpoint equals initialisation)");
    }
    println!("checkpoint: {}", ck_path.display());
    println!("log:        {}", log_path.display());
    Ok(())
}
