//! `cfag` command line: train / evaluate / ablate / cold-start / analyze.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error,
//! 3 numeric failure (non-finite values detected).

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use cfag::experiment::{
    run_ablation, run_analyze, run_cold_start, run_evaluate, run_train, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "cfag", version, about = "Ranking-based group identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override both the split seed and the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for evaluation (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load, split, train, evaluate on the test split and write artifacts.
    Train(Common),
    /// Evaluate an existing checkpoint on the config's test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train each ablation variant on a shared split and print the table.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Variants (full|no_pa|no_item|no_group|p1|m1|m2); defaults to the
        /// config's ablation list.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Cap per-user train groups at each threshold k, retrain and evaluate.
    #[command(name = "cold-start")]
    ColdStart {
        #[command(flatten)]
        common: Common,
        /// Thresholds; defaults to the config's cold_start list.
        #[arg(short, value_delimiter = ',')]
        k: Vec<usize>,
    },
    /// Contextual-embedding diagnostics for a trained checkpoint.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Histogram bin count.
        #[arg(long, default_value_t = 100)]
        bins: usize,
        /// Also write the item-context histogram.
        #[arg(long)]
        items: bool,
    },
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let text = fs::read_to_string(&common.config)
        .with_context(|| format!("reading config {}", common.config.display()))?;
    let mut cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| cfag::Error::Config(format!("{}: {e}", common.config.display())))?;
    if let Some(seed) = common.seed {
        cfg.split.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("initializing thread pool")?;
    }
    Ok(cfg)
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<cfag::Error>() {
        Some(cfag::Error::Config(_)) => 1,
        Some(cfag::Error::NonFinite { .. }) => 3,
        Some(_) => 2,
        // config file unreadable / unparsable before typed errors exist
        None => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            let out = run_train(&cfg)?;
            println!(
                "trained {} epochs; checkpoint {}",
                out.epochs_run,
                out.checkpoint.display()
            );
            if let Some(v) = out.best_val_ndcg10 {
                println!("best validation ndcg@10: {v:.4}");
            }
            for (i, k) in out.report.cutoffs.iter().enumerate() {
                println!(
                    "test recall@{k}: {:.4}  ndcg@{k}: {:.4}",
                    out.report.recall[i], out.report.ndcg[i]
                );
            }
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let report = run_evaluate(&cfg, &checkpoint)?;
            for (i, k) in report.cutoffs.iter().enumerate() {
                println!(
                    "test recall@{k}: {:.4}  ndcg@{k}: {:.4}",
                    report.recall[i], report.ndcg[i]
                );
            }
        }
        Command::Ablate { common, variants } => {
            let cfg = load_config(&common)?;
            let list = if variants.is_empty() {
                cfg.ablation.variants.clone()
            } else {
                variants
            };
            let rows = run_ablation(&cfg, &list)?;
            println!("variant,recall@10,ndcg@10,status");
            for r in rows {
                println!(
                    "{},{},{},{}",
                    r.variant,
                    r.recall10.map(|v| format!("{v:.4}")).unwrap_or_default(),
                    r.ndcg10.map(|v| format!("{v:.4}")).unwrap_or_default(),
                    r.status
                );
            }
        }
        Command::ColdStart { common, k } => {
            let cfg = load_config(&common)?;
            let ks = if k.is_empty() { cfg.cold_start.k.clone() } else { k };
            let rows = run_cold_start(&cfg, &ks)?;
            println!("k,train_ug_edges,recall@10,ndcg@10");
            for r in rows {
                println!(
                    "{},{},{:.4},{:.4}",
                    r.k, r.train_ug_edges, r.report.recall[0], r.report.ndcg[0]
                );
            }
        }
        Command::Analyze {
            common,
            checkpoint,
            bins,
            items,
        } => {
            let cfg = load_config(&common)?;
            let out = run_analyze(&cfg, &checkpoint, bins, items)?;
            println!("wrote {}", out.group_histogram.display());
            println!("wrote {}", out.group_correlation_csv.display());
            println!("wrote {}", out.group_correlation_json.display());
            if let Some(p) = out.item_histogram {
                println!("wrote {}", p.display());
            }
            match out.report.pearson_deciles {
                Some(p) => println!("pearson over deciles: {p:.4}"),
                None => println!("pearson over deciles: undefined (degenerate variance)"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
